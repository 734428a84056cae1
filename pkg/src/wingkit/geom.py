"""Rigid-body geometry: Euler conversions, pinhole projection, ellipsoid
outlines, and similarity alignment of point sets.

Frame conventions (used by every module in the toolkit):

  World frame (right-handed): x forward along the runway centerline toward
  touchdown, y left, z up. Origin at the calibration-marker center.

  Body frame of a pose: x forward, y left, z up. The rotation matrix of a
  pose maps body coordinates to world coordinates and composes intrinsically
  as yaw about z, then pitch, then roll about x:

      R = Rz(yaw) @ Ry(-pitch) @ Rx(roll)

  so the body x axis points along (cos(pitch)cos(yaw), cos(pitch)sin(yaw),
  sin(pitch)): positive pitch raises the nose, positive yaw turns toward +y.

  Camera model: optical axis = body x axis. Image u grows to the right
  (-y body), v grows downward (-z body):

      u = cx + fx * (-y_b / x_b)      v = cy + fy * (-z_b / x_b)

  Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i+0.5, j+0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEPTH_EPS = 1e-6
_GIMBAL_TOL = 1e-9
_DUAL_CONIC_COND_LIMIT = 1e12


class GimbalDegenerate(ValueError):
    """Rotation matrix has pitch at the +-pi/2 singularity."""


class DegenerateConfiguration(ValueError):
    """Point set too small or too flat to determine an alignment."""


def wrap_angle(angle):
    """Wrap angle(s) to [-pi, pi). Works on scalars and arrays."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class Pose:
    """6-DoF pose: position in meters plus pitch/yaw/roll in radians."""

    position: np.ndarray
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)

    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.pitch, self.yaw, self.roll)

    def forward(self) -> np.ndarray:
        """Unit body x axis in world coordinates."""
        cp = math.cos(self.pitch)
        return np.array(
            [cp * math.cos(self.yaw), cp * math.sin(self.yaw), math.sin(self.pitch)]
        )


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass
class SimilarityTransform:
    """Scaled rigid transform: y = scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.scale * pts @ self.rotation.T + self.translation


@dataclass
class Ellipsoid:
    """Ellipsoid with semi_axes = (half_span, half_length, half_thickness)
    applied along the body (y, x, z) axes of `orientation`."""

    center: np.ndarray
    semi_axes: np.ndarray
    orientation: tuple = (0.0, 0.0, 0.0)  # (pitch, yaw, roll)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.semi_axes = np.asarray(self.semi_axes, dtype=float)

    def body_radii(self) -> np.ndarray:
        """Radii reordered onto the body (x, y, z) axes."""
        a, b, c = self.semi_axes
        return np.array([b, a, c])


@dataclass
class ImageEllipse:
    """Projected outline: center and semi-axes in pixels, angle of the
    first axis versus +u in radians."""

    center_u: float
    center_v: float
    semi_u: float
    semi_v: float
    angle: float

    @property
    def area(self) -> float:
        return math.pi * self.semi_u * self.semi_v

    def contains(self, u, v):
        """Vectorized point-in-ellipse test in pixel coordinates."""
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        du = np.asarray(u) - self.center_u
        dv = np.asarray(v) - self.center_v
        x = ca * du + sa * dv
        y = -sa * du + ca * dv
        return (x / self.semi_u) ** 2 + (y / self.semi_v) ** 2 <= 1.0


def euler_to_rotation(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rotation matrix for intrinsic yaw-pitch-roll (Z-Y-X) angles."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, -cy * sp * sr - sy * cr, -cy * sp * cr + sy * sr],
            [sy * cp, -sy * sp * sr + cy * cr, -sy * sp * cr - cy * sr],
            [sp, cp * sr, cp * cr],
        ]
    )


def rotation_to_euler(matrix: np.ndarray) -> tuple:
    """Inverse of euler_to_rotation away from the pitch singularity."""
    m = np.asarray(matrix, dtype=float)
    sp = m[2, 0]
    if abs(sp) > 1.0 - _GIMBAL_TOL:
        raise GimbalDegenerate(f"pitch at gimbal singularity (sin pitch = {sp:.12g})")
    pitch = math.asin(sp)
    yaw = math.atan2(m[1, 0], m[0, 0])
    roll = math.atan2(m[2, 1], m[2, 2])
    return pitch, yaw, roll


def world_to_camera(camera_pose: Pose, points: np.ndarray) -> np.ndarray:
    """World points to camera body coordinates (x depth, y left, z up)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return (pts - camera_pose.position) @ camera_pose.rotation()


def project_point(
    intrinsics: CameraIntrinsics, camera_pose: Pose, world_point
) -> tuple | None:
    """Pinhole projection of one world point; None when behind the camera."""
    pb = world_to_camera(camera_pose, world_point)[0]
    if pb[0] <= DEPTH_EPS:
        return None
    u = intrinsics.cx + intrinsics.fx * (-pb[1] / pb[0])
    v = intrinsics.cy + intrinsics.fy * (-pb[2] / pb[0])
    return (u, v)


def _camera_matrix(intrinsics: CameraIntrinsics, camera_pose: Pose) -> np.ndarray:
    """3x4 matrix mapping homogeneous world points to image points."""
    # Axis permutation body -> computer-vision camera frame (right, down, fwd).
    axes = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    r_cw = axes @ camera_pose.rotation().T
    t_cw = -r_cw @ camera_pose.position
    return intrinsics.matrix() @ np.hstack([r_cw, t_cw[:, None]])


def _ellipse_from_conic(conic: np.ndarray) -> ImageEllipse | None:
    c = np.asarray(conic, dtype=float)
    if np.trace(c[:2, :2]) < 0.0:
        c = -c
    m2 = c[:2, :2]
    try:
        center = np.linalg.solve(m2, -c[:2, 2])
    except np.linalg.LinAlgError:
        return None
    value = center @ m2 @ center + 2.0 * c[:2, 2] @ center + c[2, 2]
    evals, evecs = np.linalg.eigh(m2)
    if np.any(evals <= 0.0) or value >= 0.0:
        return None
    semi = np.sqrt(-value / evals)
    angle = math.atan2(evecs[1, 0], evecs[0, 0])
    return ImageEllipse(center[0], center[1], semi[0], semi[1], angle)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _fit_ellipse_from_samples(
    intrinsics: CameraIntrinsics, camera_pose: Pose, ellipsoid: Ellipsoid
) -> ImageEllipse | None:
    """Fallback for a numerically degenerate dual conic: project surface
    samples and fit an ellipse to their principal extents."""
    rot = euler_to_rotation(*ellipsoid.orientation)
    surface = _fibonacci_sphere(256) * ellipsoid.body_radii()
    world = surface @ rot.T + ellipsoid.center
    cam = world_to_camera(camera_pose, world)
    if np.any(cam[:, 0] <= DEPTH_EPS):
        return None
    u = intrinsics.cx + intrinsics.fx * (-cam[:, 1] / cam[:, 0])
    v = intrinsics.cy + intrinsics.fy * (-cam[:, 2] / cam[:, 0])
    pts = np.column_stack([u, v])
    mean = pts.mean(axis=0)
    cov = np.cov((pts - mean).T)
    evals, evecs = np.linalg.eigh(cov)
    if np.any(evals <= 0.0):
        return None
    proj = (pts - mean) @ evecs
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = mean + evecs @ ((lo + hi) / 2.0)
    semi = (hi - lo) / 2.0
    angle = math.atan2(evecs[1, 0], evecs[0, 0])
    return ImageEllipse(center[0], center[1], semi[0], semi[1], angle)


def project_ellipsoid(
    intrinsics: CameraIntrinsics, camera_pose: Pose, ellipsoid: Ellipsoid
) -> ImageEllipse | None:
    """Perspective outline of an ellipsoid as an image ellipse.

    Returns None when the ellipsoid is not fully in front of the image
    plane (bounding-sphere test) or the outline misses the frame entirely.
    Uses the dual-quadric to dual-conic mapping, with a surface-sampling
    fallback when the conic is ill conditioned.
    """
    depth = world_to_camera(camera_pose, ellipsoid.center)[0, 0]
    if depth <= float(np.max(ellipsoid.semi_axes)) + DEPTH_EPS:
        return None

    p = _camera_matrix(intrinsics, camera_pose)
    rot = euler_to_rotation(*ellipsoid.orientation)
    t = np.eye(4)
    t[:3, :3] = rot
    t[:3, 3] = ellipsoid.center
    q_dual = t @ np.diag(np.append(ellipsoid.body_radii() ** 2, -1.0)) @ t.T
    c_dual = p @ q_dual @ p.T

    ellipse = None
    if np.linalg.cond(c_dual) < _DUAL_CONIC_COND_LIMIT:
        ellipse = _ellipse_from_conic(np.linalg.inv(c_dual))
    if ellipse is None:
        ellipse = _fit_ellipse_from_samples(intrinsics, camera_pose, ellipsoid)
    if ellipse is None:
        return None

    # Frustum cull: axis-aligned bounding box of the ellipse vs the frame.
    ca, sa = math.cos(ellipse.angle), math.sin(ellipse.angle)
    hu = math.hypot(ellipse.semi_u * ca, ellipse.semi_v * sa)
    hv = math.hypot(ellipse.semi_u * sa, ellipse.semi_v * ca)
    if (
        ellipse.center_u + hu < 0.0
        or ellipse.center_u - hu > intrinsics.width
        or ellipse.center_v + hv < 0.0
        or ellipse.center_v - hv > intrinsics.height
    ):
        return None
    return ellipse


def rasterize_ellipse(ellipse: ImageEllipse, width: int, height: int) -> np.ndarray:
    """Binary occupancy grid: a pixel is set iff its center is inside."""
    mask = np.zeros((height, width), dtype=bool)
    ca, sa = math.cos(ellipse.angle), math.sin(ellipse.angle)
    hu = math.hypot(ellipse.semi_u * ca, ellipse.semi_v * sa)
    hv = math.hypot(ellipse.semi_u * sa, ellipse.semi_v * ca)
    i0 = max(0, int(math.floor(ellipse.center_u - hu - 1.0)))
    i1 = min(width, int(math.ceil(ellipse.center_u + hu + 1.0)))
    j0 = max(0, int(math.floor(ellipse.center_v - hv - 1.0)))
    j1 = min(height, int(math.ceil(ellipse.center_v + hv + 1.0)))
    if i0 >= i1 or j0 >= j1:
        return mask
    u = np.arange(i0, i1) + 0.5
    v = np.arange(j0, j1) + 0.5
    uu, vv = np.meshgrid(u, v)
    mask[j0:j1, i0:i1] = ellipse.contains(uu, vv)
    return mask


def kabsch_umeyama(source_points, target_points) -> SimilarityTransform:
    """Least-squares similarity transform taking source onto target.

    Minimizes sum ||s * R @ src_i + t - tgt_i||^2 with det(R) = +1.
    """
    src = np.atleast_2d(np.asarray(source_points, dtype=float))
    tgt = np.atleast_2d(np.asarray(target_points, dtype=float))
    if src.shape != tgt.shape:
        raise ValueError(f"point sets differ in shape: {src.shape} vs {tgt.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {n}")

    mu_src = src.mean(axis=0)
    mu_tgt = tgt.mean(axis=0)
    src_c = src - mu_src
    tgt_c = tgt - mu_tgt

    cov_src = src_c.T @ src_c / n
    rank = np.linalg.matrix_rank(cov_src, tol=1e-12 * max(1.0, np.abs(cov_src).max()))
    if rank < 2:
        raise DegenerateConfiguration("source points are collinear or coincident")

    sigma_sq = (src_c**2).sum() / n
    cross = tgt_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cross)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s[2] = -1.0
    rotation = u @ np.diag(s) @ vt
    scale = float((d * s).sum() / sigma_sq)
    translation = mu_tgt - scale * rotation @ mu_src
    return SimilarityTransform(rotation, translation, scale)
