"""Deterministic synthetic camera: leader rendering, ground-truth masks,
appearance randomization, and mask statistics.

No photorealism is attempted. The renderer's contract is geometric
fidelity (projection, occupancy, apparent size) plus controllable
appearance perturbations: a seeded procedural background keyed by the view
ray, and a flat-shaded leader ellipsoid with optional brightness shift and
salt-pepper corruption restricted to leader pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import geom
from .seeding import derived_rng

DESK_WIDTH = 160
DESK_HEIGHT = 120

# Leader planform is 70 cm span x 52 cm length; thickness is a convention.
DEFAULT_SEMI_AXES = (0.35, 0.26, 0.08)

_SKY_TOP = np.array([118.0, 148.0, 198.0])
_GROUND = np.array([92.0, 82.0, 62.0])
# Per-channel hash-noise amplitude (gray levels). Kept small enough that
# consecutive frames of a nominal maneuver stay well above the 0.7 SSIM
# safety threshold; severe corruption is injected explicitly in tests.
_NOISE_SPAN = 6


@dataclass
class Frame:
    """RGB image, 8 bits per channel, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class Mask:
    """Binary leader-occupancy mask, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError(f"expected (h, w) bit array, got {self.bits.shape}")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class LeaderAppearance:
    semi_axes: tuple = DEFAULT_SEMI_AXES
    scale_factor: float = 1.0
    brightness_offset: int = 0
    salt_pepper_fraction: float = 0.0


@dataclass(frozen=True)
class AppearanceRanges:
    """Domain-randomization draw ranges (min, max per knob)."""

    scale: tuple = (0.5, 2.0)
    brightness: tuple = (-40.0, 40.0)
    salt_pepper: tuple = (0.0, 0.3)


@dataclass
class RenderConfig:
    intrinsics: geom.CameraIntrinsics
    background_seed: int = 0
    leader_base_color: tuple = (62, 64, 74)


def desk_intrinsics(width: int = DESK_WIDTH, height: int = DESK_HEIGHT) -> geom.CameraIntrinsics:
    """Wide-FOV FPV-style intrinsics scaled to the frame size."""
    return geom.CameraIntrinsics(
        fx=0.575 * width, fy=0.575 * width, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )


def leader_ellipsoid(leader_pose: geom.Pose, appearance: LeaderAppearance) -> geom.Ellipsoid:
    semi = np.asarray(appearance.semi_axes, dtype=float) * appearance.scale_factor
    return geom.Ellipsoid(
        center=leader_pose.position,
        semi_axes=semi,
        orientation=(leader_pose.pitch, leader_pose.yaw, leader_pose.roll),
    )


def ground_truth_mask(
    config: RenderConfig,
    camera: geom.Pose,
    leader: geom.Pose,
    appearance: LeaderAppearance = LeaderAppearance(),
) -> Mask:
    """Rasterized outline of the leader ellipsoid; empty when not visible."""
    intr = config.intrinsics
    ellipse = geom.project_ellipsoid(intr, camera, leader_ellipsoid(leader, appearance))
    if ellipse is None:
        return Mask(np.zeros((intr.height, intr.width), dtype=bool))
    return Mask(geom.rasterize_ellipse(ellipse, intr.width, intr.height))


def _hash_noise(q: np.ndarray, seed: int) -> np.ndarray:
    """Integer-lattice hash noise in [-_NOISE_SPAN, _NOISE_SPAN], per channel."""
    x = q[..., 0].astype(np.uint64)
    y = q[..., 1].astype(np.uint64)
    z = q[..., 2].astype(np.uint64)
    h = (
        x * np.uint64(0x9E3779B97F4A7C15)
        ^ y * np.uint64(0xBF58476D1CE4E5B9)
        ^ z * np.uint64(0x94D049BB133111EB)
        ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    )
    out = np.empty(q.shape[:-1] + (3,), dtype=np.int64)
    for c in range(3):
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
        out[..., c] = (h % np.uint64(2 * _NOISE_SPAN + 1)).astype(np.int64) - _NOISE_SPAN
    return out


def _background(config: RenderConfig, camera: geom.Pose) -> np.ndarray:
    """Horizon gradient plus view-ray hash noise; float64 (h, w, 3)."""
    intr = config.intrinsics
    u = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
    v = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
    uu, vv = np.meshgrid(u, v)
    d_body = np.stack([np.ones_like(uu), -uu, -vv], axis=-1)
    d_body /= np.linalg.norm(d_body, axis=-1, keepdims=True)
    d_world = d_body @ camera.rotation().T

    elev = np.clip(d_world[..., 2], -1.0, 1.0)
    t = np.clip(0.5 + 1.5 * elev, 0.0, 1.0)  # sharpened horizon blend
    base = _GROUND + t[..., None] * (_SKY_TOP - _GROUND)

    q = np.floor(d_world * 48.0).astype(np.int64)
    return base + _hash_noise(q, config.background_seed)


def render_scene(
    config: RenderConfig,
    camera: geom.Pose,
    leader: geom.Pose | None,
    appearance: LeaderAppearance = LeaderAppearance(),
) -> tuple:
    """Render one (Frame, Mask) pair. Bit-deterministic in its inputs."""
    intr = config.intrinsics
    img = _background(config, camera)

    if leader is None:
        mask = Mask(np.zeros((intr.height, intr.width), dtype=bool))
        return Frame(np.clip(img, 0.0, 255.0).astype(np.uint8)), mask

    mask = ground_truth_mask(config, camera, leader, appearance)
    bits = mask.bits
    color = np.clip(
        np.asarray(config.leader_base_color, dtype=float) + appearance.brightness_offset,
        0.0,
        255.0,
    )
    img[bits] = color

    n = int(bits.sum())
    if n and appearance.salt_pepper_fraction > 0.0:
        rng = derived_rng(
            config.background_seed,
            "salt-pepper",
            *camera.position, camera.pitch, camera.yaw, camera.roll,
            *leader.position, leader.pitch, leader.yaw, leader.roll,
            appearance.scale_factor, appearance.salt_pepper_fraction,
        )
        draw = rng.uniform(size=n)
        shade = img[bits]
        shade[draw < appearance.salt_pepper_fraction / 2.0] = 0.0
        shade[
            (draw >= appearance.salt_pepper_fraction / 2.0)
            & (draw < appearance.salt_pepper_fraction)
        ] = 255.0
        img[bits] = shade

    return Frame(np.clip(img, 0.0, 255.0).astype(np.uint8)), mask


def randomize_appearance(
    base: LeaderAppearance, ranges: AppearanceRanges, seed: int
) -> LeaderAppearance:
    """Seeded uniform draw of the appearance knobs within `ranges`."""
    rng = np.random.default_rng(seed)
    return replace(
        base,
        scale_factor=float(rng.uniform(*ranges.scale)),
        brightness_offset=int(round(rng.uniform(*ranges.brightness))),
        salt_pepper_fraction=float(rng.uniform(*ranges.salt_pepper)),
    )


@dataclass(frozen=True)
class MaskStats:
    centroid_u: float
    centroid_v: float
    area: int
    bbox: tuple  # (u_min, v_min, u_max, v_max), inclusive pixel indices


def mask_stats(mask: Mask) -> MaskStats | None:
    """First moments and bounding box of the set bits; None when empty."""
    vs, us = np.nonzero(mask.bits)
    if us.size == 0:
        return None
    return MaskStats(
        centroid_u=float(us.mean()),
        centroid_v=float(vs.mean()),
        area=int(us.size),
        bbox=(int(us.min()), int(vs.min()), int(us.max()), int(vs.max())),
    )


def apparent_leader_area(
    intrinsics: geom.CameraIntrinsics, appearance: LeaderAppearance, distance: float
) -> float:
    """Projected outline area (px^2) of the leader seen dead astern at range."""
    camera = geom.Pose(np.zeros(3))
    leader = geom.Pose(np.array([distance, 0.0, 0.0]))
    ellipse = geom.project_ellipsoid(
        intrinsics, camera, leader_ellipsoid(leader, appearance)
    )
    return 0.0 if ellipse is None else ellipse.area


def write_ppm(frame: Frame, path) -> None:
    """Binary PPM (P6)."""
    with open(path, "wb") as f:
        f.write(f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        f.write(frame.pixels.tobytes())


def read_ppm(path) -> Frame:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError(f"not a binary PPM file: magic {magic!r}")
        dims = f.readline().split()
        f.readline()  # maxval
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return Frame(data.reshape(h, w, 3))


def write_pgm(mask: Mask, path) -> None:
    """Binary PGM (P5), 0/255."""
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        f.write((mask.bits.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> Mask:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: magic {magic!r}")
        dims = f.readline().split()
        f.readline()
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return Mask(data.reshape(h, w) > 127)
