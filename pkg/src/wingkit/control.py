"""Expert guidance laws (waypoint, leader-follower, landing), the
mask-statistics vision policy stand-in, expert-noise injection, and the
fixed-length control history buffer.

All controllers are pure functions of their inputs and always return
controls inside the command box (clamping is total). Gains below are tuned
against the reference dynamics parameters and pinned here so results are
reproducible; the dynamics convention makes positive roll turn toward +y
(left), so a target to the right commands negative aileron.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import geom
from .dynamics import Control, State, wrap_angle
from .percept import MaskStats
from .seeding import derived_rng

HISTORY_LENGTH = 30
LOCK_MIN_AREA = 4  # px: per-frame visual-lock criterion on the leader mask

FLARE_SINK_RATE = 0.35  # m/s commanded descent during flare
GEAR_HEIGHT = 0.05  # m: wheels touch when z falls to this height


@dataclass(frozen=True)
class GuidanceGains:
    k_heading: float = 1.2  # rad roll command per rad heading error
    k_alt: float = 0.15  # rad pitch per m altitude error
    k_speed: float = 0.12  # throttle per m/s speed error
    target_speed: float = 8.0
    max_pitch_cmd: float = 0.35
    capture_radius: float = 2.0
    trim_throttle: float = 0.8  # throttle holding target_speed level
    k_closure: float = 0.4  # (m/s) of speed bias per m of range error
    standoff: float = 3.0


DEFAULT_GAINS = GuidanceGains()


@dataclass(frozen=True)
class ControlHistory:
    """Ring of the last HISTORY_LENGTH controls; index -1 is the newest."""

    controls: tuple = ()

    def __post_init__(self):
        if not self.controls:
            object.__setattr__(self, "controls", (Control(),) * HISTORY_LENGTH)
        elif len(self.controls) != HISTORY_LENGTH:
            raise ValueError(f"history must hold {HISTORY_LENGTH} controls")

    def newest(self) -> Control:
        return self.controls[-1]

    def as_array(self) -> np.ndarray:
        return np.array([c.as_array() for c in self.controls])


def history_push(history: ControlHistory, control: Control) -> ControlHistory:
    return ControlHistory(history.controls[1:] + (control,))


def expert_waypoint_control(state: State, waypoint, gains: GuidanceGains = DEFAULT_GAINS) -> Control:
    """Bearing-chasing guidance toward a single waypoint."""
    wp = np.asarray(waypoint, dtype=float)
    delta = wp - state.position
    if math.hypot(delta[0], delta[1]) < 1e-9:
        yaw_cmd = state.yaw
    else:
        yaw_cmd = math.atan2(delta[1], delta[0])
    heading_err = float(wrap_angle(yaw_cmd - state.yaw))
    return Control(
        throttle=min(max(gains.trim_throttle + gains.k_speed * (gains.target_speed - state.speed), 0.0), 1.0),
        aileron=min(max(gains.k_heading * heading_err - state.roll, -1.0), 1.0),
        pitch_cmd=min(max(gains.k_alt * (wp[2] - state.position[2]), -gains.max_pitch_cmd), gains.max_pitch_cmd),
        yaw_cmd=yaw_cmd,
    )


def expert_follower_control(
    follower: State, leader: State, standoff: float, gains: GuidanceGains = DEFAULT_GAINS
) -> Control:
    """Track a point `standoff` meters behind the leader along its heading.

    Speed is biased by the range error so the follower closes onto the
    standoff distance instead of the leader itself.
    """
    heading = np.array([math.cos(leader.yaw), math.sin(leader.yaw), 0.0])
    target = leader.position - standoff * heading
    rng = float(np.linalg.norm(leader.position - follower.position))
    biased = replace(gains, target_speed=gains.target_speed + gains.k_closure * (rng - standoff))

    delta = target - follower.position
    if math.hypot(delta[0], delta[1]) < gains.capture_radius:
        # Near (or past) the target point the bearing to it degenerates and
        # would command hard reversals; fly formation on the leader's
        # heading and let the speed bias regulate the gap instead.
        ctrl = expert_waypoint_control(follower, target, biased)
        heading_err = float(wrap_angle(leader.yaw - follower.yaw))
        return replace(
            ctrl,
            yaw_cmd=leader.yaw,
            aileron=min(max(gains.k_heading * heading_err - follower.roll, -1.0), 1.0),
        )
    return expert_waypoint_control(follower, target, biased)


@dataclass(frozen=True)
class RunwaySpec:
    """Landing pad and approach geometry; centerline along world x."""

    centerline_start: tuple = (0.0, 0.0, 0.0)
    centerline_end: tuple = (13.0, 0.0, 0.0)
    pad_width: float = 2.0
    pad_height: float = 0.1
    touchdown_target: tuple = (3.0, 0.0, 0.0)
    glide_slope: float = math.radians(4.3)
    flare_altitude: float = 0.3
    lookahead: float = 6.0

    def direction(self) -> np.ndarray:
        d = np.asarray(self.centerline_end, float) - np.asarray(self.centerline_start, float)
        return d / np.linalg.norm(d)

    @property
    def pad_length(self) -> float:
        return float(
            np.linalg.norm(
                np.asarray(self.centerline_end, float) - np.asarray(self.centerline_start, float)
            )
        )

    def lateral_offset(self, position) -> float:
        """Signed cross-track distance from the centerline (+ = left)."""
        rel = np.asarray(position, float) - np.asarray(self.centerline_start, float)
        d = self.direction()
        return float(rel[1] * d[0] - rel[0] * d[1])

    def along_track(self, position) -> float:
        rel = np.asarray(position, float) - np.asarray(self.centerline_start, float)
        return float(rel[:2] @ self.direction()[:2])

    def contains_touchdown(self, position) -> bool:
        s = self.along_track(position)
        return 0.0 <= s <= self.pad_length and abs(self.lateral_offset(position)) <= self.pad_width / 2.0


DEFAULT_RUNWAY = RunwaySpec()


class LandingPhase:
    APPROACH = "approach"
    FLARE = "flare"
    ROLLOUT = "rollout"


def landing_phase(state: State, runway: RunwaySpec = DEFAULT_RUNWAY) -> str:
    z = state.position[2]
    if z <= GEAR_HEIGHT:
        return LandingPhase.ROLLOUT
    if z <= runway.flare_altitude:
        return LandingPhase.FLARE
    return LandingPhase.APPROACH


def expert_landing_control(
    state: State, runway: RunwaySpec = DEFAULT_RUNWAY, gains: GuidanceGains = DEFAULT_GAINS
) -> Control:
    """Three-phase landing law: glide-slope approach, gentle-sink flare,
    rollout.

    The approach tracks the glide-slope line to the touchdown target
    (lateral: bearing to a centerline point `lookahead` meters ahead;
    vertical: slope feedforward plus altitude-error feedback). The flare
    idles the throttle and commands a fixed gentle sink rate down to the
    gear height: with the flight path slaved to pitch, a nose-up pitch
    target would arrest the descent in midair, so the flare commands the
    shallow descent a real flare produces instead of the nose-up attitude
    that produces it.
    """
    phase = landing_phase(state, runway)
    d = runway.direction()
    start = np.asarray(runway.centerline_start, float)
    aim = start + (runway.along_track(state.position) + runway.lookahead) * d
    delta = aim - state.position
    yaw_cmd = math.atan2(delta[1], delta[0])
    heading_err = float(wrap_angle(yaw_cmd - state.yaw))
    aileron = min(max(gains.k_heading * heading_err - state.roll, -1.0), 1.0)

    if phase == LandingPhase.ROLLOUT:
        return Control(
            throttle=0.0,
            aileron=min(max(-state.roll, -1.0), 1.0),
            pitch_cmd=0.0,
            yaw_cmd=state.yaw,
        )

    if phase == LandingPhase.FLARE:
        sink_ratio = min(FLARE_SINK_RATE / max(state.speed, 1.0), 0.5)
        return Control(
            throttle=0.0,
            aileron=aileron,
            pitch_cmd=max(-math.asin(sink_ratio), -gains.max_pitch_cmd),
            yaw_cmd=yaw_cmd,
        )

    td = np.asarray(runway.touchdown_target, float)
    remaining = max(runway.along_track(td) - runway.along_track(state.position), 0.0)
    z_slope = td[2] + math.tan(runway.glide_slope) * remaining
    pitch_cmd = min(
        max(gains.k_alt * (z_slope - state.position[2]) - runway.glide_slope, -gains.max_pitch_cmd),
        gains.max_pitch_cmd,
    )
    return Control(
        throttle=min(max(gains.trim_throttle + gains.k_speed * (gains.target_speed - state.speed), 0.0), 1.0),
        aileron=aileron,
        pitch_cmd=pitch_cmd,
        yaw_cmd=yaw_cmd,
    )


@dataclass(frozen=True)
class VisionFollowerGains:
    """Gains for the mask-centroid stand-in policy.

    `k_bearing` is the per-call fraction of the pixel-derived bearing
    folded into the heading command; image-right is world-right (negative
    yaw), so both steering terms carry a negative sign. `k_aileron_damp`
    feeds back the previous aileron command as a roll proxy, damping the
    20 Hz bearing loop.
    """

    k_bearing: float = 0.12
    k_aileron: float = 0.8
    k_aileron_damp: float = 0.5
    k_pitch: float = 0.9
    k_area: float = 0.35  # throttle per unit relative area error
    reference_area: float = 300.0  # px^2 apparent size at the desired range
    guidance: GuidanceGains = DEFAULT_GAINS


def vision_follower_control(
    stats: MaskStats | None,
    history: ControlHistory,
    intrinsics: geom.CameraIntrinsics,
    gains: VisionFollowerGains,
) -> Control:
    """Steer the mask centroid to the image center; hold apparent size.

    The heading reference is the newest commanded heading in the history
    (the policy never sees the true state). With an empty mask the last
    command is held with the throttle trimmed.
    """
    g = gains.guidance
    last = history.newest()
    if stats is None:
        return replace(last, throttle=g.trim_throttle).clamped()

    bearing_right = (stats.centroid_u - intrinsics.cx) / intrinsics.fx
    elevation_down = (stats.centroid_v - intrinsics.cy) / intrinsics.fy
    yaw_cmd = float(wrap_angle(last.yaw_cmd - gains.k_bearing * bearing_right))
    area_err = (gains.reference_area - stats.area) / gains.reference_area
    return Control(
        throttle=min(max(g.trim_throttle + gains.k_area * area_err, 0.0), 1.0),
        aileron=min(
            max(-gains.k_aileron * bearing_right - gains.k_aileron_damp * last.aileron, -1.0),
            1.0,
        ),
        pitch_cmd=min(max(-gains.k_pitch * elevation_down, -g.max_pitch_cmd), g.max_pitch_cmd),
        yaw_cmd=yaw_cmd,
    )


def inject_expert_noise(control: Control, sigma, seed: int) -> Control:
    """Add per-channel Gaussian noise, then re-clamp to the command box."""
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (4,))
    if np.any(sig < 0.0):
        raise ValueError("noise sigma must be non-negative")
    if not np.any(sig > 0.0):
        return control
    rng = derived_rng(seed, "expert-noise", *control.as_array(), *sig)
    noisy = control.as_array() + rng.normal(0.0, 1.0, size=4) * sig
    return Control.from_array(noisy).clamped()


def gains_to_dict(gains: GuidanceGains) -> dict:
    return {
        "k_heading": gains.k_heading,
        "k_alt": gains.k_alt,
        "k_speed": gains.k_speed,
        "target_speed": gains.target_speed,
        "max_pitch_cmd": gains.max_pitch_cmd,
        "capture_radius": gains.capture_radius,
        "trim_throttle": gains.trim_throttle,
        "k_closure": gains.k_closure,
        "standoff": gains.standoff,
    }


def gains_from_dict(values: dict) -> GuidanceGains:
    base = gains_to_dict(DEFAULT_GAINS)
    base.update({k: float(v) for k, v in values.items() if k in base})
    return GuidanceGains(**base)


def runway_to_dict(runway: RunwaySpec) -> dict:
    return {
        "centerline_start_x": runway.centerline_start[0],
        "centerline_start_y": runway.centerline_start[1],
        "centerline_end_x": runway.centerline_end[0],
        "centerline_end_y": runway.centerline_end[1],
        "pad_width": runway.pad_width,
        "pad_height": runway.pad_height,
        "touchdown_x": runway.touchdown_target[0],
        "glide_slope": runway.glide_slope,
        "flare_altitude": runway.flare_altitude,
        "lookahead": runway.lookahead,
    }


def runway_from_dict(values: dict) -> RunwaySpec:
    base = runway_to_dict(DEFAULT_RUNWAY)
    base.update({k: float(v) for k, v in values.items() if k in base})
    return RunwaySpec(
        centerline_start=(base["centerline_start_x"], base["centerline_start_y"], 0.0),
        centerline_end=(base["centerline_end_x"], base["centerline_end_y"], 0.0),
        pad_width=base["pad_width"],
        pad_height=base["pad_height"],
        touchdown_target=(base["touchdown_x"], base["centerline_start_y"], 0.0),
        glide_slope=base["glide_slope"],
        flare_altitude=base["flare_altitude"],
        lookahead=base["lookahead"],
    )


def save_config_kv(path, gains: GuidanceGains = DEFAULT_GAINS,
                   runway: RunwaySpec = DEFAULT_RUNWAY) -> None:
    """Write gains and runway geometry as a flat key=value file (SI units:
    meters, radians, m/s; gains in the units stated on GuidanceGains)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# guidance gains\n")
        for key, value in gains_to_dict(gains).items():
            f.write(f"{key} = {value:.9g}\n")
        f.write("# runway geometry\n")
        for key, value in runway_to_dict(runway).items():
            f.write(f"{key} = {value:.9g}\n")


def load_config_kv(path) -> tuple:
    """Read (GuidanceGains, RunwaySpec) back from a flat key=value file;
    missing keys keep their defaults."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return gains_from_dict(values), runway_from_dict(values)
