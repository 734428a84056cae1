"""Scenario definitions, trial execution, metrics, perturbation sweeps,
and imitation-learning dataset export.

Tracking trials fly a leader over deterministic maneuver waypoints while
the follower runs a policy (ground-truth expert or the mask-centroid
vision stand-in); landing trials integrate until touchdown or timeout.
SR counts trials where the leader mask stays locked on every frame; ATE is
the mean leader-follower displacement minus the initial offset (signed and
possibly negative when the follower closes below it); ART is wall-clock
per-frame policy time; ALD is the unsigned cross-track distance at
touchdown. Everything except ART is bit-deterministic per seed.
"""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import control as ctl
from . import dynamics as dyn
from . import percept
from .geom import wrap_angle
from .seeding import stream_seed

INIT_POSITION_JITTER = 0.5  # m per axis
INIT_HEADING_JITTER = math.radians(5.0)

# ~20 m out, 1.5 m up, with room for the init jitter inside the arena.
LANDING_HANDOFF = np.array([-19.4, 0.0, 1.5])


class OutOfArena(ValueError):
    pass


class EmptyResults(ValueError):
    pass


class Maneuver(enum.Enum):
    LEFT_S_DESCENT = "left-s-descent"
    RIGHT_S_ASCENT = "right-s-ascent"
    RIGHT_SHARP_CLIMB = "right-sharp-climb"


class ScenarioKind(enum.Enum):
    TRACKING = "tracking"
    LANDING = "landing"


# Maneuver geometry: arc radii respect min_turn_radius(8 m/s, pi/6) = 11.3 m.
_S_ENTRY = 3.0
_S_RADIUS = 11.6
_S_SWEEP = math.radians(33.0)
_S_EXIT = 2.0
_S_DELTA_Z = 1.0
_CLIMB_RADIUS = 11.6
_CLIMB_SWEEP = math.radians(95.0)
_CLIMB_DELTA_Z = 1.5

_NOMINAL_STARTS = {
    Maneuver.LEFT_S_DESCENT: ((-16.0, -1.0, 2.8), 4.0),
    Maneuver.RIGHT_S_ASCENT: ((-16.0, 1.0, 2.2), 4.0),
    Maneuver.RIGHT_SHARP_CLIMB: ((-14.0, 4.0, 2.2), 3.5),
}


def _s_shape_local(mirror: bool) -> np.ndarray:
    """Two alternating arcs in the start-local frame; first turn left
    (mirror=False) or right (mirror=True)."""
    pts = [(_S_ENTRY, 0.0)]
    r = _S_RADIUS
    center1 = np.array([_S_ENTRY, r])
    for k in range(1, 4):
        psi = _S_SWEEP * k / 3.0
        pts.append(tuple(center1 + r * np.array([math.sin(psi), -math.cos(psi)])))
    end1 = np.array(pts[-1])
    center2 = end1 + r * np.array([math.sin(_S_SWEEP), -math.cos(_S_SWEEP)])
    for k in range(1, 4):
        psi = _S_SWEEP * (3 - k) / 3.0
        pts.append(tuple(center2 + r * np.array([-math.sin(psi), math.cos(psi)])))
    end2 = np.array(pts[-1])
    pts.append(tuple(end2 + np.array([_S_EXIT, 0.0])))
    arr = np.array(pts)
    if mirror:
        arr[:, 1] = -arr[:, 1]
    return arr


def _sharp_climb_local() -> np.ndarray:
    pts = [(_S_ENTRY, 0.0)]
    r = _CLIMB_RADIUS
    center = np.array([_S_ENTRY, -r])
    for k in range(1, 6):
        psi = -_CLIMB_SWEEP * k / 5.0
        pts.append(tuple(center + r * np.array([-math.sin(psi), math.cos(psi)])))
    return np.array(pts)


def leader_maneuver_waypoints(
    maneuver: Maneuver, start: dyn.State, arena: dyn.Box = dyn.ARENA
) -> np.ndarray:
    """Deterministic waypoint sequence for one leader maneuver.

    Waypoints are laid out in the start state's local frame (x along the
    initial heading) and lifted to world coordinates; the right-turn S is
    the exact y-mirror of the left-turn S with the altitude delta negated.
    """
    if maneuver is Maneuver.LEFT_S_DESCENT:
        local, dz = _s_shape_local(mirror=False), -_S_DELTA_Z
    elif maneuver is Maneuver.RIGHT_S_ASCENT:
        local, dz = _s_shape_local(mirror=True), _S_DELTA_Z
    elif maneuver is Maneuver.RIGHT_SHARP_CLIMB:
        local, dz = _sharp_climb_local(), _CLIMB_DELTA_Z
    else:
        raise ValueError(f"unknown maneuver {maneuver!r}")

    cy, sy = math.cos(start.yaw), math.sin(start.yaw)
    n = local.shape[0]
    world = np.empty((n, 3))
    world[:, 0] = start.position[0] + cy * local[:, 0] - sy * local[:, 1]
    world[:, 1] = start.position[1] + sy * local[:, 0] + cy * local[:, 1]
    world[:, 2] = start.position[2] + dz * (np.arange(1, n + 1) / n)

    for wp in world:
        if not arena.contains(wp):
            raise OutOfArena(f"waypoint {wp} leaves the {arena.hi} arena box")
    return world


def straight_waypoints(start: dyn.State, length: float, spacing: float = 6.0) -> np.ndarray:
    """Collinear waypoints along the start heading (no arena check: meant
    for open-space vision evaluation)."""
    n = max(2, int(math.ceil(length / spacing)))
    d = start.pose().forward()
    d = np.array([d[0], d[1], 0.0])
    d /= np.linalg.norm(d)
    return start.position + np.outer(np.arange(1, n + 1) * spacing, d)


@dataclass
class Scenario:
    kind: ScenarioKind
    seed: int
    duration: float
    dt: float = dyn.DT_DEFAULT
    maneuver: Maneuver | None = None
    initial_follower: dyn.State = None
    initial_leader: dyn.State | None = None
    leader_waypoints: np.ndarray | None = None
    appearance: percept.LeaderAppearance = percept.LeaderAppearance()
    render: percept.RenderConfig = None
    arena: dyn.Box = dyn.ARENA

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.render is None:
            self.render = percept.RenderConfig(percept.desk_intrinsics())

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def _perturbed(state: dyn.State, seed: int, stream: str) -> dyn.State:
    rng = np.random.default_rng(stream_seed(seed, stream))
    pos = state.position + rng.uniform(-INIT_POSITION_JITTER, INIT_POSITION_JITTER, 3)
    heading = float(
        wrap_angle(state.yaw + rng.uniform(-INIT_HEADING_JITTER, INIT_HEADING_JITTER))
    )
    return dyn.trim_state(state.speed, heading=heading, position=pos)


def _follower_behind(leader: dyn.State, standoff: float) -> dyn.State:
    d = leader.pose().forward()
    d = np.array([d[0], d[1], 0.0])
    d /= np.linalg.norm(d)
    return dyn.trim_state(leader.speed, heading=leader.yaw, position=leader.position - standoff * d)


def tracking_scenario(
    maneuver: Maneuver,
    seed: int,
    duration: float | None = None,
    dt: float = dyn.DT_DEFAULT,
    appearance: percept.LeaderAppearance = percept.LeaderAppearance(),
) -> Scenario:
    """Canonical maneuver scenario with a seeded follower perturbation."""
    (pos, nominal_duration) = _NOMINAL_STARTS[maneuver]
    leader = dyn.trim_state(8.0, heading=0.0, position=pos)
    follower = _perturbed(_follower_behind(leader, ctl.DEFAULT_GAINS.standoff), seed, "init")
    return Scenario(
        kind=ScenarioKind.TRACKING,
        maneuver=maneuver,
        seed=seed,
        duration=nominal_duration if duration is None else duration,
        dt=dt,
        initial_follower=follower,
        initial_leader=leader,
        appearance=appearance,
    )


def straight_tracking_scenario(
    seed: int,
    duration: float = 12.0,
    dt: float = dyn.DT_DEFAULT,
    appearance: percept.LeaderAppearance = percept.LeaderAppearance(),
) -> Scenario:
    """Leader flies straight and level; open space (no arena constraint)."""
    leader = dyn.trim_state(8.0, heading=0.0, position=(0.0, 0.0, 2.5))
    follower = _perturbed(_follower_behind(leader, ctl.DEFAULT_GAINS.standoff), seed, "init")
    waypoints = straight_waypoints(leader, length=duration * 8.0 + 30.0)
    return Scenario(
        kind=ScenarioKind.TRACKING,
        seed=seed,
        duration=duration,
        dt=dt,
        initial_follower=follower,
        initial_leader=leader,
        leader_waypoints=waypoints,
        appearance=appearance,
    )


def landing_scenario(
    seed: int, duration: float = 15.0, dt: float = dyn.DT_DEFAULT
) -> Scenario:
    handoff = dyn.trim_state(8.0, heading=0.0, position=LANDING_HANDOFF)
    return Scenario(
        kind=ScenarioKind.LANDING,
        seed=seed,
        duration=duration,
        dt=dt,
        initial_follower=_perturbed(handoff, seed, "handoff"),
    )


@dataclass
class Observation:
    t: float
    follower: dyn.State
    leader: dyn.State | None
    stats: percept.MaskStats | None
    intrinsics: object
    history: ctl.ControlHistory
    frame: percept.Frame | None = None


class StateFollowerPolicy:
    """Ground-truth expert follower (has both true states)."""

    uses_vision = False

    def __init__(self, gains: ctl.GuidanceGains = ctl.DEFAULT_GAINS, standoff: float | None = None):
        self.gains = gains
        self.standoff = gains.standoff if standoff is None else standoff

    def control(self, obs: Observation) -> dyn.Control:
        return ctl.expert_follower_control(obs.follower, obs.leader, self.standoff, self.gains)


class VisionFollowerPolicy:
    """Mask-centroid stand-in; sees only mask statistics and its history."""

    uses_vision = True

    def __init__(self, gains: ctl.VisionFollowerGains | None = None):
        if gains is None:
            intr = percept.desk_intrinsics()
            ref = percept.apparent_leader_area(
                intr, percept.LeaderAppearance(), ctl.DEFAULT_GAINS.standoff
            )
            gains = ctl.VisionFollowerGains(reference_area=ref)
        self.gains = gains

    def control(self, obs: Observation) -> dyn.Control:
        return ctl.vision_follower_control(obs.stats, obs.history, obs.intrinsics, self.gains)


class ConstantPolicy:
    """Holds one fixed control; a deliberately blind baseline."""

    uses_vision = False

    def __init__(self, control: dyn.Control):
        self._control = control

    def control(self, obs: Observation) -> dyn.Control:
        return self._control


class _WaypointChaser:
    """Leader driver: chase waypoints, then cruise straight at the final
    altitude once the last waypoint is captured."""

    def __init__(self, waypoints: np.ndarray, gains: ctl.GuidanceGains, capture_radius: float):
        self.waypoints = np.atleast_2d(waypoints)
        self.gains = gains
        self.capture_radius = capture_radius
        self.index = 0
        self._cruise_heading = None
        self._cruise_z = None

    def control(self, state: dyn.State) -> dyn.Control:
        while self.index < len(self.waypoints):
            wp = self.waypoints[self.index]
            if float(np.linalg.norm(state.position - wp)) < self.capture_radius:
                self.index += 1
                if self.index == len(self.waypoints):
                    self._cruise_heading = state.yaw
                    self._cruise_z = float(wp[2])
                continue
            return ctl.expert_waypoint_control(state, wp, self.gains)
        target = state.position + 50.0 * np.array(
            [math.cos(self._cruise_heading), math.sin(self._cruise_heading), 0.0]
        )
        target[2] = self._cruise_z
        return ctl.expert_waypoint_control(state, target, self.gains)


class TrackingEngine:
    """Shared simulation core for tracking trials, dataset export, and the
    control-link loop (keeping all three bit-identical by construction)."""

    def __init__(
        self,
        scenario: Scenario,
        params: dyn.DynParams = dyn.K_REF,
        leader_gains: ctl.GuidanceGains = ctl.DEFAULT_GAINS,
    ):
        if scenario.kind is not ScenarioKind.TRACKING:
            raise ValueError("tracking engine requires a tracking scenario")
        self.scenario = scenario
        self.params = params
        waypoints = scenario.leader_waypoints
        if waypoints is None:
            waypoints = leader_maneuver_waypoints(
                scenario.maneuver, scenario.initial_leader, scenario.arena
            )
        self.chaser = _WaypointChaser(waypoints, leader_gains, leader_gains.capture_radius)
        self.leader = scenario.initial_leader
        self.follower = scenario.initial_follower
        self.history = ctl.ControlHistory()
        self.tick = 0
        self.follower_states = [self.follower]
        self.leader_states = [self.leader]
        self.follower_controls = []
        self.leader_controls = []
        self.violations = []

    def render(self, with_frame: bool):
        """Current view from the follower camera."""
        if with_frame:
            frame, mask = percept.render_scene(
                self.scenario.render,
                self.follower.pose(),
                self.leader.pose(),
                self.scenario.appearance,
            )
        else:
            frame = None
            mask = percept.ground_truth_mask(
                self.scenario.render,
                self.follower.pose(),
                self.leader.pose(),
                self.scenario.appearance,
            )
        return frame, mask

    def observe(self, with_frame: bool) -> Observation:
        frame, mask = self.render(with_frame)
        return Observation(
            t=self.tick * self.scenario.dt,
            follower=self.follower,
            leader=self.leader,
            stats=percept.mask_stats(mask),
            intrinsics=self.scenario.render.intrinsics,
            history=self.history,
            frame=frame,
        )

    def advance(self, follower_control: dyn.Control) -> None:
        dt = self.scenario.dt
        leader_control = self.chaser.control(self.leader)
        self.leader = dyn.step(self.params, self.leader, leader_control, dt)
        self.follower = dyn.step(self.params, self.follower, follower_control, dt)
        self.history = ctl.history_push(self.history, follower_control)
        self.tick += 1
        self.leader_states.append(self.leader)
        self.follower_states.append(self.follower)
        self.leader_controls.append(leader_control)
        self.follower_controls.append(follower_control)
        for v in dyn.check_envelope(dyn.AirframeConfig(), self.follower, self.scenario.arena):
            self.violations.append((self.tick, v))

    def trajectories(self):
        dt = self.scenario.dt
        return (
            dyn.Trajectory(dt, self.follower_states, self.follower_controls),
            dyn.Trajectory(dt, self.leader_states, self.leader_controls),
        )


@dataclass
class TrialResult:
    seed: int
    success: bool
    trajectory_follower: dyn.Trajectory
    trajectory_leader: dyn.Trajectory | None
    lock_flags: list
    per_frame_runtime: list
    touchdown: tuple | None = None  # (position, time_s)
    violations: list = field(default_factory=list)

    def tracking_error_cm(self) -> float | None:
        """Per-trial ATE: mean displacement minus the initial offset, cm."""
        if self.trajectory_leader is None:
            return None
        pf = self.trajectory_follower.positions()
        pl = self.trajectory_leader.positions()
        d = np.linalg.norm(pl - pf, axis=1)
        return float((d.mean() - d[0]) * 100.0)

    def lateral_deviation_cm(self, runway: ctl.RunwaySpec) -> float | None:
        if self.touchdown is None:
            return None
        return abs(runway.lateral_offset(self.touchdown[0])) * 100.0


@dataclass
class Metrics:
    sr: float
    ate_cm: float | None
    art_s: float
    ald_cm: float | None

    def to_dict(self) -> dict:
        out = {"sr": self.sr, "art_s": self.art_s}
        if self.ate_cm is not None:
            out["ate_cm"] = self.ate_cm
        if self.ald_cm is not None:
            out["ald_cm"] = self.ald_cm
        return out


def run_tracking_trial(
    scenario: Scenario,
    follower_policy,
    leader_gains: ctl.GuidanceGains = ctl.DEFAULT_GAINS,
    params: dyn.DynParams = dyn.K_REF,
) -> TrialResult:
    """One leader-follower trial; success requires lock on every frame."""
    engine = TrackingEngine(scenario, params, leader_gains)
    with_frame = bool(getattr(follower_policy, "uses_vision", False))
    lock_flags = []
    runtimes = []
    for _ in range(scenario.n_steps):
        obs = engine.observe(with_frame)
        lock_flags.append(obs.stats is not None and obs.stats.area >= ctl.LOCK_MIN_AREA)
        t0 = time.perf_counter()
        u = follower_policy.control(obs)
        runtimes.append(time.perf_counter() - t0)
        engine.advance(u)
    traj_f, traj_l = engine.trajectories()
    return TrialResult(
        seed=scenario.seed,
        success=all(lock_flags),
        trajectory_follower=traj_f,
        trajectory_leader=traj_l,
        lock_flags=lock_flags,
        per_frame_runtime=runtimes,
        violations=engine.violations,
    )


def run_landing_trial(
    scenario: Scenario,
    policy=None,
    runway: ctl.RunwaySpec = ctl.DEFAULT_RUNWAY,
    params: dyn.DynParams = dyn.K_REF,
) -> TrialResult:
    """Integrate a landing approach until touchdown or timeout.

    `policy` maps State -> Control (default: the expert landing law).
    Touchdown is the first step where z falls to the gear height with a
    descending velocity; success requires it inside the pad bounds.
    """
    if scenario.kind is not ScenarioKind.LANDING:
        raise ValueError("landing trial requires a landing scenario")
    if policy is None:
        policy = lambda s: ctl.expert_landing_control(s, runway)  # noqa: E731

    state = scenario.initial_follower
    states = [state]
    controls = []
    runtimes = []
    violations = []
    touchdown = None
    for i in range(scenario.n_steps):
        t0 = time.perf_counter()
        u = policy(state)
        runtimes.append(time.perf_counter() - t0)
        state = dyn.step(params, state, u, scenario.dt)
        states.append(state)
        controls.append(u)
        for v in dyn.check_envelope(dyn.AirframeConfig(), state, scenario.arena):
            violations.append((i + 1, v))
        if state.position[2] <= ctl.GEAR_HEIGHT and state.velocity[2] < 0.0:
            touchdown = (state.position.copy(), (i + 1) * scenario.dt)
            break
    success = touchdown is not None and runway.contains_touchdown(touchdown[0])
    return TrialResult(
        seed=scenario.seed,
        success=success,
        trajectory_follower=dyn.Trajectory(scenario.dt, states, controls),
        trajectory_leader=None,
        lock_flags=[],
        per_frame_runtime=runtimes,
        touchdown=touchdown,
        violations=violations,
    )


def compute_metrics(results, runway: ctl.RunwaySpec | None = None) -> Metrics:
    """Aggregate SR/ATE/ART/ALD over a trial list (order independent)."""
    results = list(results)
    if not results:
        raise EmptyResults("no trial results to aggregate")
    sr = sum(1 for r in results if r.success) / len(results)
    ates = [r.tracking_error_cm() for r in results if r.trajectory_leader is not None]
    art_samples = [t for r in results for t in r.per_frame_runtime]
    alds = []
    if runway is not None:
        alds = [
            r.lateral_deviation_cm(runway)
            for r in results
            if r.success and r.touchdown is not None
        ]
    return Metrics(
        sr=sr,
        ate_cm=float(np.mean(ates)) if ates else None,
        art_s=float(np.mean(art_samples)) if art_samples else 0.0,
        ald_cm=float(np.mean(alds)) if alds else None,
    )


@dataclass(frozen=True)
class SweepPoint:
    kind: str  # "scale" or "salt_pepper"
    level: float
    sr: float


def perturbation_sweep(
    base_scenario_factory,
    scale_levels,
    noise_levels,
    trials_per_level: int = 10,
    policy_factory=None,
) -> list:
    """SR per appearance-perturbation level.

    `base_scenario_factory(seed, appearance)` builds one trial scenario;
    per-trial seeds depend only on the trial index, so a level that equals
    the baseline appearance reproduces the baseline bit-exactly.
    """
    if policy_factory is None:
        policy_factory = VisionFollowerPolicy

    def sr_for(appearance: percept.LeaderAppearance) -> float:
        wins = 0
        for i in range(trials_per_level):
            scenario = base_scenario_factory(i, appearance)
            result = run_tracking_trial(scenario, policy_factory())
            wins += bool(result.success)
        return wins / trials_per_level

    points = []
    for level in scale_levels:
        sr = sr_for(percept.LeaderAppearance(scale_factor=float(level)))
        points.append(SweepPoint("scale", float(level), sr))
    for level in noise_levels:
        sr = sr_for(percept.LeaderAppearance(salt_pepper_fraction=float(level)))
        points.append(SweepPoint("salt_pepper", float(level), sr))
    return points


def generate_il_dataset(
    scenarios,
    gains: ctl.GuidanceGains = ctl.DEFAULT_GAINS,
    noise_sigma=0.0,
    out_dir=".",
    params: dyn.DynParams = dyn.K_REF,
) -> dict:
    """Export an imitation-learning dataset from expert-follower trials.

    Per frame: the rendered view (PPM), the ground-truth mask (PGM), the
    30-step control history, the expert action as the label, and the
    noise-injected action that was actually applied to the plant. Returns
    {"manifest": path, "rows": count}.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    rows = 0
    expert = StateFollowerPolicy(gains)
    with open(manifest_path, "w", encoding="utf-8") as manifest:
        for trial_idx, scenario in enumerate(scenarios):
            engine = TrackingEngine(scenario, params, gains)
            for t in range(scenario.n_steps):
                obs = engine.observe(with_frame=True)
                label = expert.control(obs)
                applied = ctl.inject_expert_noise(
                    label, noise_sigma, stream_seed(scenario.seed, f"expert-noise-{t}")
                )
                frame_name = f"frame_{trial_idx:03d}_{t:05d}.ppm"
                mask_name = f"mask_{trial_idx:03d}_{t:05d}.pgm"
                percept.write_ppm(obs.frame, os.path.join(out_dir, frame_name))
                mask = percept.ground_truth_mask(
                    scenario.render,
                    engine.follower.pose(),
                    engine.leader.pose(),
                    scenario.appearance,
                )
                percept.write_pgm(mask, os.path.join(out_dir, mask_name))
                row = {
                    "trial": trial_idx,
                    "t": round(t * scenario.dt, 9),
                    "seed": scenario.seed,
                    "frame": frame_name,
                    "mask": mask_name,
                    "history": [list(c.as_array()) for c in obs.history.controls],
                    "label": list(label.as_array()),
                    "applied": list(applied.as_array()),
                    "camera_pose": _pose_list(engine.follower),
                    "leader_pose": _pose_list(engine.leader),
                    "appearance": {
                        "scale_factor": scenario.appearance.scale_factor,
                        "brightness_offset": scenario.appearance.brightness_offset,
                        "salt_pepper_fraction": scenario.appearance.salt_pepper_fraction,
                    },
                }
                manifest.write(json.dumps(row, sort_keys=True) + "\n")
                rows += 1
                engine.advance(applied)
    return {"manifest": manifest_path, "rows": rows}


def _pose_list(state: dyn.State) -> list:
    return [
        float(state.position[0]),
        float(state.position[1]),
        float(state.position[2]),
        state.pitch,
        state.yaw,
        state.roll,
    ]


def write_metrics_json(path, metrics: Metrics, config: dict, seed: int) -> None:
    payload = {"config": config, "seed": seed, "metrics": metrics.to_dict()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_trials_csv(path, results, runway: ctl.RunwaySpec | None, config: dict, seed: int) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# seed={seed} config={json.dumps(config, sort_keys=True)}\n")
        f.write("seed,success,ate_cm,art_s,ald_cm\n")
        for r in results:
            ate = r.tracking_error_cm()
            ald = r.lateral_deviation_cm(runway) if runway is not None else None
            art = float(np.mean(r.per_frame_runtime)) if r.per_frame_runtime else 0.0
            f.write(
                f"{r.seed},{int(r.success)},"
                f"{'' if ate is None else format(ate, '.9g')},"
                f"{format(art, '.6g')},"
                f"{'' if ald is None else format(ald, '.9g')}\n"
            )
