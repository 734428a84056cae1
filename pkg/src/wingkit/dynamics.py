"""Reduced-order discrete-time fixed-wing model and performance envelope.

State x = [px, py, pz, pitch, yaw, roll, vx, vy, vz] (meters, radians,
world-frame m/s); control u = [throttle, aileron, pitch_cmd, yaw_cmd].
One forward-Euler step of length dt:

    V      = max(|velocity|, 0.5)
    roll'  = wrap(roll + dt * (k_roll_aileron * aileron - k_roll_damp * roll))
    pitch' = clamp(pitch + dt * k_pitch * (pitch_cmd - pitch))
    yaw'   = wrap(yaw + dt * (k_yaw * wrap(yaw_cmd - yaw) + (g / V) * tan roll'))
    V'     = max(V + dt * (k_thrust * throttle - k_drag * V - g * sin pitch'), 0)
    velocity' = V' * (cos pitch' cos yaw', cos pitch' sin yaw', sin pitch')
    position' = position + dt * velocity'

Velocity is slaved to attitude (a self-stabilized micro airframe), which
keeps the model at six identifiable parameters while reproducing the
coordinated-turn yaw rate (g / V) * tan(roll).

Trajectory CSV format: header `t,px,py,pz,pitch,yaw,roll,vx,vy,vz,uT,da,thc,gac`,
one row per state at 9 significant digits; the final row carries zero
padding in the control columns (no control is applied after the last state).
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .geom import Pose, wrap_angle

G = 9.8
DT_DEFAULT = 0.05  # 20 Hz loop
SPEED_FLOOR = 0.5  # guards the tan/V turn-coupling singularity
PITCH_LIMIT = math.pi / 2 - 1e-3

TRAJECTORY_HEADER = "t,px,py,pz,pitch,yaw,roll,vx,vy,vz,uT,da,thc,gac"

# Angle-column indices within the 9-component state vector.
ANGLE_SLICE = slice(3, 6)


@dataclass
class State:
    position: np.ndarray
    pitch: float
    yaw: float
    roll: float
    velocity: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def pose(self) -> Pose:
        return Pose(self.position.copy(), self.pitch, self.yaw, self.roll)

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [self.position, [self.pitch, self.yaw, self.roll], self.velocity]
        )

    @classmethod
    def from_array(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), float(x[3]), float(x[4]), float(x[5]), x[6:9].copy())


@dataclass(frozen=True)
class Control:
    throttle: float = 0.0
    aileron: float = 0.0
    pitch_cmd: float = 0.0
    yaw_cmd: float = 0.0

    def clamped(self) -> "Control":
        return Control(
            min(max(self.throttle, 0.0), 1.0),
            min(max(self.aileron, -1.0), 1.0),
            min(max(self.pitch_cmd, -0.5), 0.5),
            float(wrap_angle(self.yaw_cmd)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.aileron, self.pitch_cmd, self.yaw_cmd])

    @classmethod
    def from_array(cls, u) -> "Control":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]), float(u[3]))


ZERO_CONTROL = Control()


@dataclass(frozen=True)
class DynParams:
    k_roll_aileron: float
    k_roll_damp: float
    k_pitch: float
    k_yaw: float
    k_thrust: float
    k_drag: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.k_roll_aileron,
                self.k_roll_damp,
                self.k_pitch,
                self.k_yaw,
                self.k_thrust,
                self.k_drag,
            ]
        )

    @classmethod
    def from_array(cls, k) -> "DynParams":
        k = np.asarray(k, dtype=float)
        return cls(*(float(v) for v in k))

    def scaled(self, factor: float) -> "DynParams":
        return DynParams.from_array(self.as_array() * factor)


PARAM_NAMES = ("k_roll_aileron", "k_roll_damp", "k_pitch", "k_yaw", "k_thrust", "k_drag")

# Reference parameter set for desk-scale experiments: trim speed at
# throttle 0.8 is 8 m/s, above the 7 m/s stall floor of the 150 g airframe.
K_REF = DynParams(
    k_roll_aileron=3.0,
    k_roll_damp=2.0,
    k_pitch=3.0,
    k_yaw=1.5,
    k_thrust=12.0,
    k_drag=1.2,
)


@dataclass(frozen=True)
class AirframeConfig:
    mass: float = 0.15
    wing_area: float = 0.076
    air_density: float = 1.3
    lift_coeff: float = 0.6
    max_bank: float = math.pi / 6
    g: float = G


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in world coordinates."""

    lo: tuple = (-20.0, -10.0, 0.0)
    hi: tuple = (20.0, 10.0, 5.0)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


ARENA = Box()  # 40 x 20 x 5 m indoor arena


class EnvelopeViolation(enum.Enum):
    STALL_RISK = "StallRisk"
    BANK_LIMIT = "BankLimit"
    OUT_OF_ARENA = "OutOfArena"


@dataclass
class Trajectory:
    dt: float
    states: list
    controls: list

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.controls) != len(self.states) - 1:
            raise ValueError(
                f"{len(self.states)} states require {len(self.states) - 1} controls, "
                f"got {len(self.controls)}"
            )

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.states])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRAJECTORY_HEADER + "\n")
        for i, s in enumerate(self.states):
            u = self.controls[i] if i < len(self.controls) else ZERO_CONTROL
            row = np.concatenate([[i * self.dt], s.as_array(), u.as_array()])
            buf.write(",".join(f"{v:.9g}" for v in row) + "\n")
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        lines = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
        if not lines or lines[0] != TRAJECTORY_HEADER:
            raise ValueError("missing or unexpected trajectory CSV header")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        if rows.ndim != 2 or rows.shape[1] != 14:
            raise ValueError("trajectory CSV rows must have 14 columns")
        if rows.shape[0] < 1:
            raise ValueError("trajectory CSV has no data rows")
        dt = float(rows[1, 0] - rows[0, 0]) if rows.shape[0] > 1 else DT_DEFAULT
        states = [State.from_array(r[1:10]) for r in rows]
        controls = [Control.from_array(r[10:14]) for r in rows[:-1]]
        return cls(dt, states, controls)

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_csv(f.read())


def batch_step(params: DynParams, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized model step over rows of states x (n,9) and controls u (n,4)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    thr = np.clip(u[:, 0], 0.0, 1.0)
    ail = np.clip(u[:, 1], -1.0, 1.0)
    pitch_cmd = np.clip(u[:, 2], -0.5, 0.5)
    yaw_cmd = u[:, 3]

    speed = np.maximum(np.linalg.norm(x[:, 6:9], axis=1), SPEED_FLOOR)
    roll = wrap_angle(x[:, 5] + dt * (params.k_roll_aileron * ail - params.k_roll_damp * x[:, 5]))
    pitch = np.clip(
        x[:, 3] + dt * params.k_pitch * (pitch_cmd - x[:, 3]), -PITCH_LIMIT, PITCH_LIMIT
    )
    yaw = wrap_angle(
        x[:, 4]
        + dt * (params.k_yaw * wrap_angle(yaw_cmd - x[:, 4]) + (G / speed) * np.tan(roll))
    )
    speed_next = np.maximum(
        speed + dt * (params.k_thrust * thr - params.k_drag * speed - G * np.sin(pitch)),
        0.0,
    )
    vel = speed_next[:, None] * np.column_stack(
        [np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)]
    )
    pos = x[:, 0:3] + dt * vel
    return np.column_stack([pos, pitch, yaw, roll, vel])


def step(params: DynParams, state: State, control: Control, dt: float) -> State:
    """One deterministic forward-Euler step; saturations never fault."""
    if not 0.0 < dt <= 0.2:
        raise ValueError(f"dt must be in (0, 0.2], got {dt}")
    out = batch_step(params, state.as_array()[None, :], control.as_array()[None, :], dt)
    return State.from_array(out[0])


def rollout(params: DynParams, initial: State, controls, dt: float) -> Trajectory:
    states = [initial]
    for u in controls:
        states.append(step(params, states[-1], u, dt))
    return Trajectory(dt, states, list(controls))


def min_airspeed(config: AirframeConfig) -> float:
    """Stall floor from lift >= weight: sqrt(2 m g / (rho S C))."""
    return math.sqrt(
        2.0 * config.mass * config.g / (config.air_density * config.wing_area * config.lift_coeff)
    )


def min_turn_radius(config: AirframeConfig, airspeed: float, bank: float) -> float:
    """Coordinated-turn radius V^2 / (g tan(bank))."""
    if not 0.0 < bank < math.pi / 2:
        raise ValueError(f"bank must be in (0, pi/2), got {bank}")
    return airspeed**2 / (config.g * math.tan(bank))


def trim_throttle(params: DynParams, speed: float) -> float:
    """Throttle holding `speed` in level flight (thrust balances drag)."""
    return min(max(params.k_drag * speed / params.k_thrust, 0.0), 1.0)


def trim_state(speed: float, heading: float = 0.0, position=(0.0, 0.0, 2.0)) -> State:
    """Level flight state at the given speed and heading."""
    vel = speed * np.array([math.cos(heading), math.sin(heading), 0.0])
    return State(np.asarray(position, dtype=float), 0.0, heading, 0.0, vel)


def trim_control(params: DynParams, state: State) -> Control:
    """Control that holds the given level state fixed."""
    return Control(trim_throttle(params, state.speed), 0.0, state.pitch, state.yaw)


def check_envelope(config: AirframeConfig, state: State, arena: Box = ARENA) -> list:
    violations = []
    if state.speed < min_airspeed(config):
        violations.append(EnvelopeViolation.STALL_RISK)
    if abs(state.roll) > config.max_bank:
        violations.append(EnvelopeViolation.BANK_LIMIT)
    if not arena.contains(state.position):
        violations.append(EnvelopeViolation.OUT_OF_ARENA)
    return violations
