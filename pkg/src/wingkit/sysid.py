"""Recover dynamics parameters from state-action data by nonlinear least
squares.

The fit minimizes the stacked one-step prediction residual over all
transitions, weighted to balance unit scales (positions 1/m, angles
10/rad, velocities 0.5/(m/s)), with angle residuals wrapped to [-pi, pi).
Parameters are optimized in log space so they stay positive; the Jacobian
is taken by central finite differences (h = 1e-6 relative) and the
Levenberg-Marquardt driver only ever accepts steps that do not increase
the squared-residual sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from .geom import wrap_angle
from .seeding import derived_rng, stream_seed

RESIDUAL_WEIGHTS = np.array([1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 0.5, 0.5, 0.5])

MAX_ITERATIONS = 200
SSE_REL_TOL = 1e-10
STEP_NORM_TOL = 1e-10
FD_REL_STEP = 1e-6

OUTLIER_SPEED_FACTOR = 3.0
OUTLIER_SPEED_ABS = 25.0  # m/s, beyond the airframe's physical envelope

EXCITATION_SEGMENT_S = 0.5
EXCITATION_SPEED_RANGE = (None, 15.0)  # lower bound = stall speed


class TooFewSamples(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class NonFiniteResidual(ValueError):
    """The model produced non-finite residuals; the data is invalid."""


@dataclass
class StateActionDataset:
    """Transitions (x_t, u_t, x_{t+1}) at a uniform step dt."""

    dt: float
    x: np.ndarray  # (n, 9)
    u: np.ndarray  # (n, 4)
    x_next: np.ndarray  # (n, 9)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.x_next = np.atleast_2d(np.asarray(self.x_next, dtype=float))

    def __len__(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_trajectory(cls, traj: dyn.Trajectory) -> "StateActionDataset":
        xs = np.array([s.as_array() for s in traj.states])
        us = np.array([c.as_array() for c in traj.controls])
        return cls(traj.dt, xs[:-1], us, xs[1:])

    def shuffled(self, seed: int) -> "StateActionDataset":
        order = np.random.default_rng(seed).permutation(len(self))
        return StateActionDataset(self.dt, self.x[order], self.u[order], self.x_next[order])


@dataclass
class FitResult:
    params: dyn.DynParams
    sse: float
    iterations: int
    converged: bool
    per_param_stderr: np.ndarray
    sse_trace: list = None  # SSE after each accepted step, initial first

    def to_json(self) -> str:
        return json.dumps(
            {
                "params": {n: getattr(self.params, n) for n in dyn.PARAM_NAMES},
                "sse": self.sse,
                "iterations": self.iterations,
                "converged": self.converged,
                "stderr": [float(v) for v in self.per_param_stderr],
            },
            indent=2,
            sort_keys=True,
        )


def differentiate_poses(poses, dt: float) -> np.ndarray:
    """Finite-difference velocities from a time-ordered pose sequence.

    Central differences in the interior, one-sided at the ends; the output
    has one velocity per input pose.
    """
    positions = np.array([np.asarray(p.position, dtype=float) for p in poses])
    if positions.shape[0] < 3:
        raise TooFewSamples(f"need at least 3 poses, got {positions.shape[0]}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    vel = np.empty_like(positions)
    vel[1:-1] = (positions[2:] - positions[:-2]) / (2.0 * dt)
    vel[0] = (positions[1] - positions[0]) / dt
    vel[-1] = (positions[-1] - positions[-2]) / dt
    return vel


def filter_outliers(poses, dt: float):
    """Drop poses whose implied speed is physically implausible.

    A sample is rejected when the speeds to BOTH of its neighbors exceed
    the threshold (3x the trajectory median implied speed, or 25 m/s
    absolute), so a single teleported sample is removed without taking its
    neighbors down with it. The first and last samples are always kept.
    Returns (kept_poses, rejected_indices).
    """
    poses = list(poses)
    if len(poses) < 5:
        raise TooFewSamples(f"need at least 5 poses, got {len(poses)}")
    positions = np.array([np.asarray(p.position, dtype=float) for p in poses])
    seg_speeds = np.linalg.norm(np.diff(positions, axis=0), axis=1) / dt
    median = float(np.median(seg_speeds))
    threshold = min(OUTLIER_SPEED_FACTOR * median, OUTLIER_SPEED_ABS)
    rejected = [
        i
        for i in range(1, len(poses) - 1)
        if seg_speeds[i - 1] > threshold and seg_speeds[i] > threshold
    ]
    kept = [p for i, p in enumerate(poses) if i not in set(rejected)]
    return kept, rejected


def _residual(params_vec: np.ndarray, dataset: StateActionDataset) -> np.ndarray:
    params = dyn.DynParams.from_array(params_vec)
    pred = dyn.batch_step(params, dataset.x, dataset.u, dataset.dt)
    diff = pred - dataset.x_next
    diff[:, dyn.ANGLE_SLICE] = wrap_angle(diff[:, dyn.ANGLE_SLICE])
    return (diff * RESIDUAL_WEIGHTS).ravel()


def residual_sse(params: dyn.DynParams, dataset: StateActionDataset) -> float:
    """Weighted squared-residual sum of the one-step predictions."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset has no transitions")
    r = _residual(params.as_array(), dataset)
    return float(r @ r)


def _jacobian(beta: np.ndarray, dataset: StateActionDataset) -> np.ndarray:
    """Central-difference Jacobian of the residual w.r.t. log-parameters."""
    m = len(dataset) * 9
    jac = np.empty((m, beta.size))
    for j in range(beta.size):
        h = FD_REL_STEP * max(1.0, abs(beta[j]))
        bp, bm = beta.copy(), beta.copy()
        bp[j] += h
        bm[j] -= h
        jac[:, j] = (_residual(np.exp(bp), dataset) - _residual(np.exp(bm), dataset)) / (2.0 * h)
    return jac


def fit_params(dataset: StateActionDataset, initial_guess: dyn.DynParams) -> FitResult:
    """Levenberg-Marquardt fit of the six model parameters.

    Converged when the relative SSE decrease or the step norm drops below
    1e-10, capped at 200 accepted iterations.
    """
    if len(dataset) == 0:
        raise EmptyDataset("dataset has no transitions")
    k0 = initial_guess.as_array()
    if np.any(k0 <= 0.0) or not np.all(np.isfinite(k0)):
        raise ValueError("initial guess must be strictly positive and finite")

    beta = np.log(k0)
    r = _residual(np.exp(beta), dataset)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("residual is non-finite at the initial guess")
    sse = float(r @ r)
    sse_trace = [sse]

    lam = 1e-3
    iterations = 0
    converged = False
    jac = _jacobian(beta, dataset)
    while iterations < MAX_ITERATIONS:
        jtj = jac.T @ jac
        jtr = jac.T @ r
        accepted = False
        while lam < 1e12:
            a = jtj + lam * np.diag(np.diag(jtj))
            try:
                delta = np.linalg.solve(a, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            beta_new = beta + delta
            r_new = _residual(np.exp(beta_new), dataset)
            sse_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        iterations += 1
        decrease = sse - sse_new
        beta, r, sse = beta_new, r_new, sse_new
        sse_trace.append(sse)
        lam = max(lam / 3.0, 1e-14)
        if decrease <= SSE_REL_TOL * max(sse, 1e-300) or np.linalg.norm(delta) < STEP_NORM_TOL:
            converged = True
            break
        jac = _jacobian(beta, dataset)

    params = dyn.DynParams.from_array(np.exp(beta))
    stderr = _gauss_newton_stderr(beta, sse, dataset)
    return FitResult(params, sse, iterations, converged, stderr, sse_trace)


def _gauss_newton_stderr(beta: np.ndarray, sse: float, dataset: StateActionDataset) -> np.ndarray:
    jac = _jacobian(beta, dataset)
    m = jac.shape[0]
    dof = max(m - beta.size, 1)
    try:
        cov = np.linalg.inv(jac.T @ jac) * (sse / dof)
    except np.linalg.LinAlgError:
        return np.full(beta.size, np.nan)
    # Delta method back from log space: d k = k d beta.
    return np.exp(beta) * np.sqrt(np.maximum(np.diag(cov), 0.0))


def gauss_newton_hessian(params: dyn.DynParams, dataset: StateActionDataset) -> np.ndarray:
    """J^T J at the given parameters (log-space coordinates)."""
    jac = _jacobian(np.log(params.as_array()), dataset)
    return jac.T @ jac


def excitation_controls(
    params: dyn.DynParams,
    initial: dyn.State,
    n_steps: int,
    dt: float = dyn.DT_DEFAULT,
    seed: int = 0,
    config: dyn.AirframeConfig = dyn.AirframeConfig(),
) -> list:
    """Piecewise-constant excitation controls spanning all four channels.

    Controls are redrawn every 0.5 s, uniform over the control box;
    segments that would leave the speed/bank envelope are rejected and
    redrawn (position is unconstrained: identification flights need more
    room than the desk arena).
    """
    rng = np.random.default_rng(stream_seed(seed, "excitation"))
    seg_len = max(1, int(round(EXCITATION_SEGMENT_S / dt)))
    v_min = dyn.min_airspeed(config)
    v_max = EXCITATION_SPEED_RANGE[1]

    controls = []
    state = initial
    while len(controls) < n_steps:
        for attempt in range(200):
            u = dyn.Control(
                throttle=float(rng.uniform(0.0, 1.0)),
                aileron=float(rng.uniform(-1.0, 1.0)),
                pitch_cmd=float(rng.uniform(-0.5, 0.5)),
                yaw_cmd=float(rng.uniform(-math.pi, math.pi)),
            )
            trial = state
            ok = True
            for _ in range(seg_len):
                trial = dyn.step(params, trial, u, dt)
                if not (v_min <= trial.speed <= v_max) or abs(trial.roll) > config.max_bank:
                    ok = False
                    break
            if ok:
                break
        else:
            # Envelope too tight to excite from here; limp along at trim.
            u = dyn.trim_control(params, state)
            trial = state
            for _ in range(seg_len):
                trial = dyn.step(params, trial, u, dt)
        controls.extend([u] * seg_len)
        state = trial
    return controls[:n_steps]


def make_excitation_dataset(
    params: dyn.DynParams,
    n_transitions: int,
    dt: float = dyn.DT_DEFAULT,
    seed: int = 0,
    noise_sigma: float = 0.0,
) -> StateActionDataset:
    """Synthetic identification dataset rolled out with known parameters.

    Optional zero-mean Gaussian noise of std `noise_sigma` is added to
    every state component (measurement noise on both sides of each
    transition).
    """
    initial = dyn.trim_state(8.0)
    controls = excitation_controls(params, initial, n_transitions, dt=dt, seed=seed)
    traj = dyn.rollout(params, initial, controls, dt)
    dataset = StateActionDataset.from_trajectory(traj)
    if noise_sigma > 0.0:
        rng = derived_rng(seed, "sysid-noise", noise_sigma, float(n_transitions))
        xs = np.vstack([dataset.x, dataset.x_next[-1:]])
        xs = xs + rng.normal(0.0, noise_sigma, size=xs.shape)
        dataset = StateActionDataset(dt, xs[:-1], dataset.u, xs[1:])
    return dataset
