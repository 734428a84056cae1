import math

import numpy as np
import pytest

from wingkit import dynamics as dyn

K = dyn.K_REF
CFG = dyn.AirframeConfig()


class TestStep:
    def test_trim_is_fixed_point(self):
        state = dyn.trim_state(8.0)
        control = dyn.trim_control(K, state)
        nxt = dyn.step(K, state, control, 0.05)
        assert abs(nxt.speed - state.speed) < 1e-3
        assert abs(nxt.position[2] - state.position[2]) < 1e-3

    def test_trim_throttle_balance(self):
        # Thrust balances drag at the solved throttle for any speed.
        for v in (5.0, 8.0, 9.5):
            ut = dyn.trim_throttle(K, v)
            assert K.k_thrust * ut == pytest.approx(K.k_drag * v, abs=1e-12)

    def test_positive_aileron_rolls_up_first_step(self):
        state = dyn.trim_state(8.0)
        control = dyn.Control(0.8, 0.4, 0.0, 0.0)
        assert dyn.step(K, state, control, 0.05).roll > 0.0

    def test_zero_velocity_output_finite(self):
        state = dyn.State(np.zeros(3), 0.0, 0.0, 0.3, np.zeros(3))
        nxt = dyn.step(K, state, dyn.Control(0.5, 0.2, 0.1, 0.4), 0.05)
        assert np.all(np.isfinite(nxt.as_array()))

    def test_dt_bounds(self):
        state = dyn.trim_state(8.0)
        with pytest.raises(ValueError):
            dyn.step(K, state, dyn.Control(), 0.0)
        with pytest.raises(ValueError):
            dyn.step(K, state, dyn.Control(), 0.5)

    def test_pitch_clamped(self):
        state = dyn.State(np.zeros(3), 1.56, 0.0, 0.0, np.array([8.0, 0, 0]))
        nxt = dyn.step(K, state, dyn.Control(1.0, 0.0, 0.5, 0.0), 0.2)
        assert abs(nxt.pitch) <= math.pi / 2 - 1e-3

    def test_determinism_bit_exact(self):
        state = dyn.trim_state(7.3, heading=0.4, position=(1, 2, 3))
        control = dyn.Control(0.7, -0.2, 0.1, 0.9)
        a = dyn.step(K, state, control, 0.05).as_array()
        b = dyn.step(K, state, control, 0.05).as_array()
        assert np.array_equal(a, b)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 9))
        u = rng.uniform(-1, 1, size=(40, 4))
        batch = dyn.batch_step(K, x, u, 0.05)
        for i in range(40):
            single = dyn.step(K, dyn.State.from_array(x[i]), dyn.Control.from_array(u[i]), 0.05)
            assert np.array_equal(batch[i], single.as_array())

    def test_speed_update_decouples_from_heading(self):
        # For fixed pitch and throttle the speed after one step must not
        # depend on yaw or aileron.
        speeds = set()
        for yaw in (0.0, 1.0, -2.5):
            for ail in (-0.8, 0.0, 0.5):
                state = dyn.State(np.zeros(3), 0.1, yaw, 0.2,
                                  7.5 * np.array([math.cos(yaw), math.sin(yaw), 0.0]))
                nxt = dyn.step(K, state, dyn.Control(0.6, ail, 0.1, yaw), 0.05)
                speeds.add(round(nxt.speed, 12))
        assert len(speeds) == 1


class TestRollout:
    def test_empty_controls(self):
        traj = dyn.rollout(K, dyn.trim_state(8.0), [], 0.05)
        assert len(traj.states) == 1 and len(traj.controls) == 0

    def test_equals_repeated_step(self):
        state = dyn.trim_state(8.0)
        controls = [dyn.Control(0.8, 0.1, 0.05, 0.2)] * 20
        traj = dyn.rollout(K, state, controls, 0.05)
        cur = state
        for i, u in enumerate(controls):
            cur = dyn.step(K, cur, u, 0.05)
            assert np.array_equal(traj.states[i + 1].as_array(), cur.as_array())

    def test_trim_rollout_altitude_band(self):
        state = dyn.trim_state(8.0)
        controls = [dyn.trim_control(K, state)] * 200
        traj = dyn.rollout(K, state, controls, 0.05)
        z = traj.positions()[:, 2]
        assert z.max() - z.min() < 0.5


class TestPerformanceNumbers:
    def test_min_airspeed_150g(self):
        assert dyn.min_airspeed(CFG) == pytest.approx(7.04, abs=0.07)

    def test_min_airspeed_300g(self):
        heavy = dyn.AirframeConfig(mass=0.30)
        assert dyn.min_airspeed(heavy) == pytest.approx(9.96, abs=0.1)

    def test_quadruple_mass_doubles_airspeed(self):
        v1 = dyn.min_airspeed(CFG)
        v4 = dyn.min_airspeed(dyn.AirframeConfig(mass=4 * CFG.mass))
        assert v4 == pytest.approx(2.0 * v1, rel=1e-12)

    def test_turn_radius_150g(self):
        v = dyn.min_airspeed(CFG)
        assert dyn.min_turn_radius(CFG, v, math.pi / 6) == pytest.approx(8.77, abs=0.1)

    def test_turn_radius_300g(self):
        heavy = dyn.AirframeConfig(mass=0.30)
        v = dyn.min_airspeed(heavy)
        assert dyn.min_turn_radius(heavy, v, math.pi / 6) == pytest.approx(17.5, abs=0.2)

    def test_radius_speed_squared_scaling(self):
        r1 = dyn.min_turn_radius(CFG, 6.0, 0.5)
        r2 = dyn.min_turn_radius(CFG, 12.0, 0.5)
        assert r2 == pytest.approx(4.0 * r1, rel=1e-12)

    def test_bank_bounds(self):
        with pytest.raises(ValueError):
            dyn.min_turn_radius(CFG, 8.0, 0.0)


def simulate_constant_roll_circle(roll, speed):
    """Hold roll/speed around one full circle; return mean path radius."""
    state = dyn.State(np.zeros(3), 0.0, 0.0, roll, np.array([speed, 0.0, 0.0]))
    aileron = K.k_roll_damp * roll / K.k_roll_aileron
    throttle = dyn.trim_throttle(K, speed)
    omega = (dyn.G / speed) * math.tan(roll)
    steps = int(round(2 * math.pi / (omega * 0.05)))
    positions = []
    yaw_rates = []
    for _ in range(steps):
        prev_yaw = state.yaw
        state = dyn.step(K, state, dyn.Control(throttle, aileron, 0.0, state.yaw), 0.05)
        yaw_rates.append(float(dyn.wrap_angle(state.yaw - prev_yaw)) / 0.05)
        positions.append(state.position[:2].copy())
    positions = np.array(positions)
    center = positions.mean(axis=0)
    return float(np.linalg.norm(positions - center, axis=1).mean()), float(np.mean(yaw_rates))


class TestCoordinatedTurn:
    def test_yaw_rate_matches_relation(self):
        _, rate = simulate_constant_roll_circle(0.4, 8.0)
        assert rate == pytest.approx((dyn.G / 8.0) * math.tan(0.4), rel=0.01)

    def test_circle_radius_matches_formula(self):
        for roll in (0.3, 0.45):
            radius, _ = simulate_constant_roll_circle(roll, 8.0)
            assert radius == pytest.approx(dyn.min_turn_radius(CFG, 8.0, roll), rel=0.02)


class TestEnvelope:
    def test_trimmed_inside_arena_clean(self):
        state = dyn.trim_state(8.0, position=(0.0, 0.0, 2.5))
        assert dyn.check_envelope(CFG, state) == []

    def test_slow_flight_stall_risk(self):
        state = dyn.trim_state(5.0, position=(0.0, 0.0, 2.5))
        assert dyn.EnvelopeViolation.STALL_RISK in dyn.check_envelope(CFG, state)

    def test_below_ground_out_of_arena(self):
        state = dyn.trim_state(8.0, position=(0.0, 0.0, -0.1))
        assert dyn.EnvelopeViolation.OUT_OF_ARENA in dyn.check_envelope(CFG, state)

    def test_bank_limit(self):
        state = dyn.State(np.array([0.0, 0.0, 2.0]), 0.0, 0.0, 0.8, np.array([8.0, 0, 0]))
        assert dyn.EnvelopeViolation.BANK_LIMIT in dyn.check_envelope(CFG, state)


class TestTrajectoryCsv:
    def test_roundtrip(self, tmp_path):
        state = dyn.trim_state(8.0, heading=0.3, position=(1.0, -2.0, 2.5))
        controls = [dyn.Control(0.8, 0.05 * i, 0.02, 0.3) for i in range(5)]
        traj = dyn.rollout(K, state, controls, 0.05)
        path = tmp_path / "traj.csv"
        traj.save_csv(path)
        text = path.read_text()
        assert text.splitlines()[0] == dyn.TRAJECTORY_HEADER
        back = dyn.Trajectory.load_csv(path)
        assert back.dt == pytest.approx(0.05)
        assert len(back.states) == len(traj.states)
        for a, b in zip(traj.states, back.states):
            np.testing.assert_allclose(a.as_array(), b.as_array(), rtol=1e-8)
        for a, b in zip(traj.controls, back.controls):
            np.testing.assert_allclose(a.as_array(), b.as_array(), rtol=1e-8)

    def test_last_row_zero_padded(self):
        traj = dyn.rollout(K, dyn.trim_state(8.0), [dyn.Control(0.8, 0, 0, 0)], 0.05)
        last = traj.to_csv().strip().splitlines()[-1].split(",")
        assert last[10:14] == ["0", "0", "0", "0"]

    def test_length_mismatch_rejected(self):
        s = dyn.trim_state(8.0)
        with pytest.raises(ValueError):
            dyn.Trajectory(0.05, [s, s], [])
