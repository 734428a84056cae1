"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

Tolerances are pinned here and nowhere else.
"""

import json
import math
import time

import numpy as np
import pytest

from wingkit import control as ctl
from wingkit import dynamics as dyn
from wingkit import estimation as est
from wingkit import geom, harness as hz, link, percept, sysid
from wingkit.cli import main as cli_main
from wingkit.seeding import stream_seed

K = dyn.K_REF


def report(num, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance {num:2d}] {status}: {name}" + (f" ({detail})" if detail else ""))
    assert passed, f"criterion {num}: {name} {detail}"


def test_01_performance_envelope_numbers():
    t0 = time.perf_counter()
    light = dyn.AirframeConfig(mass=0.15)
    heavy = dyn.AirframeConfig(mass=0.30)
    v_light = dyn.min_airspeed(light)
    v_heavy = dyn.min_airspeed(heavy)
    r_light = dyn.min_turn_radius(light, v_light, math.pi / 6)
    r_heavy = dyn.min_turn_radius(heavy, v_heavy, math.pi / 6)
    ok = (
        abs(v_light - 7.04) <= 0.07
        and abs(r_light - 8.77) <= 0.1
        and abs(v_heavy - 9.96) <= 0.1
        and abs(r_heavy - 17.5) <= 0.2
    )
    elapsed = time.perf_counter() - t0
    report(
        1,
        "stall-speed / turn-radius figures (7.04, 8.77, 9.96, 17.5)",
        ok and elapsed < 1.0,
        f"got {v_light:.3f} m/s, {r_light:.3f} m, {v_heavy:.3f} m/s, {r_heavy:.2f} m",
    )


def test_02_sysid_recovery():
    t0 = time.perf_counter()
    clean = sysid.make_excitation_dataset(K, 500, seed=7)
    fit = sysid.fit_params(clean, K.scaled(2.0))
    rel_clean = np.abs(fit.params.as_array() / K.as_array() - 1.0).max()
    ok = rel_clean < 1e-3 and fit.sse < 1e-12

    worst_noisy = 0.0
    for seed in range(10):
        noisy = sysid.make_excitation_dataset(K, 500, seed=seed, noise_sigma=0.01)
        nfit = sysid.fit_params(noisy, K.scaled(2.0))
        worst_noisy = max(
            worst_noisy, np.abs(nfit.params.as_array() / K.as_array() - 1.0).max()
        )
    elapsed = time.perf_counter() - t0
    ok = ok and worst_noisy < 0.05 and elapsed < 30.0
    report(
        2,
        "parameter recovery: 0.1% noiseless, 5% under sigma=0.01 noise",
        ok,
        f"clean {rel_clean:.2e}, noisy worst {worst_noisy:.3f}, {elapsed:.1f} s",
    )


def test_03_coordinated_turn_consistency():
    t0 = time.perf_counter()
    worst = 0.0
    for roll, speed in ((0.3, 8.0), (0.45, 8.0), (0.4, 7.0)):
        state = dyn.State(np.zeros(3), 0.0, 0.0, roll, np.array([speed, 0.0, 0.0]))
        aileron = K.k_roll_damp * roll / K.k_roll_aileron
        throttle = dyn.trim_throttle(K, speed)
        omega = (dyn.G / speed) * math.tan(roll)
        steps = int(round(2 * math.pi / (omega * dyn.DT_DEFAULT)))
        track = []
        for _ in range(steps):
            state = dyn.step(K, state, dyn.Control(throttle, aileron, 0.0, state.yaw), dyn.DT_DEFAULT)
            track.append(state.position[:2].copy())
        track = np.array(track)
        radius = float(np.linalg.norm(track - track.mean(axis=0), axis=1).mean())
        expect = dyn.min_turn_radius(dyn.AirframeConfig(), speed, roll)
        worst = max(worst, abs(radius / expect - 1.0))
    elapsed = time.perf_counter() - t0
    report(
        3,
        "constant-roll circle radius matches V^2/(g tan roll) within 2%",
        worst < 0.02 and elapsed < 10.0,
        f"worst deviation {worst * 100:.2f}%",
    )


def test_04_tracking_protocol():
    t0 = time.perf_counter()
    expert_results = []
    for maneuver in hz.Maneuver:
        for seed in range(10):
            sc = hz.tracking_scenario(maneuver, seed=seed)
            expert_results.append(hz.run_tracking_trial(sc, hz.StateFollowerPolicy()))
    expert = hz.compute_metrics(expert_results)
    ates = [r.tracking_error_cm() for r in expert_results]
    expert_ok = expert.sr == 1.0 and all(math.isfinite(a) for a in ates)

    def straight(i, appearance):
        return hz.straight_tracking_scenario(
            stream_seed(100, f"trial-{i}"), duration=12.0, appearance=appearance
        )

    vision_wins = 0
    for i in range(10):
        sc = straight(i, percept.LeaderAppearance())
        vision_wins += bool(hz.run_tracking_trial(sc, hz.VisionFollowerPolicy()).success)
    vision_sr = vision_wins / 10

    def sweep_scenario(i, appearance):
        return hz.straight_tracking_scenario(
            stream_seed(100, f"trial-{i}"), duration=8.0, appearance=appearance
        )

    points = hz.perturbation_sweep(sweep_scenario, [1.0, 0.5], [], trials_per_level=10)
    sr_by_scale = {p.level: p.sr for p in points}
    trend_ok = sr_by_scale[0.5] <= sr_by_scale[1.0]

    elapsed = time.perf_counter() - t0
    ok = expert_ok and vision_sr >= 0.9 and trend_ok and elapsed < 120.0
    report(
        4,
        "SR=100% expert over 30 trials; vision SR>=90% straight; non-increasing under 0.5x scale",
        ok,
        f"expert SR {expert.sr:.2f}, vision SR {vision_sr:.2f}, "
        f"scale SRs {sr_by_scale[1.0]:.2f}->{sr_by_scale[0.5]:.2f}, {elapsed:.0f} s",
    )


def test_05_landing_protocol():
    t0 = time.perf_counter()
    results = [hz.run_landing_trial(hz.landing_scenario(seed)) for seed in range(10)]
    alds = [r.lateral_deviation_cm(ctl.DEFAULT_RUNWAY) for r in results]
    all_success = all(r.success for r in results)
    ald_ok = all(a is not None and a <= 100.0 for a in alds)

    again = [hz.run_landing_trial(hz.landing_scenario(seed)) for seed in range(10)]
    deterministic = all(
        a.lateral_deviation_cm(ctl.DEFAULT_RUNWAY) == b.lateral_deviation_cm(ctl.DEFAULT_RUNWAY)
        for a, b in zip(results, again)
    )
    elapsed = time.perf_counter() - t0
    ok = all_success and ald_ok and deterministic and elapsed < 60.0
    report(
        5,
        "10/10 perturbed landings succeed with ALD <= 100 cm, deterministic",
        ok,
        f"ALD max {max(alds):.1f} cm, {elapsed:.1f} s",
    )


def test_06_estimator_calibration():
    t0 = time.perf_counter()
    pose = geom.Pose(np.array([5.0, 1.0, 2.0]), 0.05, 0.3, -0.1)
    pos_errs = []
    yaw_errs = []
    for seed in range(10000):
        out = est.simulate_fallback_estimate(pose, est.EstimatorNoiseModel.calibrated(seed))
        pos_errs.append(float(np.linalg.norm(out.pose.position - pose.position)))
        yaw_errs.append(abs(float(geom.wrap_angle(out.pose.yaw - pose.yaw))))
    mean_pos = float(np.mean(pos_errs))
    mean_yaw_deg = math.degrees(float(np.mean(yaw_errs)))
    ok = abs(mean_pos / 0.42 - 1.0) <= 0.03 and abs(mean_yaw_deg / 2.37 - 1.0) <= 0.03
    elapsed = time.perf_counter() - t0
    report(
        6,
        "fallback estimator: mean position error 0.42 m +-3%, yaw 2.37 deg +-3%",
        ok and elapsed < 30.0,
        f"{mean_pos:.4f} m, {mean_yaw_deg:.3f} deg",
    )


def test_07_safety_monitor():
    def reference_fold(values, threshold=0.7, window=5):
        raised, run = [], 0
        for i, v in enumerate(values):
            run = run + 1 if v < threshold else 0
            if run == window:
                raised.append(i)
        return raised

    def fold(values):
        monitor = est.QualityMonitor()
        out = []
        for i, v in enumerate(values):
            monitor, raised = est.monitor_update(monitor, v)
            if raised:
                out.append(i)
        return out

    exact_fifth = fold([0.65] * 8) == [4]
    never_early = fold([0.6] * 4 + [0.8] + [0.6] * 4) == []
    resets = fold([0.6] * 4 + [0.7] + [0.6] * 5) == [9]

    rng = np.random.default_rng(55)
    property_ok = True
    for _ in range(500):
        seq = list(rng.uniform(0.4, 1.0, size=rng.integers(0, 60)))
        if fold(seq) != reference_fold(seq):
            property_ok = False
            break
    ok = exact_fifth and never_early and resets and property_ok
    report(7, "SSIM monitor flags exactly on the 5th consecutive sub-0.7 frame", ok)


def test_08_geometry_properties():
    rng = np.random.default_rng(21)
    worst_euler = 0.0
    worst_codec = 0.0
    for _ in range(2000):
        angles = (rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi), rng.uniform(-math.pi, math.pi))
        back = geom.rotation_to_euler(geom.euler_to_rotation(*angles))
        worst_euler = max(
            worst_euler,
            abs(back[0] - angles[0]),
            abs(float(geom.wrap_angle(back[1] - angles[1]))),
            abs(float(geom.wrap_angle(back[2] - angles[2]))),
        )
        dec = est.decode_angles(est.encode_angles(*angles))
        worst_codec = max(
            worst_codec,
            abs(dec[0] - angles[0]),
            abs(float(geom.wrap_angle(dec[1] - angles[1]))),
            abs(float(geom.wrap_angle(dec[2] - angles[2]))),
        )

    worst_residual = 0.0
    for trial in range(50):
        src = rng.normal(size=(12, 3))
        rot = geom.euler_to_rotation(rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-3, 3))
        scale = rng.uniform(0.3, 3.0)
        shift = rng.normal(size=3)
        tgt = scale * src @ rot.T + shift
        st = geom.kabsch_umeyama(src, tgt)
        worst_residual = max(worst_residual, float(np.sum((st.apply(src) - tgt) ** 2)))

    intr = geom.CameraIntrinsics(300.0, 300.0, 80.0, 60.0, 160, 120)
    cam = geom.Pose(np.zeros(3))
    near = geom.project_ellipsoid(intr, cam, geom.Ellipsoid([20.0, 0, 0], [0.3] * 3))
    far = geom.project_ellipsoid(intr, cam, geom.Ellipsoid([40.0, 0, 0], [0.3] * 3))
    area_ratio = near.area / far.area

    ok = (
        worst_euler < 1e-10
        and worst_codec < 1e-10
        and worst_residual < 1e-9
        and abs(area_ratio / 4.0 - 1.0) < 0.1
    )
    report(
        8,
        "geometry roundtrips, alignment residual, area-depth scaling",
        ok,
        f"euler {worst_euler:.1e}, codec {worst_codec:.1e}, "
        f"residual {worst_residual:.1e}, area ratio {area_ratio:.3f}",
    )


def _random_message(rng):
    kind = rng.integers(0, 5)
    if kind == 0:
        w, h = int(rng.integers(1, 12)), int(rng.integers(1, 8))
        return link.FrameMsg(w, h, 0, rng.integers(0, 256, w * h * 3, dtype=np.uint8).tobytes())
    if kind == 1:
        vals = tuple(float(np.float32(v)) for v in rng.uniform(-1, 1, 4))
        widths = [int(w) for w in rng.integers(1000, 2001, 4)]
        return link.ControlMsg(vals, link.PpmFrame(*widths))
    if kind == 2:
        return link.ModeMsg(link.Mode(int(rng.integers(0, 2))))
    if kind == 3:
        return link.SafetyMsg(bool(rng.integers(0, 2)), float(np.float32(rng.uniform(-1, 1))))
    return link.AckMsg()


def test_09_link_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    mismatches = 0
    for _ in range(100000):
        msg = _random_message(rng)
        seq = int(rng.integers(0, 2**32))
        ts = int(rng.integers(0, 2**63))
        back, seq2, ts2 = link.deserialize(link.serialize(msg, seq, ts))
        if back != msg or seq2 != seq or ts2 != ts:
            mismatches += 1
    roundtrip_ok = mismatches == 0

    msg = link.ControlMsg((0.5, -0.5, 0.25, 0.1), link.PpmFrame(1500, 1250, 1625, 1550))
    data = link.serialize(msg, 1, 2)
    corruption_ok = True
    for byte in range(22, len(data) - 4):
        for bit in range(8):
            corrupted = bytearray(data)
            corrupted[byte] ^= 1 << bit
            try:
                link.deserialize(bytes(corrupted))
                corruption_ok = False
            except link.BadCrc:
                pass

    sc = hz.straight_tracking_scenario(seed=4, duration=2.0)
    direct = hz.run_tracking_trial(sc, hz.VisionFollowerPolicy())
    engine = hz.TrackingEngine(hz.straight_tracking_scenario(seed=4, duration=2.0))
    looped = link.run_loop(engine, hz.VisionFollowerPolicy(), duration_s=2.0)
    loop_traj, _ = looped.engine.trajectories()
    identity_ok = np.array_equal(
        direct.trajectory_follower.positions(), loop_traj.positions()
    )

    engine2 = hz.TrackingEngine(hz.straight_tracking_scenario(seed=4, duration=1.0))
    manual = link.ControlMsg.from_control(dyn.Control(0.3, 0.1, 0.0, 0.0))
    res = link.run_loop(
        engine2, hz.VisionFollowerPolicy(), duration_s=1.0,
        operator_schedule={7: [link.ModeMsg(link.Mode.MANUAL), manual]},
    )
    override_ok = (
        res.engine.follower_controls[7].throttle == float(np.float32(0.3))
        and res.log[7]["mode"] == "manual"
    )

    elapsed = time.perf_counter() - t0
    ok = roundtrip_ok and corruption_ok and identity_ok and override_ok
    report(
        9,
        "wire roundtrip x1e5, CRC catches bit flips, loop==linkless, 1-tick override",
        ok,
        f"{mismatches} mismatches, {elapsed:.0f} s",
    )


def test_10_end_to_end_determinism(tmp_path):
    args = (
        "simulate", "--task", "tracking", "--maneuver", "left-s-descent",
        "--policy", "state", "--trials", "3", "--seed", "13",
    )
    assert cli_main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli_main([*args, "--out", str(tmp_path / "b")]) == 0

    ma = json.loads((tmp_path / "a" / "metrics.json").read_text())
    mb = json.loads((tmp_path / "b" / "metrics.json").read_text())
    ma["metrics"].pop("art_s")
    mb["metrics"].pop("art_s")
    metrics_ok = json.dumps(ma, sort_keys=True) == json.dumps(mb, sort_keys=True)

    csv_ok = True
    for name in sorted(p.name for p in (tmp_path / "a").glob("traj_*.csv")):
        if (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes():
            csv_ok = False
    report(
        10,
        "cmd_simulate byte-identical metrics.json (ART excluded) and trajectory CSVs",
        metrics_ok and csv_ok,
    )
