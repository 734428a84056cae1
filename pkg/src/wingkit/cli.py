"""Command-line entry point: simulate, sysid, sweep, dataset, linkdemo.

Every run resolves one root seed and derives per-consumer streams from it,
records the resolved configuration in its artifacts, and exits 0 on
success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import control as ctl
from . import dynamics as dyn
from . import harness as hz
from . import link
from . import percept
from . import sysid
from .seeding import stream_seed


class UsageError(ValueError):
    pass


def _read_kv_config(path: str) -> dict:
    """Flat key=value file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"malformed config line: {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _parse_levels(spec: str) -> list:
    try:
        return [float(v) for v in spec.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"malformed level list {spec!r}") from exc


def _params_from_json(text: str | None) -> dyn.DynParams:
    if not text:
        return dyn.K_REF
    values = json.loads(text)
    missing = [n for n in dyn.PARAM_NAMES if n not in values]
    if missing:
        raise UsageError(f"params JSON missing {missing}")
    return dyn.DynParams(**{n: float(values[n]) for n in dyn.PARAM_NAMES})


def _resolved_config(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


_MANEUVERS = {m.value: m for m in hz.Maneuver}


def _tracking_scenario_for(args, trial_seed: int) -> hz.Scenario:
    if args.maneuver == "straight":
        return hz.straight_tracking_scenario(
            trial_seed, duration=args.duration or 12.0, dt=args.dt
        )
    return hz.tracking_scenario(
        _MANEUVERS[args.maneuver], trial_seed, duration=args.duration, dt=args.dt
    )


def _run_one_tracking(packed):
    args_dict, trial_seed = packed
    args = argparse.Namespace(**args_dict)
    scenario = _tracking_scenario_for(args, trial_seed)
    policy = hz.VisionFollowerPolicy() if args.policy == "vision" else hz.StateFollowerPolicy()
    params = _params_from_json(args.params)
    return hz.run_tracking_trial(scenario, policy, params=params)


def _run_one_landing(packed):
    args_dict, trial_seed = packed
    args = argparse.Namespace(**args_dict)
    scenario = hz.landing_scenario(trial_seed, duration=args.duration or 15.0, dt=args.dt)
    params = _params_from_json(args.params)
    return hz.run_landing_trial(scenario, runway=ctl.DEFAULT_RUNWAY, params=params)


def cmd_simulate(args) -> int:
    if args.task == "landing" and args.policy == "vision":
        raise UsageError("landing supports --policy state only (no trained vision policy)")
    os.makedirs(args.out, exist_ok=True)
    trial_seeds = [stream_seed(args.seed, f"trial-{i}") for i in range(args.trials)]
    runner = _run_one_landing if args.task == "landing" else _run_one_tracking
    packed = [(vars(args), s) for s in trial_seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(runner, packed))
    else:
        results = [runner(p) for p in packed]

    runway = ctl.DEFAULT_RUNWAY if args.task == "landing" else None
    metrics = hz.compute_metrics(results, runway)
    config = _resolved_config(
        args, ["task", "maneuver", "policy", "trials", "dt", "duration", "params"]
    )
    hz.write_metrics_json(os.path.join(args.out, "metrics.json"), metrics, config, args.seed)
    hz.write_trials_csv(os.path.join(args.out, "trials.csv"), results, runway, config, args.seed)
    for i, r in enumerate(results):
        r.trajectory_follower.save_csv(os.path.join(args.out, f"traj_trial{i:03d}_follower.csv"))
        if r.trajectory_leader is not None:
            r.trajectory_leader.save_csv(os.path.join(args.out, f"traj_trial{i:03d}_leader.csv"))
    print(
        f"{args.task}: {args.trials} trials, sr={metrics.sr:.3f}"
        + (f", ate={metrics.ate_cm:.1f} cm" if metrics.ate_cm is not None else "")
        + (f", ald={metrics.ald_cm:.1f} cm" if metrics.ald_cm is not None else "")
    )
    return 0


def cmd_sysid(args) -> int:
    params = _params_from_json(args.params)
    if args.generate:
        dataset = sysid.make_excitation_dataset(
            params, args.transitions, dt=args.dt, seed=args.seed, noise_sigma=args.noise
        )
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            controls = [dyn.Control.from_array(u) for u in dataset.u]
            states = [dyn.State.from_array(x) for x in dataset.x]
            states.append(dyn.State.from_array(dataset.x_next[-1]))
            dyn.Trajectory(dataset.dt, states, controls).save_csv(
                os.path.join(args.out, "excitation.csv")
            )
    else:
        if not args.input:
            raise UsageError("sysid needs --input CSV or --generate")
        if not os.path.exists(args.input):
            print(f"error: input file not found: {args.input}", file=sys.stderr)
            return 1
        dataset = sysid.StateActionDataset.from_trajectory(dyn.Trajectory.load_csv(args.input))

    guess = dyn.DynParams.from_array(params.as_array() * args.guess_scale)
    fit = sysid.fit_params(dataset, guess)
    print(f"{'parameter':<16}{'fitted':>14}{'stderr':>14}")
    for name, value, err in zip(
        dyn.PARAM_NAMES, fit.params.as_array(), fit.per_param_stderr
    ):
        print(f"{name:<16}{value:>14.6g}{err:>14.3g}")
    print(f"sse={fit.sse:.6g} iterations={fit.iterations} converged={fit.converged}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "fit.json"), "w", encoding="utf-8") as f:
            f.write(fit.to_json() + "\n")
    return 0


def cmd_sweep(args) -> int:
    scales = _parse_levels(args.scale) if args.scale else []
    peppers = _parse_levels(args.salt_pepper) if args.salt_pepper else []
    ranges = percept.AppearanceRanges()
    for level in scales:
        if not ranges.scale[0] <= level <= ranges.scale[1]:
            raise UsageError(f"scale level {level} outside {ranges.scale}")
    for level in peppers:
        if not ranges.salt_pepper[0] <= level <= ranges.salt_pepper[1]:
            raise UsageError(f"salt-pepper level {level} outside {ranges.salt_pepper}")

    def factory(i, appearance):
        return hz.straight_tracking_scenario(
            stream_seed(args.seed, f"trial-{i}"),
            duration=args.duration or 8.0,
            dt=args.dt,
            appearance=appearance,
        )

    policy_factory = (
        hz.StateFollowerPolicy if args.policy == "state" else hz.VisionFollowerPolicy
    )
    points = hz.perturbation_sweep(
        factory, scales, peppers, trials_per_level=args.trials, policy_factory=policy_factory
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# seed={args.seed} policy={args.policy} trials={args.trials}\n")
        f.write("kind,level,sr\n")
        for p in points:
            f.write(f"{p.kind},{p.level:.9g},{p.sr:.9g}\n")
    for p in points:
        print(f"{p.kind:<12}{p.level:>8.3g}{p.sr:>8.3f}")
    return 0


def cmd_dataset(args) -> int:
    maneuvers = list(hz.Maneuver)
    scenarios = [
        hz.tracking_scenario(
            maneuvers[i % len(maneuvers)],
            stream_seed(args.seed, f"trial-{i}"),
            duration=args.duration,
            dt=args.dt,
        )
        for i in range(args.trials)
    ]
    result = hz.generate_il_dataset(
        scenarios, noise_sigma=args.sigma, out_dir=args.out, params=_params_from_json(args.params)
    )
    with open(os.path.join(args.out, "run_config.json"), "w", encoding="utf-8") as f:
        json.dump(
            {"seed": args.seed, "trials": args.trials, "duration": args.duration,
             "sigma": args.sigma, "rows": result["rows"]},
            f, indent=2, sort_keys=True,
        )
        f.write("\n")
    print(f"dataset: {result['rows']} rows -> {result['manifest']}")
    return 0


def cmd_linkdemo(args) -> int:
    scenario = hz.straight_tracking_scenario(args.seed, duration=args.duration, dt=args.dt)
    engine = hz.TrackingEngine(scenario)
    policy = hz.VisionFollowerPolicy()
    config = link.LinkConfig(
        tick_rate=1.0 / args.dt,
        drop_probability=args.drop,
        latency_ticks=args.latency,
        seed=args.seed,
    )
    schedule = {}
    if args.mode_switch_tick is not None:
        manual = link.ControlMsg.from_control(
            dyn.Control(throttle=0.8, aileron=0.0, pitch_cmd=0.0, yaw_cmd=0.0)
        )
        schedule[args.mode_switch_tick] = [link.ModeMsg(link.Mode.MANUAL), manual]
    transport = link.MemoryTransport() if args.memory else link.UdpTransport(args.port)
    try:
        result = link.run_loop(
            engine, policy, config=config, transport=transport,
            duration_s=args.duration, operator_schedule=schedule,
        )
    finally:
        transport.close()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "loop_log.jsonl")
    header = json.dumps(
        {"seed": args.seed, "drop": args.drop, "latency": args.latency,
         "duration": args.duration, "transport": "memory" if args.memory else "udp"},
        sort_keys=True,
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        f.write(result.log_jsonl())
    dropped = sum(1 for row in result.log if row["dropped"])
    print(
        f"linkdemo: {len(result.log)} ticks, {dropped} dropped frames, "
        f"{len(result.safety_events)} safety events -> {path}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wingkit", description="Desk-scale fixed-wing autonomy toolkit."
    )
    parser.add_argument("--config", help="flat key=value config file (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--dt", type=float, default=dyn.DT_DEFAULT)
        p.add_argument("--params", help="dynamics parameters as JSON", default=None)

    p = sub.add_parser("simulate", help="run tracking or landing trials")
    common(p)
    p.add_argument("--task", choices=["tracking", "landing"], required=True)
    p.add_argument(
        "--maneuver",
        choices=sorted(_MANEUVERS) + ["straight"],
        default="left-s-descent",
    )
    p.add_argument("--policy", choices=["state", "vision"], default="state")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sysid", help="fit dynamics parameters from a trajectory CSV")
    common(p)
    p.add_argument("--input", help="trajectory CSV to fit")
    p.add_argument("--generate", action="store_true", help="emit a synthetic excitation dataset")
    p.add_argument("--transitions", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--guess-scale", type=float, default=2.0)
    p.set_defaults(func=cmd_sysid)

    p = sub.add_parser("sweep", help="appearance-perturbation SR sweep")
    common(p)
    p.add_argument("--scale", help="comma list of scale levels")
    p.add_argument("--salt-pepper", dest="salt_pepper", help="comma list of fractions")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--policy", choices=["state", "vision"], default="vision")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dataset", help="export an imitation-learning dataset")
    common(p)
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=0.0, help="expert noise std per channel")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("linkdemo", help="run the 20 Hz loop over a loopback link")
    common(p)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--latency", type=int, default=0)
    p.add_argument("--port", type=int, default=link.DEFAULT_UDP_PORT)
    p.add_argument("--memory", action="store_true", help="in-memory transport instead of UDP")
    p.add_argument("--mode-switch-tick", type=int, default=None)
    p.set_defaults(func=cmd_linkdemo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # A config file provides defaults; explicit flags still win.
    if argv is None:
        argv = sys.argv[1:]
    try:
        if "--config" in argv:
            idx = list(argv).index("--config")
            overrides = _read_kv_config(argv[idx + 1])
            for sp in parser._subparsers._group_actions[0].choices.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in overrides.items() if k in known})
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
