import json
import subprocess
import sys

import numpy as np
import pytest

from wingkit import cli
from wingkit import dynamics as dyn


def run_cli(*args):
    return cli.main(list(args))


class TestSimulate:
    def test_tracking_state_policy(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            "simulate", "--task", "tracking", "--maneuver", "left-s-descent",
            "--policy", "state", "--trials", "3", "--seed", "7", "--out", str(out),
        )
        assert code == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["metrics"]["sr"] == 1.0
        assert payload["seed"] == 7
        assert payload["config"]["task"] == "tracking"
        assert (out / "trials.csv").exists()
        assert (out / "traj_trial000_follower.csv").exists()
        assert (out / "traj_trial000_leader.csv").exists()

    def test_landing(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli("simulate", "--task", "landing", "--trials", "2", "--seed", "3",
                       "--out", str(out))
        assert code == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["metrics"]["sr"] == 1.0
        assert payload["metrics"]["ald_cm"] <= 100.0

    def test_landing_vision_rejected(self, tmp_path):
        code = run_cli("simulate", "--task", "landing", "--policy", "vision",
                       "--out", str(tmp_path))
        assert code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("simulate")
        assert exc.value.code == 2

    def test_determinism_byte_identical(self, tmp_path):
        args = ("simulate", "--task", "tracking", "--maneuver", "right-s-ascent",
                "--policy", "state", "--trials", "2", "--seed", "11")
        run_cli(*args, "--out", str(tmp_path / "a"))
        run_cli(*args, "--out", str(tmp_path / "b"))

        ma = json.loads((tmp_path / "a" / "metrics.json").read_text())
        mb = json.loads((tmp_path / "b" / "metrics.json").read_text())
        ma["metrics"].pop("art_s"), mb["metrics"].pop("art_s")
        assert json.dumps(ma, sort_keys=True) == json.dumps(mb, sort_keys=True)
        for name in ("traj_trial000_follower.csv", "traj_trial001_leader.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_jobs_parallel_matches_serial(self, tmp_path):
        args = ("simulate", "--task", "tracking", "--maneuver", "left-s-descent",
                "--policy", "state", "--trials", "3", "--seed", "5")
        run_cli(*args, "--out", str(tmp_path / "serial"))
        run_cli(*args, "--jobs", "3", "--out", str(tmp_path / "par"))
        a = (tmp_path / "serial" / "traj_trial002_follower.csv").read_bytes()
        b = (tmp_path / "par" / "traj_trial002_follower.csv").read_bytes()
        assert a == b


class TestSysid:
    def test_generate_and_fit(self, tmp_path, capsys):
        out = tmp_path / "fit"
        code = run_cli("sysid", "--generate", "--transitions", "200", "--seed", "3",
                       "--out", str(out))
        assert code == 0
        printed = capsys.readouterr().out
        assert "k_thrust" in printed
        payload = json.loads((out / "fit.json").read_text())
        assert payload["converged"]
        for name, val in payload["params"].items():
            assert val == pytest.approx(getattr(dyn.K_REF, name), rel=1e-3)
        assert (out / "excitation.csv").exists()

    def test_fit_from_csv(self, tmp_path):
        gen = tmp_path / "gen"
        run_cli("sysid", "--generate", "--transitions", "150", "--seed", "4", "--out", str(gen))
        out = tmp_path / "fit2"
        code = run_cli("sysid", "--input", str(gen / "excitation.csv"), "--out", str(out))
        assert code == 0
        payload = json.loads((out / "fit.json").read_text())
        assert payload["sse"] < 1e-10

    def test_missing_input_exits_1(self, capsys):
        code = run_cli("sysid", "--input", "/nonexistent/file.csv")
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_no_input_no_generate_exits_2(self):
        assert run_cli("sysid") == 2


class TestSweep:
    def test_rows_written(self, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli("sweep", "--scale", "1.0,1.5", "--salt-pepper", "0.1",
                       "--trials", "1", "--duration", "3", "--seed", "5",
                       "--policy", "state", "--out", str(out))
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[1] == "kind,level,sr"
        assert len(lines) == 2 + 3

    def test_state_policy_rows_all_one(self, tmp_path):
        out = tmp_path / "sweep"
        run_cli("sweep", "--scale", "0.5,1.0,2.0", "--trials", "1", "--duration", "3",
                "--seed", "5", "--policy", "state", "--out", str(out))
        rows = (out / "sweep.csv").read_text().strip().splitlines()[2:]
        assert all(row.split(",")[2] == "1" for row in rows)

    def test_level_outside_range_exits_2(self, tmp_path):
        assert run_cli("sweep", "--scale", "2.5", "--out", str(tmp_path)) == 2
        assert run_cli("sweep", "--salt-pepper", "0.4", "--out", str(tmp_path)) == 2

    def test_malformed_levels_exit_2(self, tmp_path):
        assert run_cli("sweep", "--scale", "a,b", "--out", str(tmp_path)) == 2


class TestDataset:
    def test_manifest_rows_match_frames(self, tmp_path):
        out = tmp_path / "ds"
        code = run_cli("dataset", "--trials", "2", "--duration", "1.0", "--sigma", "0.02",
                       "--seed", "2", "--out", str(out))
        assert code == 0
        rows = [json.loads(l) for l in (out / "manifest.jsonl").read_text().splitlines()]
        assert len(rows) == 2 * 20
        for row in rows[:3]:
            assert (out / row["frame"]).exists()
            assert (out / row["mask"]).exists()


class TestLinkdemo:
    def test_memory_transport(self, tmp_path):
        out = tmp_path / "demo"
        code = run_cli("linkdemo", "--memory", "--duration", "1.0", "--drop", "0.2",
                       "--seed", "3", "--out", str(out))
        assert code == 0
        lines = (out / "loop_log.jsonl").read_text().strip().splitlines()
        header = json.loads(lines[0])
        assert header["seed"] == 3
        assert len(lines) == 1 + 20

    def test_seeded_drop_set_reproducible(self, tmp_path):
        def dropped(path):
            lines = path.read_text().strip().splitlines()[1:]
            return [json.loads(l)["tick"] for l in lines if json.loads(l)["dropped"]]

        run_cli("linkdemo", "--memory", "--duration", "1.0", "--drop", "0.3", "--seed", "5",
                "--out", str(tmp_path / "a"))
        run_cli("linkdemo", "--memory", "--duration", "1.0", "--drop", "0.3", "--seed", "5",
                "--out", str(tmp_path / "b"))
        assert dropped(tmp_path / "a" / "loop_log.jsonl") == dropped(tmp_path / "b" / "loop_log.jsonl")

    def test_mode_switch_logged_at_tick(self, tmp_path):
        out = tmp_path / "demo"
        run_cli("linkdemo", "--memory", "--duration", "1.0", "--mode-switch-tick", "12",
                "--seed", "1", "--out", str(out))
        lines = (out / "loop_log.jsonl").read_text().strip().splitlines()[1:]
        rows = [json.loads(l) for l in lines]
        assert rows[11]["mode"] == "autonomous"
        assert rows[12]["mode"] == "manual"


class TestConfigFile:
    def test_config_provides_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("trials = 2\nseed = 42\n# comment\n")
        out = tmp_path / "run"
        code = run_cli("--config", str(cfg), "simulate", "--task", "tracking",
                       "--policy", "state", "--seed", "7", "--out", str(out))
        assert code == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["config"]["trials"] == 2  # from config file
        assert payload["seed"] == 7  # explicit flag wins

    def test_malformed_config_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not a kv line\n")
        assert run_cli("--config", str(cfg), "simulate", "--task", "tracking") == 2


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "wingkit.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    for sub in ("simulate", "sysid", "sweep", "dataset", "linkdemo"):
        assert sub in proc.stdout
