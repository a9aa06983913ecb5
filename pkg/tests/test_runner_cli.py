import json
import os

import numpy as np
import pytest

from mfsde.cli import main
from mfsde.config import ExperimentConfig
from mfsde.runner import run_experiment

EXP_HALF = 0.6065306597126334


def small_estimate_config(**over):
    raw = {
        "task": "estimate",
        "model": {"id": "linear_mf_ou", "dim": 1,
                  "params": {"a": -1.0, "c": 0.5, "sigma": 0.2}},
        "grid": {"horizon": 1.0, "steps": 64},
        "particles": 256,
        "replications": 12,
        "gate": "linear",
        "phi": {"kind": "constant", "value": [1.0]},
        "f": {"kind": "coord_mean", "axis": 0},
        "init": {"kind": "gaussian", "mean": [0.0], "std": 1.0},
        "seed": 777,
        "expected": {"value": EXP_HALF, "rtol": 0.05},
    }
    raw.update(over)
    return raw


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


class TestRunner:
    def test_estimate_artifacts_and_pass(self, tmp_path):
        cfg = ExperimentConfig.from_dict(small_estimate_config())
        out = tmp_path / "run"
        report = run_experiment(cfg, out)
        assert report.passed
        assert (out / "report.json").exists()
        assert (out / "results.csv").exists()
        blob = json.loads((out / "report.json").read_text())
        assert blob["config_hash"] == cfg.config_hash()
        assert abs(blob["payload"]["result"]["estimate"] - EXP_HALF) < 0.05
        header = (out / "results.csv").read_text().splitlines()[0]
        assert "elapsed" not in header

    def test_results_csv_reproducible(self, tmp_path):
        cfg = ExperimentConfig.from_dict(small_estimate_config())
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_experiment(cfg, a)
        run_experiment(cfg, b, threads=3)
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
        other = ExperimentConfig.from_dict(small_estimate_config(seed=778))
        c = tmp_path / "c"
        run_experiment(other, c)
        assert (a / "results.csv").read_bytes() != (c / "results.csv").read_bytes()

    def test_compare_zero_phi_exact(self, tmp_path):
        raw = small_estimate_config(task="compare",
                                    phi={"kind": "zero"})
        raw.pop("expected")
        cfg = ExperimentConfig.from_dict(raw)
        report = run_experiment(cfg, tmp_path / "cmp")
        assert report.passed
        assert report.payload["bismut"]["estimate"] == 0.0
        assert report.payload["fd"]["estimate"] == 0.0

    def test_a2_task(self, tmp_path):
        raw = small_estimate_config(
            task="a2_check", replications=4, particles=512,
            model={"id": "linear_mf_ou", "dim": 1,
                   "params": {"a": 0.0, "c": 0.0, "sigma": 1.0}},
            a2={"mu": {"kind": "point", "at": [0.0]},
                "nu": {"kind": "point", "at": [0.5]}},
            sweep={"t_points": [0.5, 1.0]})
        raw.pop("expected")
        cfg = ExperimentConfig.from_dict(raw)
        out = tmp_path / "a2"
        report = run_experiment(cfg, out)
        assert report.passed
        assert (out / "tv_lower.dat").exists()
        assert (out / "bound_rhs.dat").exists()
        assert (out / "plot.gp").exists()
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0] == "t,statistic,value,se,pass"

    def test_tangent_check_task(self, tmp_path):
        raw = small_estimate_config(
            task="tangent_check", replications=1, particles=64,
            model={"id": "double_well_mf", "dim": 1, "params": {}},
            tangent={"eps": [1e-2, 5e-3]})
        raw.pop("expected")
        cfg = ExperimentConfig.from_dict(raw)
        report = run_experiment(cfg, tmp_path / "tc")
        assert report.passed
        assert (tmp_path / "tc" / "error_vs_eps.dat").exists()


class TestCli:
    def test_run_exits_zero(self, tmp_path, capsys):
        path = write_config(tmp_path, small_estimate_config())
        code = main(["run", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 0
        assert "PASS" in capsys.readouterr().out

    def test_malformed_config_names_field(self, tmp_path, capsys):
        raw = small_estimate_config(grid={"horizon": 1.0, "steps": 0})
        path = write_config(tmp_path, raw)
        code = main(["run", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 2
        assert "grid.steps" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "none.json")])
        assert code == 2

    def test_compare_subcommand_requires_compare_task(self, tmp_path, capsys):
        path = write_config(tmp_path, small_estimate_config())
        code = main(["compare", "--config", path, "--out", str(tmp_path / "x")])
        assert code == 2
        assert "task" in capsys.readouterr().err

    def test_seed_override_changes_hash(self, tmp_path, capsys):
        path = write_config(tmp_path, small_estimate_config())
        main(["run", "--config", path, "--out", str(tmp_path / "o1")])
        main(["run", "--config", path, "--out", str(tmp_path / "o2"),
              "--seed", "31415"])
        h1 = json.loads((tmp_path / "o1" / "report.json").read_text())["config_hash"]
        h2 = json.loads((tmp_path / "o2" / "report.json").read_text())["config_hash"]
        assert h1 != h2

    def test_dump_trajectories(self, tmp_path):
        raw = small_estimate_config(particles=16, replications=8,
                                    grid={"horizon": 0.5, "steps": 8})
        raw.pop("expected")
        path = write_config(tmp_path, raw)
        out = tmp_path / "dump"
        code = main(["run", "--config", path, "--out", str(out),
                     "--dump-trajectories"])
        assert code == 0
        nodes = sorted(os.listdir(out / "trajectories"))
        assert len(nodes) == 9
        first = (out / "trajectories" / nodes[0]).read_text().splitlines()
        assert first[0] == "particle,x0,v0"
        assert len(first) == 17

    def test_sweep_subcommand(self, tmp_path):
        raw = small_estimate_config(
            task="a1_sweep", particles=128, replications=8,
            grid={"horizon": 1.0, "steps": 32},
            sweep={"t_points": [0.5, 1.0], "probe_count": 1})
        raw.pop("expected")
        path = write_config(tmp_path, raw)
        code = main(["sweep", "--config", path, "--out", str(tmp_path / "sw")])
        assert code == 0
        assert (tmp_path / "sw" / "c_hat.dat").exists()
