"""Task execution: turns a validated config into result artifacts.

Each run writes ``report.json`` (config echo, hash, payload, wall time) and
``results.csv`` (the payload rows only, reproducible byte-for-byte for a
fixed config and seed); sweep tasks additionally write two-column ``*.dat``
files per curve and a ``plot.gp`` gnuplot script.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass

from .bismut import GateFunction, estimate_intrinsic_derivative
from .config import ExperimentConfig, make_f, make_init, make_phi
from .errors import ConfigError
from .measures import EmpiricalMeasure
from .models import make_model
from .oracles import (Budget, FdConfig, SweepTable, a1_sweep, a2_check,
                      fd_intrinsic_derivative, pathwise_tangent_check)
from .rng import RngSpec
from .solver import TimeGrid, dump_trajectories, simulate

VERSION = "0.1.0"


@dataclass
class RunReport:
    task: str
    config_hash: str
    passed: bool
    payload: dict
    elapsed_s: float
    version: str = VERSION


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_dat(path, pairs):
    with open(path, "w") as fh:
        for x, y in pairs:
            fh.write(f"{_fmt(float(x))} {_fmt(float(y))}\n")


def _write_plot_script(out_dir, curves, xlabel):
    lines = [
        "set terminal pngcairo size 900,600",
        "set output 'sweep.png'",
        f"set xlabel '{xlabel}'",
        "set key outside",
    ]
    plots = ", ".join(f"'{name}.dat' using 1:2 with linespoints title '{name}'"
                      for name in curves)
    lines.append("plot " + plots)
    with open(os.path.join(out_dir, "plot.gp"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _result_row(res):
    d = res.to_json_dict()
    return [d["estimate"], d["std_error"], d["N"], d["M"], d["K"], d["T"],
            d["gate"], d["model"], d["phi"], d["f"], d["seed"]]


_RESULT_HEADER = ["estimate", "std_error", "N", "M", "K", "T", "gate",
                  "model", "phi", "f", "seed"]


def _sweep_rows(table: SweepTable):
    return [[r.t, r.statistic, r.value, r.se, r.passed] for r in table.rows]


def _sweep_curves(table: SweepTable, out_dir):
    names = []
    for name in dict.fromkeys(r.statistic for r in table.rows):
        rows = table.by_statistic(name)
        _write_dat(os.path.join(out_dir, f"{name}.dat"),
                   [(r.t, r.value) for r in rows])
        names.append(name)
    return names


def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1,
                   dump: bool = False) -> RunReport:
    """Execute the configured task and write its artifacts into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        coeffs = make_model(config.model_id, dim=config.dim, **config.model_params)
    except (TypeError, ValueError) as err:
        raise ConfigError("model.params", str(err)) from err
    rng = RngSpec(config.seed)
    grid = TimeGrid(config.horizon, config.steps)
    phi = make_phi(config.phi, config.dim)
    f, f_label = make_f(config.f)
    init = make_init(config.init, config.dim)
    gate = GateFunction(config.gate, config.horizon)

    if config.task == "estimate":
        res = estimate_intrinsic_derivative(
            coeffs, init, phi, f, grid, config.particles, config.replications,
            gate, rng, f_label=f_label, workers=threads)
        passed, tol, target = True, None, None
        if config.expected is not None:
            target = float(config.expected["value"])
            rtol = float(config.expected.get("rtol", 0.0))
            tol = max(3.0 * res.std_error, rtol * abs(target))
            passed = abs(res.estimate - target) <= tol
        payload = {"result": res.to_json_dict(), "passed": passed,
                   "expected": target, "tolerance": tol}
        _write_csv(os.path.join(out_dir, "results.csv"), _RESULT_HEADER,
                   [_result_row(res)])
        curves = []
    elif config.task == "compare":
        fd = FdConfig(tuple(config.fd.get("eps", FdConfig().eps)),
                      bool(config.fd.get("richardson", False)))
        res_b = estimate_intrinsic_derivative(
            coeffs, init, phi, f, grid, config.particles, config.replications,
            gate, rng, f_label=f_label, workers=threads)
        res_fd = fd_intrinsic_derivative(
            coeffs, init, phi, f, grid, config.particles, config.replications,
            fd, rng, f_label=f_label, workers=threads)
        diff = abs(res_b.estimate - res_fd.estimate)
        tol = 3.0 * (res_b.std_error + res_fd.std_error)
        passed = diff <= tol
        payload = {"bismut": res_b.to_json_dict(), "fd": res_fd.to_json_dict(),
                   "fd_ladder": list(res_fd.ladder), "diff": diff,
                   "tolerance": tol, "passed": passed}
        _write_csv(os.path.join(out_dir, "results.csv"),
                   ["bismut", "se_bismut", "fd", "se_fd", "diff",
                    "tolerance", "pass"],
                   [[res_b.estimate, res_b.std_error, res_fd.estimate,
                     res_fd.std_error, diff, tol, passed]])
        curves = []
    elif config.task == "a1_sweep":
        budget = Budget(config.particles, config.replications, config.steps)
        table = a1_sweep(coeffs, init, f,
                         config.sweep.get("t_points", [0.25, 0.5, 1.0]),
                         budget, rng, gate_kind=config.gate,
                         probe_count=config.sweep.get("probe_count"),
                         f_label=f_label, workers=threads)
        payload = {"rows": _sweep_rows(table), "passed": table.passed}
        passed = table.passed
        _write_csv(os.path.join(out_dir, "results.csv"),
                   ["t", "statistic", "value", "se", "pass"],
                   _sweep_rows(table))
        curves = _sweep_curves(table, out_dir)
    elif config.task == "a2_check":
        budget = Budget(config.particles, config.replications, config.steps)
        mu_law = make_init(config.a2["mu"], config.dim, path="a2.mu")
        nu_law = make_init(config.a2["nu"], config.dim, path="a2.nu")
        mu = EmpiricalMeasure(mu_law.sample(rng, 0, config.particles))
        nu = EmpiricalMeasure(nu_law.sample(rng, 0, config.particles))
        table = a2_check(coeffs, mu, nu,
                         config.sweep.get("t_points", [0.25, 0.5, 1.0]),
                         budget, rng, workers=threads)
        payload = {"rows": _sweep_rows(table), "passed": table.passed}
        passed = table.passed
        _write_csv(os.path.join(out_dir, "results.csv"),
                   ["t", "statistic", "value", "se", "pass"],
                   _sweep_rows(table))
        curves = _sweep_curves(table, out_dir)
    elif config.task == "tangent_check":
        ladder = pathwise_tangent_check(
            coeffs, init, phi, grid, config.particles,
            config.tangent.get("eps", [1e-2, 5e-3, 2.5e-3]), rng,
            replications=config.replications)
        payload = {"eps": list(ladder.eps), "errors": list(ladder.errors),
                   "ratios": list(ladder.ratios), "passed": ladder.passed}
        passed = ladder.passed
        rows = [[e, v, (ladder.ratios[i - 1] if i else float("nan")),
                 ladder.passed]
                for i, (e, v) in enumerate(zip(ladder.eps, ladder.errors))]
        _write_csv(os.path.join(out_dir, "results.csv"),
                   ["eps", "error", "ratio", "pass"], rows)
        _write_dat(os.path.join(out_dir, "error_vs_eps.dat"),
                   list(zip(ladder.eps, ladder.errors)))
        curves = ["error_vs_eps"]
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError("task", f"unhandled task {config.task}")

    if curves:
        _write_plot_script(out_dir, curves,
                           "eps" if config.task == "tangent_check" else "t")
    if dump:
        traj = simulate(coeffs, init, phi, grid, config.particles, rng, 0)
        dump_trajectories(traj, os.path.join(out_dir, "trajectories"))

    elapsed = time.perf_counter() - t0
    report = RunReport(task=config.task, config_hash=config.config_hash(),
                       passed=bool(passed), payload=payload, elapsed_s=elapsed)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump({
            "task": report.task,
            "config": config.semantic_dict(),
            "config_hash": report.config_hash,
            "passed": report.passed,
            "payload": report.payload,
            "elapsed_s": report.elapsed_s,
            "version": report.version,
        }, fh, indent=2, default=float)
    return report
