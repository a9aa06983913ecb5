"""The stochastic weight and the derivative estimator built on it.

The weight at time t is

    zeta_t = sigma(t, X_t)^{-1} [ g'(t) V_t + g(t) * mean-field term ]

with V the tangent flow and g a gate vanishing at 0 and equal to 1 at the
horizon.  Pairing f(X_T) with the Ito integral of zeta against the driving
noise gives an unbiased estimate of the measure derivative of E f(X_T) along
the initial perturbation, up to discretization and particle bias.  The Ito
sum uses the left endpoint so the integrand stays adapted.

Error bars are always taken across replication means, never across particles
of one ensemble: particles are dependent through the shared empirical
measure, replications are iid.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, EvaluationError, SingularDiffusionError
from .measures import EmpiricalMeasure, Perturbation, constant_perturbation, l2_norm
from .models import CoefficientSet
from .rng import STREAM_INIT, STREAM_PATH, STREAM_PROBE, RngSpec
from .solver import TimeGrid, TrajectoryBundle, _matvec, mean_field_tangent_term, simulate

MIN_REPLICATIONS = 8


@dataclass(frozen=True)
class GateFunction:
    """Gate g on [0, T] with g(0)=0, g(T)=1 and bounded derivative."""

    kind: str
    horizon: float

    def __post_init__(self):
        if self.kind not in ("linear", "smoothstep"):
            raise ValueError(f"unknown gate kind '{self.kind}'")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def value(self, t):
        s = np.asarray(t, dtype=float) / self.horizon
        if self.kind == "linear":
            return s
        return 3.0 * s ** 2 - 2.0 * s ** 3

    def derivative(self, t):
        if self.kind == "linear":
            return np.full_like(np.asarray(t, dtype=float), 1.0 / self.horizon) \
                if np.ndim(t) else 1.0 / self.horizon
        s = np.asarray(t, dtype=float) / self.horizon
        return (6.0 * s - 6.0 * s ** 2) / self.horizon


def make_gate(kind: str, horizon: float) -> GateFunction:
    return GateFunction(kind, horizon)


@dataclass
class WeightAccumulator:
    """Per-particle Ito sums I^i and running |zeta|^2 dt diagnostics."""

    integrals: np.ndarray
    zeta_square: np.ndarray
    steps: int


def weight_at(coeffs: CoefficientSet, gate: GateFunction, t, x, mu, v, mf_term):
    """The weight zeta at one time: sigma^{-1} (g' v + g * mf_term).

    ``mf_term`` must be the mean-field tangent term evaluated at the same
    (t, states, tangents); see solver.mean_field_tangent_term.
    """
    inv = np.asarray(coeffs.diffusion_inverse(t, x), dtype=float)
    if not np.isfinite(inv).all():
        raise SingularDiffusionError(f"diffusion inverse non-finite at t={t}", t=t)
    core = gate.derivative(t) * v + gate.value(t) * mf_term
    return _matvec(inv, core)


def accumulate(traj: TrajectoryBundle, coeffs: CoefficientSet,
               gate: GateFunction) -> WeightAccumulator:
    """Left-point Riemann sum of <zeta, dW> along one trajectory bundle."""
    grid = traj.grid
    dt = grid.dt
    n = traj.particles
    integrals = np.zeros(n)
    zeta_sq = np.zeros(n)
    for k in range(grid.steps):
        t = k * dt
        x = traj.positions[k]
        v = traj.tangents[k]
        mu = EmpiricalMeasure(x, validate=False, copy=False)
        mf = mean_field_tangent_term(coeffs, t, x, mu, v)
        zeta = weight_at(coeffs, gate, t, x, mu, v, mf)
        integrals += (zeta * traj.increments[k]).sum(axis=1)
        zeta_sq += (zeta ** 2).sum(axis=1) * dt
    return WeightAccumulator(integrals=integrals, zeta_square=zeta_sq,
                             steps=grid.steps)


@dataclass
class EstimatorResult:
    """Point estimate with replication statistics and run metadata."""

    estimate: float
    std_error: float
    replications: int
    particles: int
    steps: int
    horizon: float
    gate: str
    model: str
    phi_label: str
    f_label: str
    seed: int
    elapsed_s: float
    replication_means: Optional[np.ndarray] = field(default=None, repr=False)
    ladder: Optional[tuple] = None

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "N": self.particles,
            "M": self.replications,
            "K": self.steps,
            "T": self.horizon,
            "gate": self.gate,
            "model": self.model,
            "phi": self.phi_label,
            "f": self.f_label,
            "seed": self.seed,
            "elapsed_s": self.elapsed_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


RESULT_CSV_FIELDS = ["estimate", "std_error", "N", "M", "K", "T", "gate",
                     "model", "phi", "f", "seed", "elapsed_s"]


def append_result_csv(result: EstimatorResult, path) -> None:
    """Append one result row to a CSV log, writing the header if new."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_CSV_FIELDS)
        if new:
            writer.writeheader()
        writer.writerow(result.to_json_dict())


def apply_functional(f: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a terminal functional on an (N, d) batch, checked finite."""
    vals = np.asarray(f(x), dtype=float)
    if vals.ndim == 2 and vals.shape[1] == 1:
        vals = vals[:, 0]
    if vals.ndim == 0:
        vals = np.full(x.shape[0], float(vals))
    if not np.isfinite(vals).all():
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise EvaluationError(f"non-finite functional value at particle {bad}",
                              where=bad)
    return vals


def _run_replications(fn, replications, workers):
    if workers <= 1:
        return [fn(r) for r in range(replications)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(replications)))


def _replication_pass(coeffs, init, phi, f, grid, n_particles, gate, rng, r,
                      path_stream=STREAM_PATH, init_stream=STREAM_INIT):
    """One replication: (payoff-weight mean, mean f, mean f^2)."""
    try:
        traj = simulate(coeffs, init, phi, grid, n_particles, rng, r,
                        path_stream=path_stream, init_stream=init_stream)
        acc = accumulate(traj, coeffs, gate)
    except DivergenceError as err:
        raise DivergenceError(
            err.step, err.particle,
            f"replication {r} (seed {rng.master_seed}) diverged: {err}") from err
    f_term = apply_functional(f, traj.terminal_positions())
    return (float((f_term * acc.integrals).mean()),
            float(f_term.mean()), float((f_term ** 2).mean()))


def estimate_intrinsic_derivative(coeffs: CoefficientSet, init, phi: Perturbation,
                                  f: Callable, grid: TimeGrid, n_particles: int,
                                  replications: int, gate: GateFunction,
                                  rng: RngSpec, f_label: str = None,
                                  workers: int = 1) -> EstimatorResult:
    """Monte Carlo estimate of the measure derivative of E f(X_T) along phi.

    Each replication simulates a fresh ensemble, accumulates the weight
    integral, and contributes mean_i f(X_T^i) I^i; the estimate and its
    standard error are taken across the replication means.
    """
    if replications < MIN_REPLICATIONS:
        raise ValueError(f"at least {MIN_REPLICATIONS} replications required")
    t0 = time.perf_counter()

    def one(r):
        return _replication_pass(coeffs, init, phi, f, grid, n_particles,
                                 gate, rng, r)[0]

    means = np.array(_run_replications(one, replications, workers))
    return EstimatorResult(
        estimate=float(means.mean()),
        std_error=float(means.std(ddof=1) / np.sqrt(replications)),
        replications=replications, particles=n_particles,
        steps=grid.steps, horizon=grid.horizon, gate=gate.kind,
        model=coeffs.label, phi_label=phi.label,
        f_label=f_label or getattr(f, "__name__", "f"),
        seed=rng.master_seed,
        elapsed_s=time.perf_counter() - t0,
        replication_means=means,
    )


@dataclass
class GradientNormEstimate:
    """Probe-based estimate of the derivative norm and the payoff spread."""

    norm: float
    norm_se: float
    std: float
    std_se: float
    probes: tuple   # (label, estimate, se) per probe


def random_smooth_field(rng: RngSpec, index: int, dim: int) -> Perturbation:
    """A deterministic pseudo-random bounded smooth field cos(<w,x>+theta) v."""
    z = rng.normal_matrix(STREAM_PROBE, index, 2, dim)
    theta = 2.0 * np.pi * rng.uniform_matrix(STREAM_PROBE, index, 1, 1)[0, 0]
    w = z[0]
    v = z[1] / max(np.linalg.norm(z[1]), 1e-12)

    def fn(x):
        return np.cos(x @ w + theta)[..., None] * v

    return Perturbation(fn, f"field{index}")


def gradient_norm_estimate(coeffs: CoefficientSet, init, f: Callable,
                           grid: TimeGrid, n_particles: int, replications: int,
                           gate: GateFunction, rng: RngSpec, probe_count: int,
                           f_label: str = None, workers: int = 1) -> GradientNormEstimate:
    """Lower bound on ||D^I E f(X_T)|| as a sup over unit-norm probes.

    The first d probes are the coordinate constants; the rest are random
    smooth fields normalized to unit empirical L^2 norm.  Also returns the
    empirical payoff standard deviation sqrt(E f^2 - (E f)^2) for the
    variance-bound sweep.
    """
    d = coeffs.dim
    if probe_count < d:
        raise ValueError("probe_count must be at least the dimension")
    if replications < MIN_REPLICATIONS:
        raise ValueError(f"at least {MIN_REPLICATIONS} replications required")

    probes = []
    for a in range(d):
        e = np.zeros(d)
        e[a] = 1.0
        probes.append(constant_perturbation(e, label=f"e{a}"))
    norm_atoms = None
    for j in range(probe_count - d):
        raw = random_smooth_field(rng, j, d)
        if norm_atoms is None:
            norm_atoms = EmpiricalMeasure(
                init.sample(rng, 0, min(4096, max(n_particles, 256))))
        scale = l2_norm(raw, norm_atoms)
        fld = raw.fn
        probes.append(Perturbation(
            (lambda x, _f=fld, _s=scale: _f(x) / _s), raw.label + "_unit"))

    probe_stats = []
    f_stats = None
    for phi in probes:
        def one(r, _phi=phi):
            return _replication_pass(coeffs, init, _phi, f, grid, n_particles,
                                     gate, rng, r)

        rows = _run_replications(one, replications, workers)
        means = np.array([row[0] for row in rows])
        probe_stats.append((phi.label, float(means.mean()),
                            float(means.std(ddof=1) / np.sqrt(replications))))
        if f_stats is None:
            f_stats = (np.array([row[1] for row in rows]),
                       np.array([row[2] for row in rows]))

    best = max(range(len(probe_stats)), key=lambda i: abs(probe_stats[i][1]))
    f_mean, f_sq = f_stats
    var = max(float(f_sq.mean() - f_mean.mean() ** 2), 0.0)
    per_rep_std = np.sqrt(np.maximum(f_sq - f_mean ** 2, 0.0))
    return GradientNormEstimate(
        norm=abs(probe_stats[best][1]),
        norm_se=probe_stats[best][2],
        std=float(np.sqrt(var)),
        std_se=float(per_rep_std.std(ddof=1) / np.sqrt(replications)),
        probes=tuple(probe_stats),
    )
