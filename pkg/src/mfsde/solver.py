"""Euler-Maruyama co-simulation of the particle system and its tangent flow.

One Brownian increment stream drives both the state update and the linear
tangent recursion, per particle.  The empirical measure is frozen at the
start of each step (synchronous update), and atom i is included in its own
mean-field average with weight 1/N.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, EvaluationError
from .measures import EmpiricalMeasure, Perturbation
from .models import CoefficientSet, eval_drift, eval_lions_kernel
from .rng import STREAM_INIT, STREAM_PATH, RngSpec


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with ``steps`` Euler steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class TrajectoryBundle:
    """One replication: positions X_t, tangents, and the shared increments.

    ``positions`` and ``tangents`` have shape (K+1, N, d); ``increments``
    holds the Brownian increments (K, N, d) with variance dt per axis.
    Tangents at step 0 equal phi(X_0).
    """

    positions: np.ndarray
    tangents: np.ndarray
    increments: np.ndarray
    grid: TimeGrid
    seed: int
    replication: int
    model: str

    @property
    def particles(self) -> int:
        return self.positions.shape[1]

    def terminal_positions(self) -> np.ndarray:
        return self.positions[-1]


def _matvec(mat, vec):
    """Apply a (d,d) or batched (...,d,d) matrix to batched vectors."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 2:
        return vec @ mat.T
    return np.einsum("...ij,...j->...i", mat, vec)


def step_particles(coeffs: CoefficientSet, mu: EmpiricalMeasure, x, dw, t, dt):
    """One Euler-Maruyama step of the state:  x + drift*dt + sigma*dW."""
    drift = eval_drift(coeffs, t, x, mu)
    sig = coeffs.diffusion(t, x)
    return x + drift * dt + _matvec(sig, dw)


def mean_field_tangent_term(coeffs: CoefficientSet, t, x, mu, v) -> np.ndarray:
    """Empirical mean-field coupling of the tangent flow.

    Row i is (1/N) sum_j kernel(t, x_i, mu, x_j) v_j, evaluated through the
    separable channels when available (O(N m)) and the generic kernel
    otherwise (O(N^2)).
    """
    sep = coeffs.lions_kernel_separable
    if sep is not None:
        out = np.zeros_like(v)
        for coef, fgrad in sep.channels:
            g = np.broadcast_to(np.asarray(fgrad(t, x), dtype=float), x.shape)
            s = (g * v).sum(axis=-1).mean()
            out += np.broadcast_to(np.asarray(coef(t, x, mu), dtype=float), x.shape) * s
        return out
    kern = eval_lions_kernel(coeffs, t, x[:, None, :], mu, x[None, :, :])
    return np.einsum("ijab,jb->ia", kern, v) / x.shape[0]


def step_tangents(coeffs: CoefficientSet, t, x, mu, v, dw, dt) -> np.ndarray:
    """One Euler step of the tangent recursion.

    v + [grad_drift(x) v + mean-field term] dt + [grad_sigma(x) contracted
    with v] dW, all evaluated at the pre-step state.
    """
    grad = coeffs.drift_grad_x(t, x, mu)
    mf = mean_field_tangent_term(coeffs, t, x, mu, v)
    out = v + (_matvec(grad, v) + mf) * dt
    if coeffs.diffusion_grad is not None:
        gs = np.asarray(coeffs.diffusion_grad(t, x), dtype=float)
        if gs.ndim == 3:
            out = out + np.einsum("abc,...c,...b->...a", gs, v, dw)
        else:
            out = out + np.einsum("...abc,...c,...b->...a", gs, v, dw)
    return out


def forward_paths(coeffs: CoefficientSet, x0, dw, grid: TimeGrid,
                  v0=None, record=True):
    """Advance the ensemble (and optionally its tangents) over the grid.

    Returns ``(positions, tangents)`` of shape (K+1, N, d) when ``record``,
    else the final-state pair ``(x_K, v_K)``.  ``tangents`` is None when no
    initial tangent is given.
    """
    x = np.array(x0, dtype=float)
    v = None if v0 is None else np.array(v0, dtype=float)
    dt = grid.dt
    if record:
        positions = np.empty((grid.steps + 1,) + x.shape)
        positions[0] = x
        tangents = None
        if v is not None:
            tangents = np.empty_like(positions)
            tangents[0] = v
    for k in range(grid.steps):
        t = k * dt
        mu = EmpiricalMeasure(x, validate=False, copy=False)
        try:
            if v is not None:
                v = step_tangents(coeffs, t, x, mu, v, dw[k], dt)
            x = step_particles(coeffs, mu, x, dw[k], t, dt)
        except EvaluationError as err:
            # A coefficient blowing up mid-flight is trajectory divergence.
            particle = err.where[0] if isinstance(err.where, tuple) else -1
            raise DivergenceError(k, particle, f"step {k}: {err}") from err
        ok = np.isfinite(x).all(axis=1)
        if not ok.all():
            raise DivergenceError(k, int(np.flatnonzero(~ok)[0]))
        if v is not None:
            okv = np.isfinite(v).all(axis=1)
            if not okv.all():
                raise DivergenceError(k, int(np.flatnonzero(~okv)[0]),
                                      "non-finite tangent")
        if record:
            positions[k + 1] = x
            if v is not None:
                tangents[k + 1] = v
    if record:
        return positions, tangents
    return x, v


def simulate(coeffs: CoefficientSet, init, phi: Perturbation, grid: TimeGrid,
             n_particles: int, rng: RngSpec, replication: int,
             path_stream: int = STREAM_PATH,
             init_stream: int = STREAM_INIT) -> TrajectoryBundle:
    """Full forward pass of one replication.

    Initial atoms come from ``init`` on the replication's init stream,
    tangents start at phi(X_0), and positions/tangents share the increment
    stream.  Deterministic given (seed, replication, N, K); distinct
    replications use distinct streams by construction.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if init.dim != coeffs.dim:
        raise ValueError(f"initial law dim {init.dim} != model dim {coeffs.dim}")
    x0 = init.sample(rng, replication, n_particles, stream=init_stream)
    v0 = phi(x0)
    z = rng.normals(path_stream, replication, grid.steps, n_particles, coeffs.dim)
    dw = z * np.sqrt(grid.dt)
    positions, tangents = forward_paths(coeffs, x0, dw, grid, v0=v0, record=True)
    return TrajectoryBundle(positions=positions, tangents=tangents,
                            increments=dw, grid=grid, seed=rng.master_seed,
                            replication=replication, model=coeffs.label)


def dump_trajectories(bundle: TrajectoryBundle, out_dir) -> None:
    """Debug dump: one CSV per time node with columns particle, x..., v...

    Meant for small ensembles (N <= 64); file count equals K+1.
    """
    os.makedirs(out_dir, exist_ok=True)
    d = bundle.positions.shape[2]
    header = ["particle"] + [f"x{j}" for j in range(d)] + [f"v{j}" for j in range(d)]
    for k in range(bundle.positions.shape[0]):
        path = os.path.join(out_dir, f"node_{k:05d}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(bundle.particles):
                row = [i] + [repr(float(u)) for u in bundle.positions[k, i]]
                row += [repr(float(u)) for u in bundle.tangents[k, i]]
                writer.writerow(row)
