"""Empirical measures on R^d and the operations the estimators need.

A measure is an equal-weight particle cloud.  Everything here is read-only
after construction, so measures can be shared freely across workers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import EvaluationError
from .rng import STREAM_INIT, RngSpec

# Hard cap for the exact assignment solve in d >= 2.
ASSIGNMENT_CAP = 512


class EmpiricalMeasure:
    """Equal-weight atomic measure: ``atoms`` is an (N, d) float array.

    Atoms must be finite, which also guarantees a finite second moment.
    Because measures never change after construction, derived quantities
    (feature integrals and the like) may be memoized on the instance.
    """

    __slots__ = ("atoms", "_memo")

    def __init__(self, atoms, validate: bool = True, copy: bool = True):
        a = np.array(atoms, dtype=float, copy=copy) if copy \
            else np.asarray(atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError("atoms must be a nonempty (N, d) array")
        if validate and not np.isfinite(a).all():
            bad = int(np.flatnonzero(~np.isfinite(a).all(axis=1))[0])
            raise EvaluationError(f"non-finite atom at index {bad}", where=bad)
        a.setflags(write=False)
        self.atoms = a
        self._memo = {}

    def memo(self, key, compute):
        """Cache a quantity derived from the (immutable) atoms."""
        try:
            return self._memo[key]
        except KeyError:
            value = compute()
            self._memo[key] = value
            return value

    @property
    def count(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        return self.atoms.mean(axis=0)

    def second_moment(self) -> float:
        return float((self.atoms ** 2).sum(axis=1).mean())

    def __repr__(self):
        return f"EmpiricalMeasure(count={self.count}, dim={self.dim})"

    def to_csv(self, path) -> None:
        """One atom per row, header ``x0..x{d-1}``."""
        header = ",".join(f"x{j}" for j in range(self.dim))
        np.savetxt(path, self.atoms, delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        atoms = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(atoms)


@dataclass(frozen=True)
class Perturbation:
    """A direction phi in L^2(R^d -> R^d; mu), evaluated atom-wise.

    ``fn`` must broadcast over a batch of points of shape (..., d).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    label: str = "phi"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)
        return np.broadcast_to(out, np.shape(x)).copy() if out.shape != np.shape(x) else out


def constant_perturbation(v, label=None) -> Perturbation:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    lab = label or f"const{v.tolist()}"
    return Perturbation(lambda x: np.broadcast_to(v, x.shape).copy(), lab)


def zero_perturbation(dim: int) -> Perturbation:
    return Perturbation(lambda x: np.zeros_like(x), "zero")


def integrate(mu: EmpiricalMeasure, f) -> np.ndarray:
    """mu(f): arithmetic mean of ``f`` over the atoms.

    ``f`` maps an (N, d) batch to (N,) or (N, k).
    """
    vals = np.asarray(f(mu.atoms), dtype=float)
    if not np.isfinite(vals).all():
        flat = vals.reshape(mu.count, -1)
        bad = int(np.flatnonzero(~np.isfinite(flat).all(axis=1))[0])
        raise EvaluationError(f"non-finite integrand at atom {bad}", where=bad)
    return vals.mean(axis=0)


def shift_pushforward(mu: EmpiricalMeasure, phi: Perturbation, eps: float) -> EmpiricalMeasure:
    """The push-forward mu o (Id + eps*phi)^{-1}: atoms move x -> x + eps*phi(x)."""
    shifted = mu.atoms + eps * phi(mu.atoms)
    if not np.isfinite(shifted).all():
        bad = int(np.flatnonzero(~np.isfinite(shifted).all(axis=1))[0])
        raise EvaluationError(f"non-finite shifted atom at index {bad}", where=bad)
    return EmpiricalMeasure(shifted, validate=False)


def l2_norm(phi: Perturbation, mu: EmpiricalMeasure) -> float:
    """Empirical L^2(mu) norm: root mean square of |phi| over the atoms."""
    vals = phi(mu.atoms)
    if not np.isfinite(vals).all():
        bad = int(np.flatnonzero(~np.isfinite(vals).all(axis=1))[0])
        raise EvaluationError(f"non-finite perturbation at atom {bad}", where=bad)
    return float(np.sqrt((vals ** 2).sum(axis=1).mean()))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W_2 between two equal-weight clouds.

    d = 1 uses the sorted quantile coupling (any atom counts); d >= 2 solves
    the exact assignment problem and requires equal counts <= ASSIGNMENT_CAP.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        return _wasserstein2_sorted(mu.atoms[:, 0], nu.atoms[:, 0])
    if mu.count != nu.count:
        raise ValueError("d >= 2 requires equal atom counts")
    if mu.count > ASSIGNMENT_CAP:
        raise ValueError(f"d >= 2 capped at {ASSIGNMENT_CAP} atoms")
    cost = cdist(mu.atoms, nu.atoms, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def _wasserstein2_sorted(x: np.ndarray, y: np.ndarray) -> float:
    x = np.sort(x)
    y = np.sort(y)
    n, m = x.size, y.size
    if n == m:
        return float(np.sqrt(((x - y) ** 2).mean()))
    # Quantile functions are step functions; integrate |Qx - Qy|^2 exactly
    # over the union of their breakpoints.
    edges = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    edges = np.concatenate(([0.0], edges, [1.0]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    qx = x[np.minimum((mids * n).astype(int), n - 1)]
    qy = y[np.minimum((mids * m).astype(int), m - 1)]
    return float(np.sqrt((widths * (qx - qy) ** 2).sum()))


# ---------------------------------------------------------------------------
# Initial laws: samplers producing the atoms of the starting measure.

class InitialLaw:
    """Draws the starting atoms of one replication from a fixed law."""

    dim: int

    def sample(self, rng: RngSpec, replication: int, n: int,
               stream: int = STREAM_INIT) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianLaw(InitialLaw):
    mean: tuple
    std: float = 1.0

    @property
    def dim(self):
        return len(self.mean)

    def sample(self, rng, replication, n, stream=STREAM_INIT):
        z = rng.normal_matrix(stream, replication, n, self.dim)
        return np.asarray(self.mean, dtype=float) + self.std * z


@dataclass(frozen=True)
class PointLaw(InitialLaw):
    point: tuple

    @property
    def dim(self):
        return len(self.point)

    def sample(self, rng, replication, n, stream=STREAM_INIT):
        return np.tile(np.asarray(self.point, dtype=float), (n, 1))


@dataclass(frozen=True)
class UniformLaw(InitialLaw):
    low: tuple
    high: tuple

    @property
    def dim(self):
        return len(self.low)

    def sample(self, rng, replication, n, stream=STREAM_INIT):
        u = rng.uniform_matrix(stream, replication, n, self.dim)
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        return lo + (hi - lo) * u


@dataclass(frozen=True)
class AtomsLaw(InitialLaw):
    """Start from the atoms of a given measure.

    Exact reuse when counts match, deterministic tiling when n is a multiple,
    bootstrap resampling otherwise.
    """

    measure: EmpiricalMeasure = field(repr=False)

    @property
    def dim(self):
        return self.measure.dim

    def sample(self, rng, replication, n, stream=STREAM_INIT):
        atoms = self.measure.atoms
        n0 = atoms.shape[0]
        if n == n0:
            return atoms.copy()
        if n % n0 == 0:
            return np.tile(atoms, (n // n0, 1))
        u = rng.uniform_matrix(stream, replication, n, 1)[:, 0]
        idx = np.minimum((u * n0).astype(int), n0 - 1)
        return atoms[idx].copy()
