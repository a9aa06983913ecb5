"""Coefficient sets (B, b, sigma) for distribution-dependent SDEs.

All coefficient callables are vectorized: a batch of points has shape
(..., d) and every function broadcasts over the leading axes.  Conventions:

* ``drift_grad_x(t, x, mu)[..., i, j]``   = d(drift_i)/dx_j
* ``lions_kernel(t, x, mu, y)[..., i, j]``: row i indexes the drift
  component at x, column j the tangent component attached to the atom y
* ``diffusion_grad(t, x)[..., a, b, c]``  = d(sigma_ab)/dx_c, or ``None``
  when sigma does not depend on x

The measure argument is always an :class:`~mfsde.measures.EmpiricalMeasure`
standing in for the law of the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationError
from .measures import EmpiricalMeasure, integrate


# ---------------------------------------------------------------------------
# Core types

@dataclass(frozen=True)
class SeparableKernel:
    """Rank-m representation  kernel = sum_i coef_i(t,x,mu) (x) feature_grad_i(t,y).

    Each channel is a pair of callables returning d-vectors; the outer
    product of channel i contributes coef_i rows times feature_grad_i
    columns.  This is the O(N) fast path for the mean-field tangent term.
    """

    channels: tuple

    def assemble(self, t, x, mu, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x.shape[-1]
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        out = np.zeros(batch + (d, d))
        for coef, fgrad in self.channels:
            cv = np.broadcast_to(np.asarray(coef(t, x, mu), dtype=float), batch + (d,))
            gv = np.broadcast_to(np.asarray(fgrad(t, y), dtype=float), batch + (d,))
            out += cv[..., :, None] * gv[..., None, :]
        return out


@dataclass(frozen=True)
class CoefficientSet:
    """The model (B, b, sigma) with the derivatives the tangent flow needs.

    ``drift_regular`` houses B, ``drift_singular`` houses b; the state
    dynamics use their sum.  ``drift_grad_x`` is the x-gradient of the total
    drift (possibly a mollified surrogate for singular b).
    ``drift_regular_grad_x`` is the gradient of B alone and may be ``None``
    when B is constant in x; :func:`mollify_drift` needs it to reassemble the
    total gradient.
    """

    dim: int
    drift_regular: Callable
    drift_singular: Callable
    drift_grad_x: Callable
    lions_kernel: Callable
    diffusion: Callable
    diffusion_inverse: Callable
    diffusion_grad: Optional[Callable] = None
    lions_kernel_separable: Optional[SeparableKernel] = None
    drift_regular_grad_x: Optional[Callable] = None
    label: str = "custom"


def eval_drift(coeffs: CoefficientSet, t, x, mu) -> np.ndarray:
    """Total drift (B + b)(t, x, mu); raises on non-finite output."""
    x = np.asarray(x, dtype=float)
    out = np.asarray(coeffs.drift_regular(t, x, mu), dtype=float) \
        + np.asarray(coeffs.drift_singular(t, x, mu), dtype=float)
    if not np.isfinite(out).all():
        bad = np.argwhere(~np.isfinite(out))[0]
        raise EvaluationError(
            f"non-finite drift at t={t}, index {tuple(bad)}", t=t, where=tuple(bad))
    return out


def eval_lions_kernel(coeffs: CoefficientSet, t, x, mu, y) -> np.ndarray:
    """Measure-derivative kernel D^L(B+b)(t, x, mu)(y) as a (..., d, d) array."""
    out = np.asarray(coeffs.lions_kernel(t, np.asarray(x, dtype=float), mu,
                                         np.asarray(y, dtype=float)), dtype=float)
    if not np.isfinite(out).all():
        raise EvaluationError(f"non-finite measure-derivative kernel at t={t}", t=t)
    return out


# ---------------------------------------------------------------------------
# Mollification

class Mollifier:
    """Compactly supported bump mollifier with a fixed quadrature stencil.

    rho(u) ~ exp(-1/(1-|u|^2)) on the unit ball, scaled to radius ``delta``
    and normalized through the same quadrature so constants are reproduced
    exactly.  33 Gauss-Legendre points per axis; d <= 2.
    """

    def __init__(self, dim: int, delta: float, points: int = 33):
        if delta <= 0:
            raise ValueError("mollification radius must be positive")
        if dim not in (1, 2):
            raise ValueError("mollified evaluation supports d <= 2 only")
        nodes, w = np.polynomial.legendre.leggauss(points)
        if dim == 1:
            u = nodes[:, None]
            wq = w.copy()
        else:
            gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
            u = np.stack([gx.ravel(), gy.ravel()], axis=1)
            wq = np.outer(w, w).ravel()
        r2 = (u ** 2).sum(axis=1)
        inside = r2 < 1.0
        u, wq, r2 = u[inside], wq[inside], r2[inside]
        rho = np.exp(-1.0 / (1.0 - r2))
        z = float((wq * rho).sum())
        self.dim = dim
        self.delta = float(delta)
        self.nodes = u
        self.value_weights = wq * rho / z
        drho = rho[:, None] * (-2.0 * u / (1.0 - r2)[:, None] ** 2)
        raw = wq[:, None] * drho
        # Per-axis first-moment normalization: the stencil then differentiates
        # affine functions exactly instead of carrying the ~1e-5 quadrature
        # bias of the raw d(rho) weights.
        scale = -(raw * u).sum(axis=0)
        self.grad_weights = raw / (scale * delta)

    def _stencil(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., None, :] - self.delta * self.nodes

    def smooth(self, fn, x) -> np.ndarray:
        """Mollified values of ``fn`` at x; fn maps (..., d) -> (...) or (..., k)."""
        pts = self._stencil(x)
        vals = np.asarray(fn(pts), dtype=float)
        if vals.ndim == pts.ndim - 1:
            return np.einsum("...q,q->...", vals, self.value_weights)
        return np.einsum("...qk,q->...k", vals, self.value_weights)

    def gradient(self, fn, x) -> np.ndarray:
        """Exact gradient of the mollified ``fn``, via the d(rho) stencil.

        Scalar fn gives (..., d); vector fn gives (..., k, d) with rows the
        output component and columns the derivative axis.
        """
        pts = self._stencil(x)
        vals = np.asarray(fn(pts), dtype=float)
        if vals.ndim == pts.ndim - 1:
            return np.einsum("...q,qc->...c", vals, self.grad_weights)
        return np.einsum("...qk,qc->...kc", vals, self.grad_weights)


def mollify_drift(coeffs: CoefficientSet, delta: float) -> CoefficientSet:
    """Replace the singular drift by its mollification at radius ``delta``.

    The returned set evaluates b as the bump convolution of the original and
    exposes ``drift_grad_x`` as the exact gradient of the mollified total
    drift (regular gradient plus the d(rho)-stencil gradient of b).  All
    other fields carry over.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    moll = Mollifier(coeffs.dim, delta)
    b0 = coeffs.drift_singular
    reg_grad = coeffs.drift_regular_grad_x

    def smoothed(t, x, mu):
        return moll.smooth(lambda p: b0(t, p, mu), x)

    def total_grad(t, x, mu):
        g = moll.gradient(lambda p: b0(t, p, mu), x)
        if reg_grad is not None:
            g = g + np.asarray(reg_grad(t, x, mu), dtype=float)
        return g

    return replace(coeffs, drift_singular=smoothed, drift_grad_x=total_grad,
                   label=coeffs.label + f"+mollified({delta:g})")


@lru_cache(maxsize=16)
def _radial_mollified_power(alpha: float, delta: float, dim: int,
                            points: int = 33, table_size: int = 8192,
                            switch_factor: float = 64.0):
    """Precomputed radial profile of the mollified power r -> r^alpha.

    Returns ``(value_fn, grad_fn)``.  Inside ``switch_factor * delta`` the
    stencil values are tabulated and interpolated; outside, the stencil
    agrees with the plain power to O((delta/r)^2), so the analytic form is
    used.  Keeps the tangent flow's per-step cost away from the 33-point
    stencil.
    """
    moll = Mollifier(dim, delta, points)
    switch = switch_factor * delta
    r_grid = np.linspace(0.0, switch, table_size)
    x_grid = np.zeros((table_size, dim))
    x_grid[:, 0] = r_grid

    def h(p):
        return ((p ** 2).sum(axis=-1)) ** (alpha / 2.0)

    val_table = moll.smooth(h, x_grid)
    grad_table = moll.gradient(h, x_grid)[:, 0]   # radial derivative

    def value(x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return np.where(r <= switch, np.interp(r, r_grid, val_table), r ** alpha)

    def grad(x):
        return value_and_grad(x)[1]

    def value_and_grad(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        inside = r <= switch
        safe = np.where(inside, 1.0, r)
        tail = safe ** alpha
        val = np.where(inside, np.interp(r, r_grid, val_table), tail)
        g = np.where(inside, np.interp(r, r_grid, grad_table),
                     alpha * tail / safe)
        unit = x / np.where(r > 0.0, r, 1.0)[..., None]
        return val, g[..., None] * unit

    return value, grad, value_and_grad


# ---------------------------------------------------------------------------
# The cylindrical/singular drift family

@dataclass(frozen=True)
class Feature:
    """A bounded differentiable scalar feature with its gradient."""

    value: Callable   # (..., d) -> (...)
    grad: Callable    # (..., d) -> (..., d)
    name: str = "f"


@dataclass
class CylindricalDriftSpec:
    """b(t, x, mu) = outer(t, |x|^alpha, mu(features)).

    ``outer`` maps (t, r, z) with r of shape (...) and z of shape (m,) to a
    (..., d) drift; ``outer_partial_r`` and ``outer_grad_z`` are its partial
    derivatives with shapes (..., d) and (..., d, m).  The radial exponent
    must lie in (0, 1/2), the Dini range of the power modulus.
    """

    outer: Callable
    outer_partial_r: Callable
    outer_grad_z: Callable
    inner_radial_exponent: float
    features: tuple
    mollify_radius: float = 0.0
    dim: int = 1
    feature_grad_bounds: tuple = field(default=None, repr=False)

    def validate(self):
        a = self.inner_radial_exponent
        if not 0.0 < a < 0.5:
            raise ValueError(f"radial exponent must lie in (0, 1/2), got {a}")
        if self.mollify_radius < 0:
            raise ValueError("mollify_radius must be nonnegative")
        grid = _feature_sample_grid(self.dim)
        bounds = []
        for feat in self.features:
            g = np.asarray(feat.grad(grid), dtype=float)
            sup = float(np.linalg.norm(g, axis=-1).max())
            if not np.isfinite(sup):
                raise ValueError(f"feature {feat.name} has unbounded gradient on grid")
            bounds.append(sup)
        self.feature_grad_bounds = tuple(bounds)
        return self


def _feature_sample_grid(dim):
    if dim == 1:
        return np.linspace(-20.0, 20.0, 801)[:, None]
    axes = [np.linspace(-8.0, 8.0, 41)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def build_cylindrical(spec: CylindricalDriftSpec) -> CoefficientSet:
    """Coefficient set for the cylindrical drift; B = 0, sigma = identity.

    The particle flow sees the unmollified drift; when ``mollify_radius`` is
    positive, ``drift_grad_x`` is the gradient of the surrogate drift
    outer(t, h_delta(x), mu(features)) with h_delta the mollified radial part.
    With radius zero the a.e. gradient is used (zero at the origin).
    """
    spec.validate()
    d = spec.dim
    alpha = spec.inner_radial_exponent
    feats = spec.features
    m = len(feats)
    tag = id(spec)   # memo-key namespace; the closures keep spec alive

    def feat_means(mu):
        return mu.memo(("cyl_z", tag),
                       lambda: np.array([integrate(mu, f.value) for f in feats]))

    def radial(x):
        return np.linalg.norm(x, axis=-1)

    def radial_power(x, mu):
        # The solver evaluates coefficients at the measure's own atoms, so
        # the power is shared across drift/kernel/gradient calls of a step.
        if mu is not None and x is mu.atoms:
            return mu.memo(("cyl_h", tag), lambda: radial(x) ** alpha)
        return radial(x) ** alpha

    def drift_singular(t, x, mu):
        return np.asarray(spec.outer(t, radial_power(x, mu), feat_means(mu)),
                          dtype=float)

    channels = []
    for i in range(m):
        def coef(t, x, mu, _i=i):
            z = feat_means(mu)
            return np.asarray(spec.outer_grad_z(t, radial_power(x, mu), z),
                              dtype=float)[..., :, _i]

        def fgrad(t, y, _f=feats[i]):
            return np.asarray(_f.grad(y), dtype=float)

        channels.append((coef, fgrad))
    separable = SeparableKernel(tuple(channels))

    if spec.mollify_radius > 0:
        _, _, h_val_grad = _radial_mollified_power(alpha, spec.mollify_radius, d)
    else:
        def h_val_grad(x):
            r = radial(x)
            safe = np.where(r > 0.0, r, 1.0)
            val = r ** alpha
            g = np.where(r > 0.0, alpha * safe ** (alpha - 2.0), 0.0)
            return val, g[..., None] * x

    def drift_grad_x(t, x, mu):
        x = np.asarray(x, dtype=float)
        z = feat_means(mu)
        hv, gh = h_val_grad(x)
        pr = np.asarray(spec.outer_partial_r(t, hv, z), dtype=float)
        return pr[..., :, None] * gh[..., None, :]

    sig, sig_inv = _constant_diffusion_pair(1.0, d)
    return CoefficientSet(
        dim=d,
        drift_regular=_zero_drift,
        drift_singular=drift_singular,
        drift_grad_x=drift_grad_x,
        lions_kernel=separable.assemble,
        diffusion=sig,
        diffusion_inverse=sig_inv,
        diffusion_grad=None,
        lions_kernel_separable=separable,
        drift_regular_grad_x=None,
        label="cylindrical",
    )


# ---------------------------------------------------------------------------
# Named outers and features for the registry

def _sech2(s):
    c = np.cosh(s)
    return 1.0 / (c * c)


def _outer_tanh_sum(dim):
    """F_a(r, z) = tanh(r + sum(z)) in every component a."""
    ones = np.ones(dim)

    def outer(t, r, z):
        s = np.tanh(np.asarray(r) + np.sum(z))
        return s[..., None] * ones

    def partial_r(t, r, z):
        s = _sech2(np.asarray(r) + np.sum(z))
        return s[..., None] * ones

    def grad_z(t, r, z):
        s = _sech2(np.asarray(r) + np.sum(z))
        return np.broadcast_to(s[..., None, None], s.shape + (dim, len(z))).copy()

    return outer, partial_r, grad_z


def _outer_radial(dim):
    """F_a(r, z) = r: no measure dependence."""
    ones = np.ones(dim)

    def outer(t, r, z):
        return np.asarray(r)[..., None] * ones

    def partial_r(t, r, z):
        return np.ones(np.shape(r) + (dim,))

    def grad_z(t, r, z):
        return np.zeros(np.shape(r) + (dim, len(z)))

    return outer, partial_r, grad_z


def _outer_mean_feature(dim):
    """F_a(r, z) = sum(z): purely measure-driven."""
    ones = np.ones(dim)

    def outer(t, r, z):
        return np.broadcast_to(np.sum(z) * ones, np.shape(r) + (dim,)).copy()

    def partial_r(t, r, z):
        return np.zeros(np.shape(r) + (dim,))

    def grad_z(t, r, z):
        return np.broadcast_to(np.ones((dim, len(z))), np.shape(r) + (dim, len(z))).copy()

    return outer, partial_r, grad_z


OUTERS = {
    "tanh_sum": _outer_tanh_sum,
    "radial": _outer_radial,
    "mean_feature": _outer_mean_feature,
}

FEATURES = {
    "sin": Feature(lambda y: np.sin(y.sum(axis=-1)),
                   lambda y: np.cos(y.sum(axis=-1))[..., None] * np.ones(y.shape[-1]),
                   "sin"),
    "cos": Feature(lambda y: np.cos(y.sum(axis=-1)),
                   lambda y: -np.sin(y.sum(axis=-1))[..., None] * np.ones(y.shape[-1]),
                   "cos"),
    "tanh": Feature(lambda y: np.tanh(y.sum(axis=-1)),
                    lambda y: _sech2(y.sum(axis=-1))[..., None] * np.ones(y.shape[-1]),
                    "tanh"),
    "gauss": Feature(lambda y: np.exp(-0.5 * (y ** 2).sum(axis=-1)),
                     lambda y: -np.exp(-0.5 * (y ** 2).sum(axis=-1))[..., None] * y,
                     "gauss"),
}


# ---------------------------------------------------------------------------
# Built-in models

def _zero_drift(t, x, mu):
    return np.zeros_like(np.asarray(x, dtype=float))


def _constant_diffusion_pair(sigma, dim):
    mat = sigma * np.eye(dim) if np.ndim(sigma) == 0 else np.asarray(sigma, dtype=float)
    inv = np.linalg.inv(mat)

    def diffusion(t, x):
        return mat

    def diffusion_inverse(t, x):
        return inv

    return diffusion, diffusion_inverse


def _mean_field_identity_channels(c, dim):
    channels = []
    for a in range(dim):
        e = np.zeros(dim)
        e[a] = 1.0

        def coef(t, x, mu, _v=c * e):
            return np.broadcast_to(_v, np.shape(x))

        def fgrad(t, y, _v=e):
            return np.broadcast_to(_v, np.shape(y))

        channels.append((coef, fgrad))
    return SeparableKernel(tuple(channels))


def _constant_kernel(mat):
    d = mat.shape[0]

    def kernel(t, x, mu, y):
        batch = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return np.broadcast_to(mat, batch + (d, d))

    return kernel


def linear_mf_ou(a=-1.0, c=0.5, sigma=0.2, dim=1) -> CoefficientSet:
    """dX = (a X + c E[X]) dt + sigma dW: the fully solvable benchmark."""
    eye = np.eye(dim)

    def drift(t, x, mu):
        return a * x + c * mu.mean()

    def grad(t, x, mu):
        return np.broadcast_to(a * eye, np.shape(x) + (dim,))

    diffusion, diffusion_inverse = _constant_diffusion_pair(sigma, dim)
    return CoefficientSet(
        dim=dim,
        drift_regular=drift,
        drift_singular=_zero_drift,
        drift_grad_x=grad,
        lions_kernel=_constant_kernel(c * eye),
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        diffusion_grad=None,
        lions_kernel_separable=_mean_field_identity_channels(c, dim),
        drift_regular_grad_x=grad,
        label="linear_mf_ou",
    )


def double_well_mf(kappa=0.5, sigma=0.5, dim=1) -> CoefficientSet:
    """Quartic well x(1 - |x|^2) plus attraction kappa (E[X] - x)."""
    eye = np.eye(dim)

    def drift(t, x, mu):
        r2 = (x ** 2).sum(axis=-1, keepdims=True)
        return x * (1.0 - r2) + kappa * (mu.mean() - x)

    def grad(t, x, mu):
        r2 = (x ** 2).sum(axis=-1)
        g = (1.0 - r2 - kappa)[..., None, None] * eye
        return g - 2.0 * x[..., :, None] * x[..., None, :]

    diffusion, diffusion_inverse = _constant_diffusion_pair(sigma, dim)
    return CoefficientSet(
        dim=dim,
        drift_regular=drift,
        drift_singular=_zero_drift,
        drift_grad_x=grad,
        lions_kernel=_constant_kernel(kappa * eye),
        diffusion=diffusion,
        diffusion_inverse=diffusion_inverse,
        diffusion_grad=None,
        lions_kernel_separable=_mean_field_identity_channels(kappa, dim),
        drift_regular_grad_x=grad,
        label="double_well_mf",
    )


def cylindrical_dini(alpha=0.3, features=("sin",), outer="tanh_sum",
                     mollify_radius=1e-3, sigma=1.0, dim=1) -> CoefficientSet:
    """Singular Dini drift outer(|x|^alpha, mu(features)) with constant sigma."""
    feats = tuple(FEATURES[f] if isinstance(f, str) else f for f in features)
    out_fns = OUTERS[outer](dim) if isinstance(outer, str) else outer
    spec = CylindricalDriftSpec(
        outer=out_fns[0], outer_partial_r=out_fns[1], outer_grad_z=out_fns[2],
        inner_radial_exponent=alpha, features=feats,
        mollify_radius=mollify_radius, dim=dim)
    coeffs = build_cylindrical(spec)
    diffusion, diffusion_inverse = _constant_diffusion_pair(sigma, dim)
    return replace(coeffs, diffusion=diffusion, diffusion_inverse=diffusion_inverse,
                   label="cylindrical_dini")


MODEL_BUILDERS = {
    "linear_mf_ou": linear_mf_ou,
    "double_well_mf": double_well_mf,
    "cylindrical_dini": cylindrical_dini,
}


def make_model(model_id: str, dim: int = 1, **params) -> CoefficientSet:
    """Instantiate a registry model by name."""
    if model_id not in MODEL_BUILDERS:
        raise ValueError(f"unknown model '{model_id}' "
                         f"(available: {sorted(MODEL_BUILDERS)})")
    return MODEL_BUILDERS[model_id](dim=dim, **params)
