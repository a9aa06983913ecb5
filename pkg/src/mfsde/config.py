"""Experiment configuration: one JSON document per run.

Validation reports the dotted path of the offending field.  The config hash
covers exactly the semantically meaningful fields (model, grid, budgets,
gate, phi, f, init, seed, task extras); output paths and worker counts do
not enter it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .measures import (EmpiricalMeasure, GaussianLaw, Perturbation, PointLaw,
                       UniformLaw, constant_perturbation, zero_perturbation)
from .models import MODEL_BUILDERS

TASKS = ("estimate", "compare", "a1_sweep", "a2_check", "tangent_check")
GATES = ("linear", "smoothstep")

_MIN_REPS = {"estimate": 8, "compare": 8, "a1_sweep": 8,
             "a2_check": 2, "tangent_check": 1}


def _get(d, path, key, kind=None, required=True, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "missing field")
        return default
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        names = kind.__name__ if isinstance(kind, type) else \
            "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}" if path else key,
                          f"expected {names}, got {type(val).__name__}")
    return val


def _positive(value, path, strict=True):
    if (value <= 0) if strict else (value < 0):
        raise ConfigError(path, "must be positive")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    model_id: str
    dim: int
    model_params: dict
    horizon: float
    steps: int
    particles: int
    replications: int
    gate: str
    phi: dict
    f: dict
    init: dict
    seed: int
    fd: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    a2: dict = field(default_factory=dict)
    tangent: dict = field(default_factory=dict)
    expected: Optional[dict] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("", "config must be a JSON object")
        task = _get(raw, "", "task", str)
        if task not in TASKS:
            raise ConfigError("task", f"unknown task '{task}' (one of {TASKS})")

        model = _get(raw, "", "model", dict)
        model_id = _get(model, "model", "id", str)
        if model_id not in MODEL_BUILDERS:
            raise ConfigError("model.id",
                              f"unknown model '{model_id}' "
                              f"(available: {sorted(MODEL_BUILDERS)})")
        dim = _get(model, "model", "dim", int, required=False, default=1)
        _positive(dim, "model.dim")
        params = _get(model, "model", "params", dict, required=False, default={})

        grid = _get(raw, "", "grid", dict)
        horizon = float(_get(grid, "grid", "horizon", (int, float)))
        _positive(horizon, "grid.horizon")
        steps = _get(grid, "grid", "steps", int)
        _positive(steps, "grid.steps")

        particles = _get(raw, "", "particles", int)
        if particles < 2:
            raise ConfigError("particles", "need at least 2 particles")
        replications = _get(raw, "", "replications", int)
        if replications < _MIN_REPS[task]:
            raise ConfigError("replications",
                              f"task '{task}' requires at least "
                              f"{_MIN_REPS[task]} replications")

        gate = _get(raw, "", "gate", str, required=False, default="linear")
        if gate not in GATES:
            raise ConfigError("gate", f"unknown gate '{gate}' (one of {GATES})")

        phi = _get(raw, "", "phi", dict, required=False,
                   default={"kind": "constant", "value": [1.0] * dim})
        f_spec = _get(raw, "", "f", dict, required=False,
                      default={"kind": "coord_mean", "axis": 0})
        init = _get(raw, "", "init", dict, required=False,
                    default={"kind": "gaussian", "mean": [0.0] * dim, "std": 1.0})
        seed = _get(raw, "", "seed", int)
        if not 0 <= seed < (1 << 64):
            raise ConfigError("seed", "must fit in 64 bits")

        cfg = cls(
            task=task, model_id=model_id, dim=dim, model_params=dict(params),
            horizon=horizon, steps=steps, particles=particles,
            replications=replications, gate=gate, phi=dict(phi), f=dict(f_spec),
            init=dict(init), seed=seed,
            fd=dict(_get(raw, "", "fd", dict, required=False, default={})),
            sweep=dict(_get(raw, "", "sweep", dict, required=False, default={})),
            a2=dict(_get(raw, "", "a2", dict, required=False, default={})),
            tangent=dict(_get(raw, "", "tangent", dict, required=False, default={})),
            expected=_get(raw, "", "expected", dict, required=False),
        )
        # Fail early on malformed sub-specs.
        make_phi(cfg.phi, dim)
        make_f(cfg.f)
        make_init(cfg.init, dim)
        if task == "a2_check":
            if "mu" not in cfg.a2 or "nu" not in cfg.a2:
                raise ConfigError("a2", "a2_check needs 'mu' and 'nu' initial laws")
            make_init(cfg.a2["mu"], dim, path="a2.mu")
            make_init(cfg.a2["nu"], dim, path="a2.nu")
        if task in ("a1_sweep", "a2_check"):
            pts = cfg.sweep.get("t_points", [0.25, 0.5, 1.0])
            if not pts or any(t <= 0 for t in pts):
                raise ConfigError("sweep.t_points", "must be positive and nonempty")
        return cfg

    def semantic_dict(self) -> dict:
        out = {
            "task": self.task,
            "model": {"id": self.model_id, "dim": self.dim,
                      "params": self.model_params},
            "grid": {"horizon": self.horizon, "steps": self.steps},
            "particles": self.particles,
            "replications": self.replications,
            "gate": self.gate,
            "phi": self.phi,
            "f": self.f,
            "init": self.init,
            "seed": self.seed,
        }
        if self.task == "compare":
            out["fd"] = self.fd
        if self.task in ("a1_sweep", "a2_check"):
            out["sweep"] = self.sweep
        if self.task == "a2_check":
            out["a2"] = self.a2
        if self.task == "tangent_check":
            out["tangent"] = self.tangent
        if self.expected is not None:
            out["expected"] = self.expected
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Spec -> object builders

def make_phi(spec: dict, dim: int, path: str = "phi") -> Perturbation:
    kind = _get(spec, path, "kind", str)
    if kind == "constant":
        value = _get(spec, path, "value", (list, int, float))
        v = np.atleast_1d(np.asarray(value, dtype=float))
        if v.size == 1 and dim > 1:
            v = np.full(dim, float(v[0]))
        if v.size != dim:
            raise ConfigError(f"{path}.value", f"expected {dim} components")
        return constant_perturbation(v)
    if kind == "zero":
        return zero_perturbation(dim)
    scale = float(spec.get("scale", 1.0))
    if kind == "identity":
        return Perturbation(lambda x: scale * x, f"identity*{scale:g}")
    if kind == "sin":
        return Perturbation(lambda x: scale * np.sin(x), f"sin*{scale:g}")
    if kind == "gauss":
        return Perturbation(
            lambda x: scale * np.exp(-0.5 * (x ** 2).sum(axis=-1))[..., None] * x,
            f"gauss*{scale:g}")
    raise ConfigError(f"{path}.kind", f"unknown perturbation kind '{kind}'")


def make_f(spec: dict, path: str = "f"):
    """Terminal functional from its spec; returns (callable, label)."""
    kind = _get(spec, path, "kind", str)
    axis = int(spec.get("axis", 0))
    if kind == "coord_mean":
        return (lambda x: x[..., axis]), f"coord{axis}"
    if kind == "sigmoid":
        center = float(spec.get("center", 0.0))
        width = float(spec.get("width", 1.0))
        if width <= 0:
            raise ConfigError(f"{path}.width", "must be positive")
        return (lambda x: np.tanh((x[..., axis] - center) / width)), \
            f"sigmoid({center:g},{width:g})"
    if kind == "smooth_indicator":
        thr = float(spec.get("threshold", 0.0))
        width = float(spec.get("width", 0.5))
        if width <= 0:
            raise ConfigError(f"{path}.width", "must be positive")
        return (lambda x: 0.5 * (1.0 + np.tanh((x[..., axis] - thr) / width))), \
            f"ind({thr:g},{width:g})"
    if kind == "constant":
        value = float(spec.get("value", 1.0))
        return (lambda x: np.full(x.shape[0], value)), f"const{value:g}"
    raise ConfigError(f"{path}.kind", f"unknown functional kind '{kind}'")


def make_init(spec: dict, dim: int, path: str = "init"):
    kind = _get(spec, path, "kind", str)
    if kind == "gaussian":
        mean = _get(spec, path, "mean", list)
        if len(mean) != dim:
            raise ConfigError(f"{path}.mean", f"expected {dim} components")
        std = float(spec.get("std", 1.0))
        if std < 0:
            raise ConfigError(f"{path}.std", "must be nonnegative")
        return GaussianLaw(tuple(float(m) for m in mean), std)
    if kind == "point":
        at = _get(spec, path, "at", list)
        if len(at) != dim:
            raise ConfigError(f"{path}.at", f"expected {dim} components")
        return PointLaw(tuple(float(a) for a in at))
    if kind == "uniform":
        low = _get(spec, path, "low", list)
        high = _get(spec, path, "high", list)
        if len(low) != dim or len(high) != dim:
            raise ConfigError(f"{path}.low", f"expected {dim} components")
        return UniformLaw(tuple(float(a) for a in low),
                          tuple(float(b) for b in high))
    if kind == "csv":
        from .measures import AtomsLaw
        measure = EmpiricalMeasure.from_csv(_get(spec, path, "path", str))
        if measure.dim != dim:
            raise ConfigError(f"{path}.path", f"measure dim {measure.dim} != {dim}")
        return AtomsLaw(measure)
    raise ConfigError(f"{path}.kind", f"unknown initial law '{kind}'")
