"""Counter-based Gaussian streams for reproducible parallel simulation.

Every random number is a pure function of
``(master_seed, stream, replication, step, particle, axis)``, so output never
depends on scheduling, worker count, or generation order.  The generator is a
SplitMix64-style counter hash: the packed counter indexes into the stream
``mix64(key + counter * GOLDEN)``; the two 32-bit halves of one output feed a
Box-Muller transform (cosine branch).  Uniforms have 32-bit resolution, which
truncates the Gaussian tail at ~6.66 sigma; irrelevant at Monte Carlo scale.

Named streams keep estimators seed-disjoint under one master seed: the Bismut
estimator and the finite-difference oracle never touch the same counters.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

# Stream tags.  PATH/INIT drive the main estimator, FD_* the coupled
# finite-difference oracle, PROBE the random perturbation fields.
STREAM_PATH = 0
STREAM_INIT = 1
STREAM_FD_PATH = 2
STREAM_FD_INIT = 3
STREAM_PROBE = 4

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Packed-counter field widths: axis 8 bits, particle 24 bits, step 32 bits.
MAX_AXES = 1 << 8
MAX_PARTICLES = 1 << 24
MAX_STEPS = 1 << 32


def _mix64_int(x: int) -> int:
    """SplitMix64 finalizer on plain Python ints (mod 2**64)."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


@njit(cache=True, nogil=True)
def _fill_normals(out, key, step0, n_steps, n_particles, dim):  # pragma: no cover
    idx = 0
    for k in range(n_steps):
        ks = np.uint64(step0 + k) << np.uint64(32)
        for i in range(n_particles):
            ki = ks | (np.uint64(i) << np.uint64(8))
            for a in range(dim):
                ctr = ki | np.uint64(a)
                z = key + ctr * np.uint64(0x9E3779B97F4A7C15)
                z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                z = z ^ (z >> np.uint64(31))
                u1 = (np.float64(z >> np.uint64(32)) + 1.0) * (2.0 ** -32)
                u2 = np.float64(z & np.uint64(0xFFFFFFFF)) * (2.0 ** -32)
                out[idx] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
                idx += 1


@njit(cache=True, nogil=True)
def _fill_uniforms(out, key, n_particles, dim):  # pragma: no cover
    idx = 0
    for i in range(n_particles):
        ki = np.uint64(i) << np.uint64(8)
        for a in range(dim):
            ctr = ki | np.uint64(a)
            z = key + ctr * np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            out[idx] = np.float64(z >> np.uint64(11)) * (2.0 ** -53)
            idx += 1


@dataclass(frozen=True)
class RngSpec:
    """Master seed plus the derivation of per-(stream, replication) keys."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < (1 << 64):
            raise ValueError("master_seed must fit in 64 bits")

    def key(self, stream: int, replication: int) -> np.uint64:
        k = _mix64_int(_GOLDEN ^ int(self.master_seed))
        k = _mix64_int(k + (int(stream) + 1) * _GOLDEN)
        k = _mix64_int(k + (int(replication) + 1) * _GOLDEN)
        return np.uint64(k)

    def normals(self, stream, replication, n_steps, n_particles, dim, step0=0):
        """Standard-normal block of shape ``(n_steps, n_particles, dim)``."""
        _check_extent(n_steps + step0, n_particles, dim)
        out = np.empty(n_steps * n_particles * dim)
        _fill_normals(out, self.key(stream, replication), step0,
                      n_steps, n_particles, dim)
        return out.reshape(n_steps, n_particles, dim)

    def normal_matrix(self, stream, replication, n_particles, dim):
        """Standard-normal block of shape ``(n_particles, dim)`` (step slot 0)."""
        return self.normals(stream, replication, 1, n_particles, dim)[0]

    def uniform_matrix(self, stream, replication, n_particles, dim):
        """Uniform [0,1) block of shape ``(n_particles, dim)``."""
        _check_extent(1, n_particles, dim)
        out = np.empty(n_particles * dim)
        _fill_uniforms(out, self.key(stream, replication), n_particles, dim)
        return out.reshape(n_particles, dim)


def _check_extent(n_steps, n_particles, dim):
    if n_steps > MAX_STEPS or n_particles > MAX_PARTICLES or dim > MAX_AXES:
        raise ValueError(
            f"counter layout exceeded: steps<{MAX_STEPS}, "
            f"particles<{MAX_PARTICLES}, axes<{MAX_AXES}")
