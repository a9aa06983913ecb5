import numpy as np
import pytest

from mfsde.bismut import estimate_intrinsic_derivative, make_gate
from mfsde.measures import (EmpiricalMeasure, GaussianLaw, PointLaw,
                            constant_perturbation, zero_perturbation)
from mfsde.models import cylindrical_dini, double_well_mf, linear_mf_ou
from mfsde.oracles import (Budget, FdConfig, LinearMfParams, a1_sweep,
                           a2_check, fd_intrinsic_derivative, linear_mf_exact,
                           pathwise_tangent_check)
from mfsde.rng import STREAM_FD_PATH, RngSpec
from mfsde.solver import TimeGrid, forward_paths

EXP_HALF = 0.6065306597126334
RK4_EXP_HALF = 0.6065306597127323      # 200-step RK4 of m' = -0.5 m
GAUSS_TV_HALF_AT_1 = 0.1974126513658474  # 2 Phi(0.25) - 1


class TestFdConfig:
    def test_defaults(self):
        fd = FdConfig()
        assert fd.eps == (1e-2, 5e-3, 2.5e-3)
        assert not fd.richardson

    def test_rejects_bad_ladders(self):
        with pytest.raises(ValueError):
            FdConfig(eps=(1e-3, 1e-2))
        with pytest.raises(ValueError):
            FdConfig(eps=(0.0,))
        with pytest.raises(ValueError):
            FdConfig(eps=(1e-2,), richardson=True)


class TestFdEstimator:
    def test_zero_phi_exact_zero(self):
        res = fd_intrinsic_derivative(
            linear_mf_ou(), GaussianLaw((0.0,), 1.0), zero_perturbation(1),
            lambda x: x[..., 0], TimeGrid(1.0, 16), 32, 8, FdConfig(), RngSpec(1))
        assert res.estimate == 0.0
        assert res.std_error == 0.0

    def test_brownian_translation_exact_one(self):
        res = fd_intrinsic_derivative(
            linear_mf_ou(a=0.0, c=0.0, sigma=1.0), GaussianLaw((0.0,), 1.0),
            constant_perturbation([1.0]), lambda x: x[..., 0],
            TimeGrid(1.0, 32), 64, 8, FdConfig(), RngSpec(2))
        assert res.estimate == pytest.approx(1.0, abs=1e-10)
        for _, mean, _ in res.ladder:
            assert mean == pytest.approx(1.0, abs=1e-10)

    def test_linear_benchmark_within_discretization(self):
        res = fd_intrinsic_derivative(
            linear_mf_ou(a=-1.0, c=0.5, sigma=0.2), GaussianLaw((0.0,), 1.0),
            constant_perturbation([1.0]), lambda x: x[..., 0],
            TimeGrid(1.0, 512), 256, 8, FdConfig(), RngSpec(3))
        # Affine flow: the quotient is deterministic, only Euler bias remains.
        assert res.std_error < 1e-12
        assert abs(res.estimate - EXP_HALF) < 5e-4

    def test_crn_coupling_zero_at_zero_shift(self):
        # eps = 0 shift must reproduce the base path bit for bit.
        coeffs = double_well_mf()
        rng = RngSpec(4)
        grid = TimeGrid(0.5, 32)
        x0 = GaussianLaw((0.0,), 1.0).sample(rng, 0, 32)
        dw = rng.normals(STREAM_FD_PATH, 0, grid.steps, 32, 1) * np.sqrt(grid.dt)
        a, _ = forward_paths(coeffs, x0, dw, grid, record=False)
        b, _ = forward_paths(coeffs, x0 + 0.0, dw, grid, record=False)
        assert np.array_equal(a, b)

    def test_richardson_consistent_with_ladder(self):
        coeffs = cylindrical_dini(alpha=0.3)
        res = fd_intrinsic_derivative(
            coeffs, GaussianLaw((0.0,), 1.0), constant_perturbation([1.0]),
            lambda x: np.tanh(x[..., 0]), TimeGrid(0.5, 64), 256, 12,
            FdConfig(eps=(2e-2, 1e-2), richardson=True), RngSpec(5))
        lo = min(m for _, m, _ in res.ladder)
        hi = max(m for _, m, _ in res.ladder)
        ses = [s for _, _, s in res.ladder]
        pad = max(ses) + res.std_error
        assert lo - pad <= res.estimate <= hi + pad


class TestLinearExact:
    def test_neutral_drift(self):
        assert linear_mf_exact(LinearMfParams(1.0, -1.0, 0.3), 2.0, shift=1.7) \
            == pytest.approx(1.7)

    def test_benchmark_value_matches_rk4(self):
        got = linear_mf_exact(LinearMfParams(-1.0, 0.5, 0.2), 1.0, shift=1.0)
        assert got == pytest.approx(EXP_HALF, abs=1e-14)
        assert got == pytest.approx(RK4_EXP_HALF, abs=1e-9)

    def test_zero_shift(self):
        assert linear_mf_exact(LinearMfParams(-1.0, 0.5, 0.2), 1.0, shift=0.0) == 0.0

    def test_unsupported_functional(self):
        with pytest.raises(ValueError):
            linear_mf_exact(LinearMfParams(-1.0, 0.5, 0.2), 1.0, f="variance")


class TestOracleClosure:
    def test_three_way_agreement_linear_model(self):
        coeffs = linear_mf_ou(a=-1.0, c=0.5, sigma=0.2)
        rng = RngSpec(6)
        grid = TimeGrid(1.0, 256)
        f = lambda x: x[..., 0]
        phi = constant_perturbation([1.0])
        init = GaussianLaw((0.0,), 1.0)
        bis = estimate_intrinsic_derivative(coeffs, init, phi, f, grid, 512, 16,
                                            make_gate("linear", 1.0), rng)
        fdr = fd_intrinsic_derivative(coeffs, init, phi, f, grid, 512, 16,
                                      FdConfig(), rng)
        exact = linear_mf_exact(LinearMfParams(-1.0, 0.5, 0.2), 1.0, shift=1.0)
        tol = 3 * (bis.std_error + fdr.std_error) + 2e-3
        assert abs(bis.estimate - fdr.estimate) <= tol
        assert abs(bis.estimate - exact) <= 3 * bis.std_error + 2e-3
        assert abs(fdr.estimate - exact) <= 3 * fdr.std_error + 2e-3


class TestA1Sweep:
    def test_constant_f_vacuous_pass(self):
        table = a1_sweep(linear_mf_ou(), GaussianLaw((0.0,), 1.0),
                         lambda x: np.full(x.shape[0], 2.0), [0.5, 1.0],
                         Budget(64, 8, 16), RngSpec(7))
        assert table.passed
        for row in table.by_statistic("c_hat"):
            assert np.isnan(row.value)

    def test_brownian_closed_form(self):
        # Zero drift, sigma = Id, Var0 = 1: norm = 1, std = sqrt(1 + t).
        table = a1_sweep(linear_mf_ou(a=0.0, c=0.0, sigma=1.0),
                         GaussianLaw((0.0,), 1.0), lambda x: x[..., 0],
                         [0.25, 1.0], Budget(512, 12, 64), RngSpec(8),
                         probe_count=2)
        assert table.passed
        for row in table.by_statistic("std"):
            assert row.value == pytest.approx(np.sqrt(1.0 + row.t), rel=0.15)
        for row in table.by_statistic("c_hat"):
            expect = np.sqrt(row.t) / np.sqrt(1.0 + row.t)
            assert row.value == pytest.approx(expect, rel=0.2)
            assert row.value <= 1.0 + 0.1

    def test_rejects_nonpositive_times(self):
        with pytest.raises(ValueError):
            a1_sweep(linear_mf_ou(), GaussianLaw((0.0,), 1.0),
                     lambda x: x[..., 0], [0.0, 1.0], Budget(16, 8, 8), RngSpec(0))


class TestA2Check:
    def test_requires_distinct_measures(self):
        mu = EmpiricalMeasure(np.zeros((8, 1)))
        with pytest.raises(ValueError):
            a2_check(linear_mf_ou(), mu, mu, [1.0], Budget(32, 4, 8), RngSpec(0))

    def test_requires_one_dim(self):
        mu = EmpiricalMeasure(np.zeros((8, 2)))
        nu = EmpiricalMeasure(np.ones((8, 2)))
        with pytest.raises(ValueError):
            a2_check(linear_mf_ou(dim=2), mu, nu, [1.0], Budget(32, 4, 8),
                     RngSpec(0))

    def test_same_law_gives_noise_level_bound(self):
        # Two iid samples of the same law: lv is pure sampling noise.
        rng = np.random.default_rng(0)
        n = 1024
        mu = EmpiricalMeasure(rng.normal(size=(n, 1)))
        nu = EmpiricalMeasure(rng.normal(size=(n, 1)))
        table = a2_check(linear_mf_ou(a=0.0, c=0.0, sigma=1.0), mu, nu,
                         [1.0], Budget(n, 4, 32), RngSpec(9))
        lv = table.by_statistic("tv_lower")[0].value
        assert lv < 6.0 / np.sqrt(n)

    def test_gaussian_point_mass_oracle(self):
        # delta_0 vs delta_{1/2}, zero drift, sigma = Id at t = 1:
        # TV = 2 Phi(0.25) - 1 (probability scale).
        mu = EmpiricalMeasure(np.zeros((2048, 1)))
        nu = EmpiricalMeasure(np.full((2048, 1), 0.5))
        table = a2_check(linear_mf_ou(a=0.0, c=0.0, sigma=1.0), mu, nu,
                         [1.0], Budget(2048, 6, 64), RngSpec(10))
        lv = table.by_statistic("tv_lower")[0].value
        assert abs(lv - GAUSS_TV_HALF_AT_1) < 0.05

    def test_ergodic_contraction_decreases_lv(self):
        # Both initial laws relax to the same invariant Gaussian.
        mu = EmpiricalMeasure(np.full((1024, 1), -1.0))
        nu = EmpiricalMeasure(np.full((1024, 1), 1.0))
        table = a2_check(linear_mf_ou(a=-1.0, c=0.0, sigma=0.5), mu, nu,
                         [0.5, 1.5, 3.0], Budget(1024, 4, 64), RngSpec(11))
        lvs = [row.value for row in table.by_statistic("tv_lower")]
        assert lvs[0] > lvs[1] > lvs[2]


class TestTangentLadder:
    def test_affine_model_error_at_floating_floor(self):
        ladder = pathwise_tangent_check(
            linear_mf_ou(a=-1.0, c=0.5, sigma=0.2), GaussianLaw((0.0,), 1.0),
            constant_perturbation([1.0]), TimeGrid(1.0, 64), 64,
            [1e-2, 5e-3], RngSpec(12))
        assert max(ladder.errors) <= 1e-10

    def test_double_well_second_order_ratios(self):
        ladder = pathwise_tangent_check(
            double_well_mf(kappa=0.5, sigma=0.5), GaussianLaw((0.2,), 1.0),
            constant_perturbation([1.0]), TimeGrid(0.5, 128), 128,
            [1e-2, 5e-3, 2.5e-3], RngSpec(13))
        assert ladder.passed
        for ratio in ladder.ratios:
            assert 0.05 < ratio <= 0.6   # ~0.25 for a squared first-order term
