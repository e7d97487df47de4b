import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import jacobi_singular_values
from risgeo.numerics import (InvalidInputError, NumericFailureError, RngStream, eig_hermitian, gamma_fn,
                             gauss_legendre, integrate, log_gamma, lower_incomplete_gamma_regularized,
                             randomized_qb, sample_gamma, sample_nakagami, sample_poisson, svd)


def _cplx(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


class TestSvd:
    def test_identity(self):
        assert_allclose(svd(np.eye(3)).s, [1, 1, 1], atol=1e-15)

    def test_rank_one_norm_product(self):
        u = np.array([2.0, 0, 0])
        v = np.array([0, 3.0, 0, 0])
        s = svd(np.outer(u, v.conj())).s
        assert_allclose(s[0], 6.0, rtol=1e-14)
        assert_allclose(s[1:], 0.0, atol=1e-14)

    def test_random_against_jacobi(self):
        a = _cplx(np.random.default_rng(4), 4, 4)
        res = svd(a)
        _, s_ref, _ = jacobi_singular_values(a)
        assert np.linalg.norm(a - res.reconstruct()) < 1e-9 * np.linalg.norm(a)
        assert_allclose(res.s, s_ref, rtol=1e-12)
        assert np.all(np.diff(res.s) <= 0)
        assert_allclose(res.u.conj().T @ res.u, np.eye(4), atol=1e-12)
        assert_allclose(res.vh @ res.v, np.eye(4), atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            svd(np.array([[1.0, np.nan]]))
        with pytest.raises(InvalidInputError):
            svd(np.zeros((0, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_reconstruction_property(self, m, n, seed):
        a = _cplx(np.random.default_rng(seed), m, n)
        res = svd(a)
        assert np.linalg.norm(a - res.reconstruct()) <= 1e-9 * np.linalg.norm(a)
        # largest singular value squared equals top eigenvalue of a^H a
        _, w = eig_hermitian(a.conj().T @ a)
        assert_allclose(res.s[0] ** 2, w[0], rtol=1e-8)


class TestRandomizedQb:
    def test_rank_one(self):
        rng = np.random.default_rng(0)
        a = np.outer(_cplx(rng, 6), _cplx(rng, 5))
        res = randomized_qb(a, block=1, tol=1e-8, rng=1)
        assert res.tau == 1
        assert res.residual < 1e-8

    def test_zero_matrix(self):
        res = randomized_qb(np.zeros((4, 3)), block=2, tol=1e-3, rng=1)
        assert res.tau == 0
        assert res.q.shape == (4, 0) and res.b.shape == (0, 3)

    def test_rank_three_against_svd_rank(self):
        rng = np.random.default_rng(7)
        a = _cplx(rng, 8, 3) @ _cplx(rng, 3, 8)
        res = randomized_qb(a, block=2, tol=1e-8, rng=RngStream(3))
        rank = int(np.sum(svd(a).s > 1e-10 * svd(a).s[0]))
        assert rank == 3 and res.tau == 3
        assert res.residual < 1e-8
        assert_allclose(res.q.conj().T @ res.q, np.eye(3), atol=1e-12)

    def test_full_rank_pipeline_recovers_singular_values(self):
        a = _cplx(np.random.default_rng(11), 12, 6)
        res = randomized_qb(a, block=4, tol=1e-12, rng=5)
        assert res.tau == 6
        _, w = eig_hermitian(res.b @ res.b.conj().T)
        assert_allclose(np.sqrt(np.clip(w, 0, None)), svd(a).s, rtol=1e-6)

    def test_rank_cap_flags_saturation(self):
        a = _cplx(np.random.default_rng(2), 10, 10)
        res = randomized_qb(a, block=2, tol=1e-6, rng=1, max_rank=4)
        assert res.tau == 4 and res.saturated

    def test_bad_parameters(self):
        with pytest.raises(InvalidInputError):
            randomized_qb(np.eye(2), block=0, tol=0.1, rng=1)
        with pytest.raises(InvalidInputError):
            randomized_qb(np.eye(2), block=1, tol=0.0, rng=1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(2, 10), st.integers(1, 4), st.floats(0.05, 0.9),
           st.integers(0, 2**32 - 1))
    def test_residual_contract(self, m, n, block, tol, seed):
        a = _cplx(np.random.default_rng(seed), m, n)
        res = randomized_qb(a, block=block, tol=tol, rng=seed)
        direct = np.linalg.norm(a - res.q @ res.b) / np.linalg.norm(a)
        assert_allclose(direct, res.residual, atol=1e-10)
        assert res.residual <= tol + 1e-12 or res.saturated
        assert res.tau <= min(m, n)


class TestEigHermitian:
    def test_diagonal(self):
        vec, val = eig_hermitian(np.diag([3.0, 1.0, 2.0]))
        assert_allclose(val, [3, 2, 1])

    def test_swap(self):
        _, val = eig_hermitian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert_allclose(val, [1, -1], atol=1e-15)

    def test_gram_matches_squared_singular_values(self):
        b = _cplx(np.random.default_rng(3), 5, 7)
        c = b @ b.conj().T
        vec, val = eig_hermitian(c)
        assert_allclose(val, svd(b).s ** 2, rtol=1e-8)
        assert_allclose(c @ vec, vec * val, atol=1e-8 * val[0])

    def test_non_hermitian_rejected(self):
        with pytest.raises(InvalidInputError):
            eig_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestIntegrate:
    def test_linear(self):
        assert_allclose(integrate(lambda x: x, 0.0, 1.0), 0.5, rtol=1e-14)

    def test_infinite_exponential(self):
        assert_allclose(integrate(lambda x: np.exp(-x), 0.0, math.inf, tol=1e-10), 1.0, atol=1e-10)

    def test_disk_area_from_center(self):
        xi, r = 0.0, 100.0
        f = lambda psi: (np.sqrt(r**2 - xi**2 * np.sin(psi) ** 2) - xi * np.cos(psi)) ** 2 / 2
        assert_allclose(integrate(f, 0.0, 2 * np.pi), np.pi * 1e4, rtol=1e-12)

    def test_against_scipy_quad(self):
        f = lambda x: np.sqrt(x) * np.exp(-x) * np.cos(3 * x)
        ref, _ = scipy.integrate.quad(f, 0.0, 20.0, epsabs=1e-12, limit=500)
        assert_allclose(integrate(f, 0.0, 20.0, tol=1e-11), ref, atol=1e-10)

    def test_breakpoints_and_reversed_limits(self):
        f = lambda x: np.abs(x - 0.3)
        assert_allclose(integrate(f, 0.0, 1.0, breakpoints=[0.3]), 0.045 + 0.245, rtol=1e-13)
        assert_allclose(integrate(f, 1.0, 0.0, breakpoints=[0.3]), -0.29, rtol=1e-13)

    def test_failure_carries_estimate(self):
        with pytest.raises(NumericFailureError) as info:
            integrate(lambda x: np.sin(1.0 / np.maximum(x, 1e-300)), 0.0, 1.0, tol=1e-14, max_intervals=20)
        assert info.value.best_estimate is not None

    def test_gauss_legendre_polynomial_exactness(self):
        x, w = gauss_legendre(5, -1.0, 3.0)
        assert_allclose(np.sum(w * x**9), (3.0**10 - 1.0) / 10, rtol=1e-12)


class TestSpecialFunctions:
    def test_gamma_known_values(self):
        assert_allclose(gamma_fn(1.0), 1.0, rtol=1e-14)
        assert_allclose(gamma_fn(0.5), math.sqrt(math.pi), rtol=1e-13)
        assert_allclose(gamma_fn(1.5) ** 2 / gamma_fn(1.0) ** 2, math.pi / 4, rtol=1e-13)

    def test_gamma_against_scipy(self):
        x = np.linspace(0.1, 30.0, 400)
        assert_allclose(gamma_fn(x), scipy.special.gamma(x), rtol=1e-12)
        assert_allclose(log_gamma(x), scipy.special.gammaln(x), rtol=1e-12, atol=1e-13)

    def test_incomplete_exponential_case(self):
        x = np.linspace(0.0, 20.0, 81)
        assert_allclose(lower_incomplete_gamma_regularized(1.0, x), 1 - np.exp(-x), atol=1e-14)

    def test_incomplete_against_scipy(self):
        a = np.array([0.3, 1.5, 2.5, 40.0, 160.0, 1000.0])[:, None]
        x = np.geomspace(1e-3, 2e3, 60)[None, :]
        assert_allclose(lower_incomplete_gamma_regularized(a, x), scipy.special.gammainc(a, x),
                        rtol=1e-10, atol=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 500.0), st.floats(0.0, 1e3), st.floats(0.0, 1e3))
    def test_incomplete_is_cdf(self, a, x1, x2):
        lo, hi = sorted((x1, x2))
        p_lo = lower_incomplete_gamma_regularized(a, lo)
        p_hi = lower_incomplete_gamma_regularized(a, hi)
        assert 0.0 <= p_lo <= p_hi + 1e-14 <= 1.0 + 1e-14
        assert lower_incomplete_gamma_regularized(a, 0.0) == 0.0
        assert lower_incomplete_gamma_regularized(a, math.inf) == 1.0

    def test_domain(self):
        with pytest.raises(InvalidInputError):
            lower_incomplete_gamma_regularized(0.0, 1.0)
        with pytest.raises(InvalidInputError):
            lower_incomplete_gamma_regularized(1.0, -1.0)


class TestSamplers:
    def test_poisson_zero(self):
        assert sample_poisson(0.0, 1) == 0
        assert np.all(sample_poisson(0.0, 1, size=10) == 0)

    def test_nakagami_unit_power(self):
        x = sample_nakagami(1.0, 1.0, RngStream(1), size=1_000_000)
        assert abs(np.mean(x**2) - 1.0) < 0.005

    def test_nakagami_power_variance(self):
        x = sample_nakagami(2.5, 1.0, RngStream(2), size=1_000_000)
        assert abs(np.var(x**2) - 0.4) < 0.01

    def test_gamma_rate_parameterization(self):
        x = sample_gamma(3.0, 2.0, 5, size=200_000)
        assert abs(np.mean(x) - 1.5) < 0.01

    def test_reproducible_streams(self):
        a = sample_nakagami(1.5, 2.0, RngStream(9, 4), size=50)
        b = sample_nakagami(1.5, 2.0, RngStream(9, 4), size=50)
        c = sample_nakagami(1.5, 2.0, RngStream(9, 5), size=50)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert RngStream(1).child(2, 3) == RngStream(1).child(2, 3)
        assert RngStream(1).child(2, 3) != RngStream(1).child(3, 2)

    def test_domain(self):
        with pytest.raises(InvalidInputError):
            sample_nakagami(0.0, 1.0, 1)
        with pytest.raises(InvalidInputError):
            sample_poisson(-1.0, 1)
