"""Covariance closed forms pinned against quadrature and hand calculations."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcp_rd import covariance as cov
from mgcp_rd.exceptions import NumericalError


def unit_kernel(dim=1, amplitude=1.0, lengthscale=1.0):
    return cov.KernelSpec(amplitude, np.full(dim, lengthscale))


def random_kernel(rng, dim):
    return cov.KernelSpec(rng.uniform(0.2, 3.0),
                          rng.uniform(0.1, 8.0, size=dim))


def simple_params(xi0=1.0, sigma=0.1, xi_i=1.0, xi_j=1.0, dim=1):
    return cov.BivariateParams(
        k_0i=unit_kernel(dim), k_0j=unit_kernel(dim),
        k_ii=unit_kernel(dim), k_jj=unit_kernel(dim),
        xi0=xi0, sigma_i=sigma, sigma_j=sigma, xi_i=xi_i, xi_j=xi_j)


class TestCrossCovTerm:
    def test_unit_case_is_one_at_zero_lag(self):
        k = unit_kernel()
        assert cov.cross_cov_term(k, k, 1.0, [0.0]) == pytest.approx(1.0, abs=1e-12)

    def test_identical_kernels_reduce_to_marginal_form(self):
        k = cov.KernelSpec(2.0, np.array([4.0]))
        got = cov.cross_cov_term(k, k, 1.0, [1.0])
        assert got == pytest.approx(4.0 * np.exp(-1.0), rel=1e-12)

    def test_zero_scale_gives_zero(self):
        ka = unit_kernel(amplitude=1.7)
        kb = unit_kernel(lengthscale=0.3)
        assert cov.cross_cov_term(ka, kb, 0.0, [0.4]) == 0.0

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            cov.cross_cov_term(unit_kernel(dim=1), unit_kernel(dim=2), 1.0, [0.0])

    @given(d=st.floats(-5, 5), scale=st.floats(0.1, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded_by_zero_lag(self, d, scale):
        ka = cov.KernelSpec(1.2, np.array([0.7]))
        kb = cov.KernelSpec(0.9, np.array([2.3]))
        fwd = cov.cross_cov_term(ka, kb, scale, [d])
        rev = cov.cross_cov_term(ka, kb, scale, [-d])
        assert fwd == pytest.approx(rev, rel=1e-12)
        assert abs(fwd) <= cov.cross_cov_term(ka, kb, scale, [0.0]) + 1e-15


class TestQuadratureAgreement:
    """The closed form must reproduce the latent-smoothing integral."""

    def test_unit_case_quadrature(self):
        k = unit_kernel()
        assert cov.quadrature_cross_cov(k, k, 1.0, [0.0]) == pytest.approx(1.0, rel=1e-9)

    def test_zero_lag_identical_kernels_equals_scaled_amplitude_sq(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            k = random_kernel(rng, 1)
            s = rng.uniform(0.2, 2.0)
            got = cov.quadrature_cross_cov(k, k, s, [0.0])
            assert got == pytest.approx(s * s * k.amplitude ** 2, rel=1e-8)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_random_draws_match_closed_form(self, dim):
        rng = np.random.default_rng(31 + dim)
        n_points = 2001 if dim == 1 else 701
        for _ in range(10):
            ka, kb = random_kernel(rng, dim), random_kernel(rng, dim)
            s = rng.uniform(0.2, 2.0)
            d = rng.uniform(-2.0, 2.0, size=dim)
            closed = cov.cross_cov_term(ka, kb, s, d)
            quad = cov.quadrature_cross_cov(ka, kb, s, d, n_points=n_points)
            assert closed == pytest.approx(quad, rel=1e-6)

    def test_dim_three_unsupported(self):
        k = unit_kernel(dim=3)
        with pytest.raises(ValueError):
            cov.quadrature_cross_cov(k, k, 1.0, [0.0, 0.0, 0.0])


class TestMarginalAndCross:
    def test_shared_only_marginal(self):
        params = cov.BivariateParams(
            k_0i=cov.KernelSpec(1.0, np.array([2.0])),
            k_0j=unit_kernel(), k_ii=unit_kernel(), k_jj=unit_kernel(),
            xi0=1.0, sigma_i=0.1, sigma_j=0.1, xi_i=0.0, xi_j=0.0)
        got = cov.marginal_cov(params, "i", [1.0])
        assert got == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_marginal_sums_shared_and_unique_terms(self):
        params = simple_params(xi0=0.5)
        got = cov.marginal_cov(params, "j", [0.0])
        assert got == pytest.approx(0.25 + 1.0, rel=1e-12)

    def test_cross_cov_uses_only_shared_latent(self):
        params = simple_params(xi0=0.0)
        assert cov.cross_cov(params, [0.3]) == 0.0

    def test_output_cov_adds_noise_only_on_exact_match(self):
        params = simple_params(sigma=0.3)
        same = cov.output_cov(params, "i", "i", [1.0], [1.0])
        near = cov.output_cov(params, "i", "i", [1.0], [1.0 + 1e-12])
        assert same - near == pytest.approx(0.09, abs=1e-9)
        cross = cov.output_cov(params, "i", "j", [1.0], [1.0])
        assert cross < same


class TestSeparable:
    def test_cross_scaling(self):
        params = cov.SeparableParams(unit_kernel(), t_ij=0.5)
        base = cov.separable_cov(params, 1, 1, [0.2], [0.0])
        assert cov.separable_cov(params, 1, 2, [0.2], [0.0]) == pytest.approx(0.5 * base)

    def test_same_output_ignores_t(self):
        a = cov.SeparableParams(unit_kernel(), t_ij=0.9)
        b = cov.SeparableParams(unit_kernel(), t_ij=-0.9)
        assert cov.separable_cov(a, 2, 2, [0.4], [0.1]) == \
            cov.separable_cov(b, 2, 2, [0.4], [0.1])

    def test_invalid_t_rejected(self):
        with pytest.raises(ValueError):
            cov.SeparableParams(unit_kernel(), t_ij=1.0)
        with pytest.raises(ValueError):
            cov.SeparableParams(unit_kernel(), t_ij=-1.3)


class TestAssembleBivariate:
    def test_two_singleton_outputs_hand_value(self):
        # p_i = p_j = 1 at x = 0 with unit amplitudes: variance 1 + 1 + 0.01?
        # No: use xi0 = 1 and unique scales 0 so the 2x2 is fully shared.
        params = cov.BivariateParams(
            k_0i=unit_kernel(), k_0j=unit_kernel(),
            k_ii=unit_kernel(), k_jj=unit_kernel(),
            xi0=1.0, sigma_i=0.1, sigma_j=0.1, xi_i=0.0, xi_j=0.0)
        C = cov.assemble_bivariate_cov(params, np.array([[0.0]]), np.array([[0.0]]))
        np.testing.assert_allclose(C, [[1.01, 1.0], [1.0, 1.01]], rtol=1e-12)

    def test_symmetry_and_block_shape(self):
        rng = np.random.default_rng(3)
        params = simple_params(xi0=0.7, sigma=0.2)
        X_i = rng.uniform(0, 5, size=(4, 1))
        X_j = rng.uniform(0, 5, size=(6, 1))
        C = cov.assemble_bivariate_cov(params, X_i, X_j)
        assert C.shape == (10, 10)
        np.testing.assert_allclose(C, C.T, atol=1e-15)

    def test_psd_before_and_after_jitter(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            r = np.random.default_rng(seed)
            params = cov.BivariateParams(
                k_0i=random_kernel(r, 1), k_0j=random_kernel(r, 1),
                k_ii=random_kernel(r, 1), k_jj=random_kernel(r, 1),
                xi0=r.uniform(-2, 2), sigma_i=r.uniform(0.05, 1),
                sigma_j=r.uniform(0.05, 1))
            X_i = rng.uniform(0, 3, size=(5, 1))
            X_j = rng.uniform(0, 3, size=(5, 1))
            C = cov.assemble_bivariate_cov(params, X_i, X_j)
            assert np.min(np.linalg.eigvalsh(C)) >= -1e-10
            assert np.min(np.linalg.eigvalsh(cov.add_jitter(C))) > 0

    def test_zero_shared_scale_zeroes_cross_block_exactly(self):
        rng = np.random.default_rng(5)
        params = simple_params(xi0=0.0)
        X_i = rng.uniform(0, 3, size=(4, 1))
        X_j = rng.uniform(0, 3, size=(5, 1))
        C = cov.assemble_bivariate_cov(params, X_i, X_j)
        assert np.all(C[:4, 4:] == 0.0)

    def test_non_finite_parameter_rejected(self):
        with pytest.raises(ValueError):
            cov.KernelSpec(np.nan, np.array([1.0]))
        with pytest.raises(ValueError):
            cov.KernelSpec(1.0, np.array([np.inf]))


class TestAssembleFull:
    def make_params(self, N, rng, dim=1):
        kernels = {}
        for i in range(1, N + 1):
            for j in range(i + 1, N + 1):
                kernels[(i, j)] = (random_kernel(rng, dim), random_kernel(rng, dim))
        return cov.FullMgcpParams(N, kernels, rng.uniform(0.05, 0.5, size=N))

    def test_two_outputs_reduce_to_bivariate(self):
        rng = np.random.default_rng(17)
        full = self.make_params(2, rng)
        k_a, k_b = full.pair_kernels[(1, 2)]
        bi = cov.BivariateParams(
            k_0i=k_a, k_0j=k_b, k_ii=unit_kernel(), k_jj=unit_kernel(),
            xi0=1.0, sigma_i=full.noise[0], sigma_j=full.noise[1],
            xi_i=0.0, xi_j=0.0)
        X = [rng.uniform(0, 4, size=(3, 1)), rng.uniform(0, 4, size=(4, 1))]
        np.testing.assert_allclose(cov.assemble_full_cov(full, X),
                                   cov.assemble_bivariate_cov(bi, X[0], X[1]),
                                   rtol=1e-12)

    def test_zero_latent_scales_leave_noise_only(self):
        rng = np.random.default_rng(23)
        base = self.make_params(3, rng)
        zeroed = cov.FullMgcpParams(
            3, base.pair_kernels, base.noise,
            latent_scales={q: 0.0 for q in base.pair_kernels})
        X = [rng.uniform(0, 4, size=(3, 1)) for _ in range(3)]
        C = cov.assemble_full_cov(zeroed, X)
        np.testing.assert_allclose(C, np.diag(np.repeat(base.noise ** 2, 3)),
                                   atol=0.0)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(29)
        params = self.make_params(4, rng)
        X = [rng.uniform(0, 4, size=(4, 1)) for _ in range(4)]
        C = cov.assemble_full_cov(params, X)
        assert C.shape == (16, 16)
        np.testing.assert_allclose(C, C.T, atol=1e-14)
        assert np.min(np.linalg.eigvalsh(C)) >= -1e-10

    def test_missing_pair_rejected(self):
        rng = np.random.default_rng(31)
        kernels = {(1, 2): (random_kernel(rng, 1), random_kernel(rng, 1))}
        with pytest.raises(ValueError):
            cov.FullMgcpParams(3, kernels, np.array([0.1, 0.1, 0.1]))


class TestJitteredCholesky:
    def test_factorizes_assembled_matrix(self):
        rng = np.random.default_rng(37)
        params = simple_params(xi0=1.2, sigma=0.05)
        X = rng.uniform(0, 2, size=(6, 1))
        C = cov.assemble_bivariate_cov(params, X, X)
        L, rel = cov.jittered_cholesky(C)
        assert rel == cov.JITTER_REL
        np.testing.assert_allclose(L @ L.T, cov.add_jitter(C), rtol=1e-10)

    def test_hopeless_matrix_raises_numerical_error(self):
        C = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(NumericalError):
            cov.jittered_cholesky(C)
