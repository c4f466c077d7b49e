"""Optimizer behavior: classic test functions, determinism, fit contracts."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from mgcp_rd import likelihood as lik, optimizer as opt
from mgcp_rd.exceptions import DegenerateDataError, FitError
from mgcp_rd.simulate import Output


def rosenbrock(v):
    x, y = v
    f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
    g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    return f, g


def quadratic(v):
    return 0.5 * float(v @ v), v


def sine_pair(seed=0, p=10):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 10, p)
    di = Output(1, x[:, None], 1 + np.sin(x) + 0.1 * rng.standard_normal(p))
    dj = Output(2, x[:, None], 1 + np.sin(x) + 0.1 * rng.standard_normal(p))
    return di, dj


def independent_pair(seed=0, p=12):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 10, p)
    di = Output(1, x[:, None], rng.standard_normal(p))
    dj = Output(2, x[:, None], rng.standard_normal(p))
    return di, dj


class TestMinimize:
    def test_quadratic_bowl_converges(self):
        cfg = opt.OptimizerConfig(max_iters=100, grad_tol=1e-10, restarts=1)
        res = opt.minimize(quadratic, np.array([3.0, -4.0, 5.0]), cfg)
        assert res.converged
        assert np.linalg.norm(res.x) < 1e-9

    def test_rosenbrock_within_budget(self):
        cfg = opt.OptimizerConfig(max_iters=2000, grad_tol=1e-10, restarts=1)
        res = opt.minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        assert np.linalg.norm(res.x - 1.0) < 1e-3

    def test_trace_monotone_and_bounded_by_init(self):
        cfg = opt.OptimizerConfig(max_iters=300, restarts=3, seed=5)
        init = np.array([2.0, -1.0])
        res = opt.minimize(rosenbrock, init, cfg)
        values = [t[1] for t in res.trace]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert res.value <= rosenbrock(init)[0]

    def test_restarts_deterministic(self):
        cfg = opt.OptimizerConfig(max_iters=50, restarts=3, seed=11)
        a = opt.minimize(rosenbrock, np.array([0.5, 0.5]), cfg)
        b = opt.minimize(rosenbrock, np.array([0.5, 0.5]), cfg)
        assert np.array_equal(a.x, b.x)
        assert a.value == b.value
        assert a.restart_index == b.restart_index

    def test_all_restarts_failing_raises(self):
        def hopeless(v):
            return np.inf, np.zeros_like(v)

        cfg = opt.OptimizerConfig(max_iters=10, restarts=2)
        with pytest.raises(FitError):
            opt.minimize(hopeless, np.array([0.0]), cfg)

    def test_explicit_restart_inits_length_checked(self):
        cfg = opt.OptimizerConfig(max_iters=10, restarts=3)
        with pytest.raises(ValueError):
            opt.minimize(quadratic, np.zeros(2), cfg,
                         restart_inits=[np.zeros(2)])


class TestInitializeParams:
    def test_median_heuristic_lengthscale(self):
        di, dj = sine_pair()
        params = opt.initialize_params(di, dj)
        med = np.median(pdist(di.X))
        assert params.k_0i.lengthscale_diag[0] == pytest.approx(1.0 / med ** 2)
        assert params.k_ii.lengthscale_diag[0] == pytest.approx(1.0 / med ** 2)

    def test_amplitude_splits_sample_variance(self):
        di, dj = sine_pair()
        params = opt.initialize_params(di, dj)
        var_i = np.var(di.y, ddof=1)
        # prior marginal variance xi0^2 a^2 + a^2 must match the sample variance
        prior = params.xi0 ** 2 * params.k_0i.amplitude ** 2 + \
            params.k_ii.amplitude ** 2
        assert prior == pytest.approx(var_i, rel=1e-9)
        assert params.xi0 == 0.5

    def test_noise_fraction_of_spread(self):
        di, dj = sine_pair()
        params = opt.initialize_params(di, dj)
        assert params.sigma_j == pytest.approx(0.1 * np.std(dj.y, ddof=1))

    def test_constant_responses_rejected(self):
        x = np.linspace(0, 1, 5)
        flat = Output(1, x[:, None], np.ones(5))
        other = Output(2, x[:, None], np.sin(x))
        with pytest.raises(DegenerateDataError):
            opt.initialize_params(flat, other)

    def test_same_inputs_same_init(self):
        di, dj = sine_pair(seed=3)
        a = opt.initialize_params(di, dj, seed=1)
        b = opt.initialize_params(di, dj, seed=99)
        assert a.k_0i.amplitude == b.k_0i.amplitude
        assert np.array_equal(a.k_0i.lengthscale_diag, b.k_0i.lengthscale_diag)


class TestFitBivariate:
    def test_unpenalized_objective_is_nll_at_optimum(self):
        di, dj = sine_pair()
        cfg = opt.OptimizerConfig(max_iters=80, restarts=2, seed=2)
        fit = opt.fit_bivariate(di, dj, lik.PenaltyConfig("none"), cfg)
        assert fit.objective == lik.nll(fit.params, di, dj)
        assert fit.lambda_used == 0.0
        assert not fit.xi0_zeroed

    def test_deterministic_given_seed(self):
        di, dj = sine_pair()
        cfg = opt.OptimizerConfig(max_iters=60, restarts=2, seed=7)
        pen = lik.PenaltyConfig("ridge", lam=0.5)
        a = opt.fit_bivariate(di, dj, pen, cfg)
        b = opt.fit_bivariate(di, dj, pen, cfg)
        assert a.objective == b.objective
        assert a.params.xi0 == b.params.xi0
        assert np.array_equal(a.params.k_0i.lengthscale_diag,
                              b.params.k_0i.lengthscale_diag)

    def test_fit_improves_on_init(self):
        di, dj = sine_pair()
        cfg = opt.OptimizerConfig(max_iters=120, restarts=2, seed=3)
        pen = lik.PenaltyConfig("ridge", lam=0.1)
        fit = opt.fit_bivariate(di, dj, pen, cfg)
        init_obj = lik.penalized_nll(opt.initialize_params(di, dj), di, dj, pen)
        assert fit.objective < init_obj

    def test_strong_l1_zeroes_shared_scale_on_independent_data(self):
        di, dj = independent_pair(seed=4)
        cfg = opt.OptimizerConfig(max_iters=200, restarts=3, seed=5)
        fit = opt.fit_bivariate(di, dj, lik.PenaltyConfig("l1", lam=20.0), cfg)
        assert fit.xi0_zeroed
        assert fit.params.xi0 == 0.0

    def test_trace_objective_nonincreasing(self):
        di, dj = sine_pair()
        cfg = opt.OptimizerConfig(max_iters=100, restarts=1, seed=9)
        fit = opt.fit_bivariate(di, dj, lik.PenaltyConfig("ridge", lam=1.0), cfg)
        values = [t[1] for t in fit.trace]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
