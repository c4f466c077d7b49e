"""Nonlinear conjugate-gradient fitting of the bivariate submodel.

Polak-Ribiere directions with automatic reset to steepest descent, an
Armijo backtracking line search, and multiple jittered restarts.  Every
random choice derives from the config seed, so a fit is a pure function
of (data, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .covariance import BivariateParams, KernelSpec
from .exceptions import DegenerateDataError, FitError
from .likelihood import (HARD_THRESHOLD, ParamStructure, PenaltyConfig,
                         make_objective, pack_params, penalized_nll,
                         unpack_params)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    grad_tol: float = 1e-6
    restarts: int = 5
    seed: int = 0
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be >= 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    trace: list
    converged: bool
    restart_index: int


@dataclass
class FitResult:
    """Outcome of one bivariate fit."""

    params: BivariateParams
    objective: float
    converged: bool
    trace: list
    lambda_used: float
    xi0_zeroed: bool


class _RestartFailed(Exception):
    pass


def _cg_run(value_and_grad, value_only, x0, cfg: OptimizerConfig):
    x = np.asarray(x0, dtype=float).copy()
    f, g = value_and_grad(x)
    if not np.isfinite(f):
        raise _RestartFailed("objective not finite at the starting point")
    trace = [(0, f, float(np.linalg.norm(g)))]
    converged = float(np.linalg.norm(g)) < cfg.grad_tol
    d = -g
    for it in range(1, cfg.max_iters + 1):
        if converged:
            break
        gTd = float(g @ d)
        if gTd >= 0.0:  # not a descent direction, reset
            d = -g
            gTd = -float(g @ g)
        # first trial uses the fused call: a unit step is usually accepted
        # and then no second evaluation is needed
        step = cfg.initial_step
        x_new = x + step * d
        f_new, g_new = value_and_grad(x_new)
        accepted = np.isfinite(f_new) and \
            f_new <= f + cfg.sufficient_decrease * step * gTd
        if not accepted:
            for _ in range(cfg.max_backtracks - 1):
                step *= cfg.shrink
                x_new = x + step * d
                f_new = value_only(x_new)
                if np.isfinite(f_new) and \
                        f_new <= f + cfg.sufficient_decrease * step * gTd:
                    accepted = True
                    break
            if not accepted:
                break
            f_new, g_new = value_and_grad(x_new)
        if not np.all(np.isfinite(g_new)):
            x, f = x_new, f_new
            trace.append((it, f, float("nan")))
            break
        gg = float(g @ g)
        beta = max(0.0, float(g_new @ (g_new - g)) / gg) if gg > 0 else 0.0
        d = -g_new + beta * d
        x, f, g = x_new, f_new, g_new
        grad_norm = float(np.linalg.norm(g))
        trace.append((it, f, grad_norm))
        converged = grad_norm < cfg.grad_tol
    return x, f, trace, converged


def minimize(value_and_grad, init, cfg: OptimizerConfig, value_only=None,
             restart_inits=None) -> MinimizeResult:
    """Best-of-restarts conjugate-gradient minimization.

    Restart starting points default to the given init plus additive
    N(0, 0.3^2) jitter per coordinate; ``restart_inits`` overrides them
    with explicit vectors (one per restart).  Ties between restarts keep
    the lowest restart index.
    """
    if value_only is None:
        value_only = lambda x: value_and_grad(x)[0]  # noqa: E731
    init = np.asarray(init, dtype=float)
    if restart_inits is None:
        inits = [init]
        for r in range(1, cfg.restarts):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
            inits.append(init + 0.3 * rng.standard_normal(init.size))
    else:
        inits = [np.asarray(v, dtype=float) for v in restart_inits]
        if len(inits) != cfg.restarts:
            raise ValueError("restart_inits length must equal cfg.restarts")

    best = None
    failures = []
    for r, x0 in enumerate(inits):
        try:
            x, f, trace, converged = _cg_run(value_and_grad, value_only, x0, cfg)
        except _RestartFailed as exc:
            failures.append(f"restart {r}: {exc}")
            continue
        if best is None or f < best.value:
            best = MinimizeResult(x, f, trace, converged, r)
    if best is None:
        raise FitError("all restarts failed: " + "; ".join(failures))
    return best


# ---------------------------------------------------------------------------
# initialization heuristics


def _median_pairwise_distance(X: np.ndarray) -> np.ndarray:
    """Per-dimension median of |x_k - x'_k| over distinct input pairs."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    rows, cols = np.triu_indices(X.shape[0], k=1)
    gaps = np.abs(X[rows] - X[cols])
    med = np.median(gaps, axis=0)
    overall = np.median(gaps[gaps > 0]) if np.any(gaps > 0) else 1.0
    med[med <= 0] = overall
    return med


XI0_INIT = 0.5
NOISE_FRACTION = 0.1
RESTART_JITTER = 0.3


def initialize_params(data_i, data_j, seed: int = 0) -> BivariateParams:
    """Data-driven starting point for a bivariate fit.

    Lengthscales come from the median pairwise input distance, amplitudes
    split the sample variance across the shared and unique latents, noise
    starts at a fraction of the sample spread, and the shared scale starts
    away from zero so the penalty has something to act on.
    """
    del seed  # the base init is data-determined; seeds drive restart jitter
    kernels = {}
    sigmas = {}
    for tag, data in (("i", data_i), ("j", data_j)):
        y = np.asarray(data.y, dtype=float)
        if y.size < 2:
            raise DegenerateDataError("need at least two observations per output")
        var = float(np.var(y, ddof=1))
        if var <= 0:
            raise DegenerateDataError("responses have zero variance")
        med = _median_pairwise_distance(data.X)
        ell = 1.0 / med ** 2
        amp = math.sqrt(var / (XI0_INIT ** 2 + 1.0))
        kernels[tag] = KernelSpec(amp, ell)
        sigmas[tag] = NOISE_FRACTION * math.sqrt(var)
    return BivariateParams(
        k_0i=kernels["i"], k_0j=kernels["j"], k_ii=kernels["i"],
        k_jj=kernels["j"], xi0=XI0_INIT,
        sigma_i=sigmas["i"], sigma_j=sigmas["j"])


def _jitter_params(params: BivariateParams, rng) -> BivariateParams:
    def bump(value):
        return value * math.exp(RESTART_JITTER * rng.standard_normal())

    def bump_kernel(kern):
        ell = kern.lengthscale_diag * np.exp(
            RESTART_JITTER * rng.standard_normal(kern.lengthscale_diag.size))
        return KernelSpec(bump(kern.amplitude), ell)

    return BivariateParams(
        k_0i=bump_kernel(params.k_0i), k_0j=bump_kernel(params.k_0j),
        k_ii=bump_kernel(params.k_ii), k_jj=bump_kernel(params.k_jj),
        xi0=bump(params.xi0), sigma_i=bump(params.sigma_i),
        sigma_j=bump(params.sigma_j), xi_i=params.xi_i, xi_j=params.xi_j)


def fit_bivariate(data_i, data_j, penalty: PenaltyConfig, cfg: OptimizerConfig,
                  free_unique_scales: bool = False,
                  tie_shared_kernels: bool = False) -> FitResult:
    """Penalized maximum-likelihood fit of one output pair."""
    X_i = np.asarray(data_i.X)
    structure = ParamStructure(
        input_dim=X_i.shape[1] if X_i.ndim == 2 else 1,
        free_unique_scales=free_unique_scales,
        tie_shared_kernels=tie_shared_kernels)
    base = initialize_params(data_i, data_j, seed=cfg.seed)
    inits = [pack_params(base, structure)]
    for r in range(1, cfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, r]))
        inits.append(pack_params(_jitter_params(base, rng), structure))

    fg, f_only = make_objective(data_i, data_j, penalty, structure)
    res = minimize(fg, inits[0], cfg, value_only=f_only, restart_inits=inits)
    params = unpack_params(res.x, structure)

    xi0_zeroed = False
    objective = res.value
    if penalty.kind != "none" and penalty.lam > 0 and \
            abs(params.xi0) < HARD_THRESHOLD:
        params = replace(params, xi0=0.0)
        xi0_zeroed = True
        objective = penalized_nll(params, data_i, data_j, penalty)
    return FitResult(params=params, objective=objective,
                     converged=res.converged, trace=res.trace,
                     lambda_used=penalty.lam, xi0_zeroed=xi0_zeroed)
