"""Penalized Gaussian marginal likelihood of one bivariate submodel.

The negative log-likelihood is evaluated through a single Cholesky
factorization of the jittered joint covariance.  Gradients are analytic:
for each raw parameter theta, d(nll)/d(theta) = 0.5 * <Cinv - psi psi^T,
dC/dtheta> with psi = Cinv y, assembled blockwise so no per-parameter
full matrix is ever materialized on the fast path.

Positive parameters (amplitudes, lengthscales, noise) are optimized in log
space; the shared latent scale xi0 stays raw because the penalties act on
it directly and its sign is irrelevant.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .covariance import (BivariateParams, KernelSpec, cross_precision,
                         cross_weight, jittered_cholesky, pairwise_diffs)
from .exceptions import NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# |xi0| is smoothed as sqrt(xi0^2 + SMOOTH_EPS) inside penalty gradients so
# l1-type penalties stay differentiable at zero; estimates below
# HARD_THRESHOLD are snapped to exactly zero after convergence.
SMOOTH_EPS = 1e-8
HARD_THRESHOLD = 1e-4

PENALTY_KINDS = ("none", "ridge", "l1", "bridge", "scad")


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty on the shared latent scale.

    ``lam`` is the regularization weight, ``gamma`` the scad knee parameter
    and ``exponent`` the bridge exponent (only used by their own kinds).
    """

    kind: str
    lam: float = 0.0
    gamma: float = 3.7
    exponent: float = 0.5

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")
        if self.kind == "scad" and self.gamma <= 2:
            raise ValueError("scad gamma must be > 2")
        if self.kind == "bridge" and not 0 < self.exponent < 1:
            raise ValueError("bridge exponent must lie in (0, 1)")


def penalty(cfg: PenaltyConfig, xi0: float) -> float:
    """Exact penalty value at xi0."""
    lam = cfg.lam
    if cfg.kind == "none" or lam == 0.0:
        return 0.0
    t = abs(xi0)
    if cfg.kind == "ridge":
        return lam * xi0 * xi0
    if cfg.kind == "l1":
        return lam * t
    if cfg.kind == "bridge":
        return lam * t ** cfg.exponent
    # scad: linear near zero, quadratic blend, then constant
    g = cfg.gamma
    if t <= lam:
        return lam * t
    if t <= g * lam:
        return (2.0 * g * lam * t - t * t - lam * lam) / (2.0 * (g - 1.0))
    return lam * lam * (g + 1.0) / 2.0


def penalty_gradient(cfg: PenaltyConfig, xi0: float) -> float:
    """Derivative of the penalty with |xi0| smoothed near zero."""
    lam = cfg.lam
    if cfg.kind == "none" or lam == 0.0:
        return 0.0
    if cfg.kind == "ridge":
        return 2.0 * lam * xi0
    s = math.sqrt(xi0 * xi0 + SMOOTH_EPS)
    if cfg.kind == "l1":
        return lam * xi0 / s
    if cfg.kind == "bridge":
        return lam * cfg.exponent * s ** (cfg.exponent - 2.0) * xi0
    g = cfg.gamma
    if s <= lam:
        slope = lam
    elif s <= g * lam:
        slope = (g * lam - s) / (g - 1.0)
    else:
        slope = 0.0
    return slope * xi0 / s


# ---------------------------------------------------------------------------
# parameter vector layout


@dataclass(frozen=True)
class ParamStructure:
    """Which coordinates of the bivariate model are free.

    ``tie_shared_kernels`` makes the two shared-latent kernels identical;
    ``free_unique_scales`` adds the unique latent scales (otherwise fixed at
    their values in the parameter object, 1 by default).
    """

    input_dim: int
    free_unique_scales: bool = False
    tie_shared_kernels: bool = False

    @functools.lru_cache(maxsize=None)
    def coords(self):
        """Ordered coordinate descriptors: (name, transform, raw ids)."""
        D = self.input_dim
        entries = []

        def kernel_block(tag, raw_tags):
            entries.append((f"log_alpha_{tag}", "log",
                            [f"alpha_{t}" for t in raw_tags]))
            for k in range(1, D + 1):
                entries.append((f"log_ell_{tag}_{k}", "log",
                                [f"ell_{t}_{k}" for t in raw_tags]))

        if self.tie_shared_kernels:
            kernel_block("0", ["0i", "0j"])
        else:
            kernel_block("0i", ["0i"])
            kernel_block("0j", ["0j"])
        kernel_block("ii", ["ii"])
        kernel_block("jj", ["jj"])
        entries.append(("xi0", "raw", ["xi0"]))
        if self.free_unique_scales:
            entries.append(("xi_i", "raw", ["xi_i"]))
            entries.append(("xi_j", "raw", ["xi_j"]))
        entries.append(("log_sigma_i", "log", ["sigma_i"]))
        entries.append(("log_sigma_j", "log", ["sigma_j"]))
        return entries

    @property
    def n_coords(self) -> int:
        return len(self.coords())


def _raw_value(params: BivariateParams, raw_id: str) -> float:
    if raw_id == "xi0":
        return params.xi0
    if raw_id == "xi_i":
        return params.xi_i
    if raw_id == "xi_j":
        return params.xi_j
    if raw_id == "sigma_i":
        return params.sigma_i
    if raw_id == "sigma_j":
        return params.sigma_j
    kind, tag = raw_id.split("_", 1)
    if kind == "alpha":
        return getattr(params, f"k_{tag}").amplitude
    tag, k = tag.rsplit("_", 1)
    return getattr(params, f"k_{tag}").lengthscale_diag[int(k) - 1]


def pack_params(params: BivariateParams, structure: ParamStructure) -> np.ndarray:
    vec = np.empty(structure.n_coords)
    for idx, (_, transform, raw_ids) in enumerate(structure.coords()):
        value = _raw_value(params, raw_ids[0])
        vec[idx] = math.log(value) if transform == "log" else value
    return vec


def unpack_params(vec: np.ndarray, structure: ParamStructure) -> BivariateParams:
    values = {}
    for idx, (_, transform, raw_ids) in enumerate(structure.coords()):
        raw = math.exp(vec[idx]) if transform == "log" else float(vec[idx])
        for rid in raw_ids:
            values[rid] = raw
    D = structure.input_dim

    def kernel(tag):
        ell = np.array([values[f"ell_{tag}_{k}"] for k in range(1, D + 1)])
        return KernelSpec(values[f"alpha_{tag}"], ell)

    return BivariateParams(
        k_0i=kernel("0i"), k_0j=kernel("0j"), k_ii=kernel("ii"),
        k_jj=kernel("jj"), xi0=values["xi0"],
        sigma_i=values["sigma_i"], sigma_j=values["sigma_j"],
        xi_i=values.get("xi_i", 1.0), xi_j=values.get("xi_j", 1.0))


def default_structure(params: BivariateParams) -> ParamStructure:
    return ParamStructure(input_dim=params.input_dim)


# ---------------------------------------------------------------------------
# likelihood core


def diff_cache(X_i, X_j):
    """Squared pairwise-difference tensors, reusable across evaluations."""
    return (pairwise_diffs(X_i, X_i) ** 2,
            pairwise_diffs(X_j, X_j) ** 2,
            pairwise_diffs(X_i, X_j) ** 2)


class _Workspace:
    """Per-evaluation intermediate quantities shared by value and gradient."""

    def __init__(self, params: BivariateParams, X_i, X_j, cache=None):
        self.params = params
        if cache is None:
            cache = diff_cache(X_i, X_j)
        self.Dii2, self.Djj2, self.Dij2 = cache
        self.p_i = self.Dii2.shape[0]
        self.p_j = self.Djj2.shape[0]

        def grid(D2, lengthscale, rate):
            return np.exp(rate * np.einsum("abk,k->ab", D2, lengthscale))

        p = params
        self.E0i = grid(self.Dii2, p.k_0i.lengthscale_diag, -0.25)
        self.Eii = grid(self.Dii2, p.k_ii.lengthscale_diag, -0.25)
        self.E0j = grid(self.Djj2, p.k_0j.lengthscale_diag, -0.25)
        self.Ejj = grid(self.Djj2, p.k_jj.lengthscale_diag, -0.25)
        self.w = cross_weight(p.k_0i, p.k_0j)
        self.phi = cross_precision(p.k_0i, p.k_0j)
        self.Ex = grid(self.Dij2, self.phi, -0.5)

        xi0sq = p.xi0 * p.xi0
        C_ii = (xi0sq * p.k_0i.amplitude ** 2 * self.E0i
                + p.xi_i ** 2 * p.k_ii.amplitude ** 2 * self.Eii)
        C_jj = (xi0sq * p.k_0j.amplitude ** 2 * self.E0j
                + p.xi_j ** 2 * p.k_jj.amplitude ** 2 * self.Ejj)
        self.C_ij_f = xi0sq * self.w * self.Ex
        C_ii[np.diag_indices_from(C_ii)] += p.sigma_i ** 2
        C_jj[np.diag_indices_from(C_jj)] += p.sigma_j ** 2
        self.C = np.block([[C_ii, self.C_ij_f], [self.C_ij_f.T, C_jj]])


def _stack_y(data_i, data_j) -> np.ndarray:
    return np.concatenate([np.asarray(data_i.y, dtype=float),
                           np.asarray(data_j.y, dtype=float)])


def nll(params: BivariateParams, data_i, data_j, _cache=None) -> float:
    """Negative log marginal likelihood of the stacked observations."""
    ws = _Workspace(params, data_i.X, data_j.X, cache=_cache)
    y = _stack_y(data_i, data_j)
    L, _ = jittered_cholesky(ws.C)
    z = solve_triangular(L, y, lower=True)
    return float(0.5 * z @ z + np.sum(np.log(np.diag(L)))
                 + 0.5 * y.size * LOG_2PI)


def _raw_gradient(ws: _Workspace, A: np.ndarray) -> dict:
    """<A, dC/dtheta>/2 for every raw parameter, via blockwise sums."""
    p = ws.params
    p_i = ws.p_i
    A_ii = A[:p_i, :p_i]
    A_jj = A[p_i:, p_i:]
    A_ij = A[:p_i, p_i:]
    xi0sq = p.xi0 * p.xi0

    grads = {}
    s_E0i = float(np.sum(A_ii * ws.E0i))
    s_Eii = float(np.sum(A_ii * ws.Eii))
    s_E0j = float(np.sum(A_jj * ws.E0j))
    s_Ejj = float(np.sum(A_jj * ws.Ejj))
    s_Ex = float(np.sum(A_ij * ws.Ex))

    a0i, a0j = p.k_0i.amplitude, p.k_0j.amplitude
    aii, ajj = p.k_ii.amplitude, p.k_jj.amplitude

    grads["xi0"] = 0.5 * (2.0 * p.xi0 * a0i * a0i * s_E0i
                          + 2.0 * p.xi0 * a0j * a0j * s_E0j
                          + 2.0 * 2.0 * p.xi0 * ws.w * s_Ex)
    grads["xi_i"] = 0.5 * (2.0 * p.xi_i * aii * aii * s_Eii)
    grads["xi_j"] = 0.5 * (2.0 * p.xi_j * ajj * ajj * s_Ejj)
    grads["alpha_0i"] = 0.5 * (2.0 * xi0sq * a0i * s_E0i
                               + 2.0 * xi0sq * (ws.w / a0i) * s_Ex)
    grads["alpha_0j"] = 0.5 * (2.0 * xi0sq * a0j * s_E0j
                               + 2.0 * xi0sq * (ws.w / a0j) * s_Ex)
    grads["alpha_ii"] = 0.5 * (2.0 * p.xi_i ** 2 * aii * s_Eii)
    grads["alpha_jj"] = 0.5 * (2.0 * p.xi_j ** 2 * ajj * s_Ejj)
    grads["sigma_i"] = 0.5 * (2.0 * p.sigma_i * float(np.trace(A_ii)))
    grads["sigma_j"] = 0.5 * (2.0 * p.sigma_j * float(np.trace(A_jj)))

    la = p.k_0i.lengthscale_diag
    lb = p.k_0j.lengthscale_diag
    AEx = A_ij * ws.Ex
    for k in range(la.size):
        # marginal parts
        m0i = -0.25 * xi0sq * a0i * a0i * float(np.sum(A_ii * ws.E0i * ws.Dii2[:, :, k]))
        mii = -0.25 * p.xi_i ** 2 * aii * aii * float(np.sum(A_ii * ws.Eii * ws.Dii2[:, :, k]))
        m0j = -0.25 * xi0sq * a0j * a0j * float(np.sum(A_jj * ws.E0j * ws.Djj2[:, :, k]))
        mjj = -0.25 * p.xi_j ** 2 * ajj * ajj * float(np.sum(A_jj * ws.Ejj * ws.Djj2[:, :, k]))
        # cross parts: weight factor and decay factor
        denom = la[k] + lb[k]
        cw_i = 1.0 / (4.0 * la[k]) - 1.0 / (2.0 * denom)
        cw_j = 1.0 / (4.0 * lb[k]) - 1.0 / (2.0 * denom)
        dphi_i = (lb[k] / denom) ** 2
        dphi_j = (la[k] / denom) ** 2
        s_x_d2 = float(np.sum(AEx * ws.Dij2[:, :, k]))
        cross_i = xi0sq * ws.w * (cw_i * s_Ex - 0.5 * dphi_i * s_x_d2)
        cross_j = xi0sq * ws.w * (cw_j * s_Ex - 0.5 * dphi_j * s_x_d2)
        grads[f"ell_0i_{k + 1}"] = 0.5 * (m0i + 2.0 * cross_i)
        grads[f"ell_0j_{k + 1}"] = 0.5 * (m0j + 2.0 * cross_j)
        grads[f"ell_ii_{k + 1}"] = 0.5 * mii
        grads[f"ell_jj_{k + 1}"] = 0.5 * mjj
    return grads


def nll_value_and_grad(params: BivariateParams, data_i, data_j,
                       structure: ParamStructure | None = None, _cache=None):
    """Negative log-likelihood and its gradient in structure coordinates."""
    if structure is None:
        structure = default_structure(params)
    ws = _Workspace(params, data_i.X, data_j.X, cache=_cache)
    y = _stack_y(data_i, data_j)
    L, rel_used = jittered_cholesky(ws.C)
    z = solve_triangular(L, y, lower=True)
    value = float(0.5 * z @ z + np.sum(np.log(np.diag(L)))
                  + 0.5 * y.size * LOG_2PI)

    C_inv = cho_solve((L, True), np.eye(y.size))
    psi = cho_solve((L, True), y)
    A = C_inv - np.outer(psi, psi)
    # the factorized matrix carries relative diagonal jitter, so the exact
    # derivative picks up the same factor on diagonal contributions
    A[np.diag_indices_from(A)] *= 1.0 + rel_used
    raw = _raw_gradient(ws, A)

    grad = np.empty(structure.n_coords)
    for idx, (_, transform, raw_ids) in enumerate(structure.coords()):
        g = sum(raw[rid] for rid in raw_ids)
        if transform == "log":
            g *= _raw_value(params, raw_ids[0])
        grad[idx] = g
    return value, grad


def nll_grad(params: BivariateParams, data_i, data_j,
             structure: ParamStructure | None = None) -> np.ndarray:
    return nll_value_and_grad(params, data_i, data_j, structure)[1]


def cov_param_derivative(params: BivariateParams, which_param: str,
                         X_i, X_j) -> np.ndarray:
    """Full derivative matrix of the joint covariance w.r.t. one raw parameter.

    Slow reference path; the gradient above contracts these matrices against
    the likelihood-curvature term without building them.
    """
    ws = _Workspace(params, X_i, X_j)
    p = params
    p_i, p_j = ws.p_i, ws.p_j
    d_ii = np.zeros((p_i, p_i))
    d_jj = np.zeros((p_j, p_j))
    d_ij = np.zeros((p_i, p_j))
    xi0sq = p.xi0 * p.xi0
    a0i, a0j = p.k_0i.amplitude, p.k_0j.amplitude
    aii, ajj = p.k_ii.amplitude, p.k_jj.amplitude

    if which_param == "xi0":
        d_ii = 2.0 * p.xi0 * a0i * a0i * ws.E0i
        d_jj = 2.0 * p.xi0 * a0j * a0j * ws.E0j
        d_ij = 2.0 * p.xi0 * ws.w * ws.Ex
    elif which_param == "xi_i":
        d_ii = 2.0 * p.xi_i * aii * aii * ws.Eii
    elif which_param == "xi_j":
        d_jj = 2.0 * p.xi_j * ajj * ajj * ws.Ejj
    elif which_param == "sigma_i":
        d_ii = 2.0 * p.sigma_i * np.eye(p_i)
    elif which_param == "sigma_j":
        d_jj = 2.0 * p.sigma_j * np.eye(p_j)
    elif which_param == "alpha_0i":
        d_ii = 2.0 * xi0sq * a0i * ws.E0i
        d_ij = xi0sq * (ws.w / a0i) * ws.Ex
    elif which_param == "alpha_0j":
        d_jj = 2.0 * xi0sq * a0j * ws.E0j
        d_ij = xi0sq * (ws.w / a0j) * ws.Ex
    elif which_param == "alpha_ii":
        d_ii = 2.0 * p.xi_i ** 2 * aii * ws.Eii
    elif which_param == "alpha_jj":
        d_jj = 2.0 * p.xi_j ** 2 * ajj * ws.Ejj
    elif which_param.startswith("ell_"):
        tag, k_str = which_param[4:].rsplit("_", 1)
        k = int(k_str) - 1
        la = p.k_0i.lengthscale_diag
        lb = p.k_0j.lengthscale_diag
        if tag not in ("0i", "0j", "ii", "jj") or not 0 <= k < la.size:
            raise ValueError(f"unknown parameter {which_param!r}")
        if tag == "ii":
            d_ii = -0.25 * p.xi_i ** 2 * aii * aii * ws.Eii * ws.Dii2[:, :, k]
        elif tag == "jj":
            d_jj = -0.25 * p.xi_j ** 2 * ajj * ajj * ws.Ejj * ws.Djj2[:, :, k]
        else:
            denom = la[k] + lb[k]
            if tag == "0i":
                d_ii = -0.25 * xi0sq * a0i * a0i * ws.E0i * ws.Dii2[:, :, k]
                cw = 1.0 / (4.0 * la[k]) - 1.0 / (2.0 * denom)
                dphi = (lb[k] / denom) ** 2
            else:
                d_jj = -0.25 * xi0sq * a0j * a0j * ws.E0j * ws.Djj2[:, :, k]
                cw = 1.0 / (4.0 * lb[k]) - 1.0 / (2.0 * denom)
                dphi = (la[k] / denom) ** 2
            d_ij = xi0sq * ws.w * ws.Ex * (cw - 0.5 * dphi * ws.Dij2[:, :, k])
    else:
        raise ValueError(f"unknown parameter {which_param!r}")

    top = np.concatenate([d_ii, d_ij], axis=1)
    bottom = np.concatenate([d_ij.T, d_jj], axis=1)
    return np.concatenate([top, bottom], axis=0)


# ---------------------------------------------------------------------------
# penalized objective


def penalized_nll(params: BivariateParams, data_i, data_j,
                  cfg: PenaltyConfig) -> float:
    return nll(params, data_i, data_j) + penalty(cfg, params.xi0)


def penalized_grad(params: BivariateParams, data_i, data_j, cfg: PenaltyConfig,
                   structure: ParamStructure | None = None) -> np.ndarray:
    if structure is None:
        structure = default_structure(params)
    grad = nll_grad(params, data_i, data_j, structure)
    _add_penalty_grad(grad, structure, cfg, params.xi0)
    return grad


def _xi0_index(structure: ParamStructure) -> int:
    for idx, (name, _, _) in enumerate(structure.coords()):
        if name == "xi0":
            return idx
    raise ValueError("structure has no xi0 coordinate")


def _add_penalty_grad(grad, structure, cfg, xi0):
    grad[_xi0_index(structure)] += penalty_gradient(cfg, xi0)


def make_objective(data_i, data_j, cfg: PenaltyConfig,
                   structure: ParamStructure):
    """Build (value_and_grad, value_only) callables over vector coordinates.

    Evaluation failures (non-finite parameters, factorization breakdown)
    surface as +inf objective values so line searches reject the step.
    """
    xi0_idx = _xi0_index(structure)
    n = structure.n_coords
    cache = diff_cache(data_i.X, data_j.X)

    def value_and_grad(vec):
        try:
            params = unpack_params(vec, structure)
            value, grad = nll_value_and_grad(params, data_i, data_j, structure,
                                             _cache=cache)
        except (NumericalError, ValueError, OverflowError):
            return np.inf, np.zeros(n)
        value += penalty(cfg, params.xi0)
        grad[xi0_idx] += penalty_gradient(cfg, params.xi0)
        return value, grad

    def value_only(vec):
        try:
            params = unpack_params(vec, structure)
            value = nll(params, data_i, data_j, _cache=cache)
        except (NumericalError, ValueError, OverflowError):
            return np.inf
        return value + penalty(cfg, params.xi0)

    return value_and_grad, value_only
