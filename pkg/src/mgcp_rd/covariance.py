"""Closed-form covariance functions for convolution-process multi-output GPs.

Each output is a sum of white-noise latent processes smoothed by Gaussian
kernels.  A latent shared by two outputs induces cross-covariance between
them; a latent unique to one output only contributes to its marginal
covariance.  All covariances below are the closed forms obtained by
integrating products of Gaussian smoothing kernels, so everything reduces
to scaled squared-exponential terms with diagonal precision matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError

# Relative diagonal inflation applied before every Cholesky factorization.
JITTER_REL = 1e-8


def _as_lengthscale(value) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError("lengthscale_diag must be a vector")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("lengthscale_diag entries must be finite and > 0")
    return arr


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Gaussian smoothing kernel: amplitude and diagonal precision entries.

    ``lengthscale_diag`` holds the diagonal of the kernel's precision matrix,
    so larger entries mean faster-decaying covariance.
    """

    amplitude: float
    lengthscale_diag: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        object.__setattr__(self, "lengthscale_diag",
                           _as_lengthscale(self.lengthscale_diag))

    @property
    def input_dim(self) -> int:
        return self.lengthscale_diag.size


@dataclass(frozen=True, eq=False)
class BivariateParams:
    """Parameters of one bivariate submodel for outputs (i, j).

    ``k_0i``/``k_0j`` smooth the shared latent into each output; ``k_ii``/
    ``k_jj`` smooth the unique latents.  ``xi0`` is the shared latent scale
    (sign-free: it enters the covariance squared); ``xi_i``/``xi_j`` are the
    unique latent scales, fixed at 1 unless the fit frees them.
    """

    k_0i: KernelSpec
    k_0j: KernelSpec
    k_ii: KernelSpec
    k_jj: KernelSpec
    xi0: float
    sigma_i: float
    sigma_j: float
    xi_i: float = 1.0
    xi_j: float = 1.0

    def __post_init__(self):
        dims = {k.input_dim for k in (self.k_0i, self.k_0j, self.k_ii, self.k_jj)}
        if len(dims) != 1:
            raise ValueError("all kernels must share one input dimension")
        for name in ("xi0", "sigma_i", "sigma_j", "xi_i", "xi_j"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma_i <= 0 or self.sigma_j <= 0:
            raise ValueError("noise standard deviations must be > 0")

    @property
    def input_dim(self) -> int:
        return self.k_0i.input_dim

    def restrict(self, which: str) -> "UnivariateParams":
        """Drop the shared latent and keep output ``which`` ('i' or 'j')."""
        if which == "i":
            return UnivariateParams(self.k_ii, self.sigma_i, scale=self.xi_i)
        if which == "j":
            return UnivariateParams(self.k_jj, self.sigma_j, scale=self.xi_j)
        raise ValueError("which must be 'i' or 'j'")


@dataclass(frozen=True, eq=False)
class UnivariateParams:
    """Single-output model: one unique latent plus observation noise."""

    kernel: KernelSpec
    sigma: float
    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError("sigma must be finite and > 0")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")

    @property
    def input_dim(self) -> int:
        return self.kernel.input_dim


@dataclass(frozen=True, eq=False)
class FullMgcpParams:
    """Jointly estimated model with one latent per output pair.

    ``pair_kernels`` maps each ordered pair ``(i, j)`` with ``i < j`` (1-based
    output positions) to the two smoothing kernels ``(K_qi, K_qj)`` of that
    pair's latent.  ``latent_scales`` maps pairs to latent scales; they default
    to 1 and stay fixed during fitting (only kernels and noise are free).
    ``noise`` holds per-output noise standard deviations.
    """

    n_outputs: int
    pair_kernels: dict
    noise: np.ndarray
    latent_scales: dict = None

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=float)
        if noise.shape != (self.n_outputs,):
            raise ValueError("noise must have one entry per output")
        if not np.all(np.isfinite(noise)) or np.any(noise <= 0):
            raise ValueError("noise entries must be finite and > 0")
        object.__setattr__(self, "noise", noise)
        pairs = [(i, j) for i in range(1, self.n_outputs + 1)
                 for j in range(i + 1, self.n_outputs + 1)]
        for pair in pairs:
            if pair not in self.pair_kernels:
                raise ValueError(f"pair_kernels is missing pair {pair}")
        if self.latent_scales is None:
            object.__setattr__(self, "latent_scales", {q: 1.0 for q in pairs})
        else:
            for pair in pairs:
                if pair not in self.latent_scales:
                    raise ValueError(f"latent_scales is missing pair {pair}")

    def scale(self, i: int, j: int) -> float:
        return self.latent_scales[(min(i, j), max(i, j))]

    @property
    def input_dim(self) -> int:
        first = next(iter(self.pair_kernels.values()))
        return first[0].input_dim


@dataclass(frozen=True, eq=False)
class SeparableParams:
    """Separable baseline: one base kernel, scalar cross-correlation t_ij."""

    base_kernel: KernelSpec
    t_ij: float
    noise: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not np.isfinite(self.t_ij) or abs(self.t_ij) >= 1:
            raise ValueError("t_ij must satisfy |t_ij| < 1")
        if len(self.noise) != 2 or any(s <= 0 for s in self.noise):
            raise ValueError("noise must be two positive reals")


# ---------------------------------------------------------------------------
# closed-form building blocks


def _check_diff(d, dim: int) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.shape[-1] != dim:
        raise ValueError(f"difference vector has dimension {d.shape[-1]}, "
                         f"kernels have {dim}")
    return d


def cross_weight_base(kernel_a: KernelSpec, kernel_b: KernelSpec) -> float:
    """Amplitude-free part of the cross-covariance weight."""
    la = kernel_a.lengthscale_diag
    lb = kernel_b.lengthscale_diag
    dim = la.size
    return 2.0 ** (dim / 2.0) * float(np.prod((la * lb) ** 0.25 / np.sqrt(la + lb)))


def cross_weight(kernel_a: KernelSpec, kernel_b: KernelSpec) -> float:
    """Amplitude factor of the cross-covariance of two smoothing kernels."""
    return (kernel_a.amplitude * kernel_b.amplitude
            * cross_weight_base(kernel_a, kernel_b))


def cross_precision(kernel_a: KernelSpec, kernel_b: KernelSpec) -> np.ndarray:
    """Diagonal of the precision governing the cross-covariance decay."""
    la = kernel_a.lengthscale_diag
    lb = kernel_b.lengthscale_diag
    return la * lb / (la + lb)


def cross_cov_term(kernel_a: KernelSpec, kernel_b: KernelSpec,
                   scale: float, d) -> float:
    """Covariance contributed by one latent smoothed by two Gaussian kernels.

    Parameters
    ----------
    kernel_a, kernel_b : KernelSpec
        Smoothing kernels applied to the same latent for the two outputs.
    scale : float
        Latent scale; the term carries scale**2.
    d : array_like
        Input difference x - x'.
    """
    if kernel_a.input_dim != kernel_b.input_dim:
        raise ValueError("kernel dimensions differ")
    d = _check_diff(d, kernel_a.input_dim)
    w = cross_weight(kernel_a, kernel_b)
    phi = cross_precision(kernel_a, kernel_b)
    return scale * scale * w * float(np.exp(-0.5 * np.sum(d * d * phi)))


def _marginal_term(kernel: KernelSpec, scale: float, d: np.ndarray) -> float:
    # identical-kernel case of cross_cov_term, written in its reduced form
    a = kernel.amplitude
    quad = np.sum(d * d * kernel.lengthscale_diag, axis=-1)
    return scale * scale * a * a * np.exp(-0.25 * quad)


def marginal_cov(params: BivariateParams, which: str, d) -> float:
    """Marginal covariance of one output: shared term plus unique term."""
    d = _check_diff(d, params.input_dim)
    if which == "i":
        shared, unique, xi_u = params.k_0i, params.k_ii, params.xi_i
    elif which == "j":
        shared, unique, xi_u = params.k_0j, params.k_jj, params.xi_j
    else:
        raise ValueError("which must be 'i' or 'j'")
    return float(_marginal_term(shared, params.xi0, d)
                 + _marginal_term(unique, xi_u, d))


def cross_cov(params: BivariateParams, d) -> float:
    """Cross-covariance between the two outputs; only the shared latent acts."""
    return cross_cov_term(params.k_0i, params.k_0j, params.xi0, d)


def output_cov(params: BivariateParams, a: str, b: str, x, xp) -> float:
    """Observed-process covariance; adds noise variance iff a == b and x == xp."""
    x = _check_diff(x, params.input_dim)
    xp = _check_diff(xp, params.input_dim)
    d = x - xp
    if a == b:
        value = marginal_cov(params, a, d)
        if np.array_equal(x, xp):
            sigma = params.sigma_i if a == "i" else params.sigma_j
            value += sigma * sigma
        return value
    return cross_cov(params, d)


def univariate_cov(params: UnivariateParams, d) -> float:
    d = _check_diff(d, params.input_dim)
    return float(_marginal_term(params.kernel, params.scale, d))


def separable_cov(params: SeparableParams, a: int, b: int, x, xp) -> float:
    """Separable-model covariance: shared base kernel scaled by t_ij off-diagonal."""
    x = _check_diff(x, params.base_kernel.input_dim)
    xp = _check_diff(xp, params.base_kernel.input_dim)
    base = float(_marginal_term(params.base_kernel, 1.0, x - xp))
    if a == b:
        return base
    return params.t_ij * base


# ---------------------------------------------------------------------------
# matrix assembly


def pairwise_diffs(Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """All pairwise differences, shape (len(Xa), len(Xb), D)."""
    Xa = np.asarray(Xa, dtype=float)
    Xb = np.asarray(Xb, dtype=float)
    if Xa.ndim == 1:
        Xa = Xa[:, None]
    if Xb.ndim == 1:
        Xb = Xb[:, None]
    return Xa[:, None, :] - Xb[None, :, :]


def _sq_exp_grid(diffs: np.ndarray, lengthscale: np.ndarray,
                 rate: float) -> np.ndarray:
    # exp(rate * sum_k d_k^2 * l_k) over a difference grid
    return np.exp(rate * np.einsum("abk,k->ab", diffs * diffs, lengthscale))


def _validate_params_finite(params: BivariateParams):
    for kern in (params.k_0i, params.k_0j, params.k_ii, params.k_jj):
        if not np.isfinite(kern.amplitude) or not np.all(np.isfinite(kern.lengthscale_diag)):
            raise ValueError("non-finite kernel parameter")


def assemble_bivariate_cov(params: BivariateParams, X_i: np.ndarray,
                           X_j: np.ndarray) -> np.ndarray:
    """Joint covariance of the stacked observations (y_i, y_j).

    Returns the symmetric matrix with blocks
    ``[[C_ii + sigma_i^2 I, C_ij], [C_ij^T, C_jj + sigma_j^2 I]]``.
    No jitter is applied here; see :func:`jittered_cholesky`.
    """
    _validate_params_finite(params)
    Dii = pairwise_diffs(X_i, X_i)
    Djj = pairwise_diffs(X_j, X_j)
    Dij = pairwise_diffs(X_i, X_j)
    if Dii.shape[-1] != params.input_dim:
        raise ValueError("input dimension does not match kernels")

    xi0sq = params.xi0 * params.xi0
    C_ii = (xi0sq * params.k_0i.amplitude ** 2
            * _sq_exp_grid(Dii, params.k_0i.lengthscale_diag, -0.25)
            + params.xi_i ** 2 * params.k_ii.amplitude ** 2
            * _sq_exp_grid(Dii, params.k_ii.lengthscale_diag, -0.25))
    C_jj = (xi0sq * params.k_0j.amplitude ** 2
            * _sq_exp_grid(Djj, params.k_0j.lengthscale_diag, -0.25)
            + params.xi_j ** 2 * params.k_jj.amplitude ** 2
            * _sq_exp_grid(Djj, params.k_jj.lengthscale_diag, -0.25))
    C_ij = (xi0sq * cross_weight(params.k_0i, params.k_0j)
            * _sq_exp_grid(Dij, cross_precision(params.k_0i, params.k_0j), -0.5))

    C_ii[np.diag_indices_from(C_ii)] += params.sigma_i ** 2
    C_jj[np.diag_indices_from(C_jj)] += params.sigma_j ** 2
    top = np.concatenate([C_ii, C_ij], axis=1)
    bottom = np.concatenate([C_ij.T, C_jj], axis=1)
    return np.concatenate([top, bottom], axis=0)


def assemble_univariate_cov(params: UnivariateParams, X: np.ndarray) -> np.ndarray:
    D = pairwise_diffs(X, X)
    C = (params.scale ** 2 * params.kernel.amplitude ** 2
         * _sq_exp_grid(D, params.kernel.lengthscale_diag, -0.25))
    C[np.diag_indices_from(C)] += params.sigma ** 2
    return C


def assemble_full_cov(params: FullMgcpParams, X_list) -> np.ndarray:
    """Joint covariance of all outputs under the all-pairs latent model."""
    N = params.n_outputs
    if len(X_list) != N:
        raise ValueError("X_list length must equal n_outputs")
    blocks = [[None] * N for _ in range(N)]
    for a in range(N):
        Daa = pairwise_diffs(X_list[a], X_list[a])
        block = np.zeros(Daa.shape[:2])
        for b in range(N):
            if b == a:
                continue
            i, j = min(a, b) + 1, max(a, b) + 1
            kern_i, kern_j = params.pair_kernels[(i, j)]
            kern = kern_i if a < b else kern_j
            xi = params.scale(i, j)
            block += xi * xi * kern.amplitude ** 2 * _sq_exp_grid(
                Daa, kern.lengthscale_diag, -0.25)
        block[np.diag_indices_from(block)] += params.noise[a] ** 2
        blocks[a][a] = block
    for a in range(N):
        for b in range(a + 1, N):
            Dab = pairwise_diffs(X_list[a], X_list[b])
            kern_a, kern_b = params.pair_kernels[(a + 1, b + 1)]
            xi = params.scale(a + 1, b + 1)
            blocks[a][b] = (xi * xi * cross_weight(kern_a, kern_b)
                            * _sq_exp_grid(Dab, cross_precision(kern_a, kern_b), -0.5))
            blocks[b][a] = blocks[a][b].T
    return np.block(blocks)


# ---------------------------------------------------------------------------
# factorization helpers


def add_jitter(C: np.ndarray, rel: float = JITTER_REL) -> np.ndarray:
    """Inflate each diagonal entry by a relative amount before factorizing."""
    out = C.copy()
    idx = np.diag_indices_from(out)
    out[idx] = out[idx] * (1.0 + rel)
    return out


def jittered_cholesky(C: np.ndarray, rel: float = JITTER_REL):
    """Lower Cholesky factor of the jittered matrix, escalating on failure.

    Returns ``(L, rel_used)``.  Raises :class:`NumericalError` if the matrix
    cannot be factorized even after escalating the jitter by 1e4.
    """
    for factor in (1.0, 1e2, 1e4):
        try:
            return np.linalg.cholesky(add_jitter(C, rel * factor)), rel * factor
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed for {C.shape[0]}x{C.shape[0]} matrix even with "
        f"relative jitter {rel * 1e4:g}; min diagonal {np.min(np.diag(C)):g}")


# ---------------------------------------------------------------------------
# quadrature reference


def smoothing_kernel_value(kernel: KernelSpec, U: np.ndarray) -> np.ndarray:
    """Evaluate the Gaussian smoothing kernel at rows of U.

    Normalized so that the induced marginal covariance at d=0 equals
    amplitude**2 for a unit-scale latent.
    """
    l = kernel.lengthscale_diag
    dim = l.size
    coef = (kernel.amplitude * (4.0 * np.pi) ** (dim / 4.0)
            * (2.0 * np.pi) ** (-dim / 2.0) * float(np.prod(l)) ** 0.25)
    return coef * np.exp(-0.5 * np.sum(U * U * l, axis=-1))


def quadrature_cross_cov(kernel_a: KernelSpec, kernel_b: KernelSpec,
                         scale: float, d, n_points: int = 2001) -> float:
    """Trapezoid-rule evaluation of the latent-smoothing integral.

    Integrates ``scale^2 * int K_a(u) K_b(u - d) du`` on a grid wide enough
    to contain both kernels.  Supports input dimension 1 and 2 only; this is
    a slow reference used to pin down the closed forms.
    """
    if kernel_a.input_dim != kernel_b.input_dim:
        raise ValueError("kernel dimensions differ")
    dim = kernel_a.input_dim
    if dim > 2:
        raise ValueError("quadrature reference supports dimension <= 2")
    if scale == 0.0:
        return 0.0
    d = _check_diff(d, dim)

    la = kernel_a.lengthscale_diag
    lb = kernel_b.lengthscale_diag
    axes = []
    for k in range(dim):
        width = 12.0 * max(1.0 / np.sqrt(la[k]), 1.0 / np.sqrt(lb[k]))
        lo = min(0.0, d[k]) - width
        hi = max(0.0, d[k]) + width
        axes.append(np.linspace(lo, hi, n_points))
    if dim == 1:
        U = axes[0][:, None]
        vals = smoothing_kernel_value(kernel_a, U) * \
            smoothing_kernel_value(kernel_b, U - d[None, :])
        integral = np.trapezoid(vals, axes[0])
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        U = np.stack([g0, g1], axis=-1)
        vals = smoothing_kernel_value(kernel_a, U) * \
            smoothing_kernel_value(kernel_b, U - d[None, None, :])
        integral = np.trapezoid(np.trapezoid(vals, axes[1], axis=1), axes[0])
    return scale * scale * float(integral)
