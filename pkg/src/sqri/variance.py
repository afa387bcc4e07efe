"""Plug-in sandwich variance for fractional-imputation GMM, and confidence intervals.

The influence vector of unit i is

    xi_i = g(y_i) + (1 - delta_i) (mu_g|x(x_i) - g(y_i)) + delta_i C_p h_n(y_i, x_i) B(x_i)

where the last term carries the first-order effect of the respondent on every fitted
quantile curve.  ``V_G`` is the sample covariance of the ``xi_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .estimation import ConfidenceInterval, FractionalMoments
from .gmm import MomentSystem, system_for
from .imputation import FractionalImputation
from .quantile_fit import psi
from .spline_basis import basis_matrix, penalty_matrix

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian-kernel bandwidths: ``a`` for the response, ``b`` per covariate."""

    bandwidth_a: float
    bandwidth_b: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in np.atleast_1d(self.bandwidth_b))
        if not self.bandwidth_a > 0 or not all(v > 0 for v in b):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "bandwidth_b", b)


def silverman_bandwidth(v) -> float:
    """``0.9 min(sd, IQR/1.34) n^(-1/5)``, falling back to sd when the IQR vanishes."""
    v = np.asarray(v, dtype=float)
    sd = np.std(v, ddof=1) if v.size > 1 else 0.0
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if not spread > 0:
        spread = 1.0
    return 0.9 * spread * v.size ** (-0.2)


def silverman_config(data: Dataset) -> KernelConfig:
    resp = data.respondents
    if resp.size == 0:
        raise ValueError("kernel density needs at least one respondent")
    a = silverman_bandwidth(data.y[resp])
    b = tuple(silverman_bandwidth(data.x[resp, k]) for k in range(data.d_x))
    return KernelConfig(a, b)


def _x_kernel(x_eval, x_obs, b):
    # product Gaussian kernel in x; normalizing constants cancel in the ratio
    z = (x_eval[:, None, :] - x_obs[None, :, :]) / np.asarray(b)
    return np.exp(-0.5 * np.sum(z * z, axis=2))


def kernel_conditional_density(x, y, x_obs, y_obs, config: KernelConfig):
    """Gaussian-kernel estimate of ``f_{Y|X}(y | x)`` from respondent pairs.

    ``x`` may be a scalar, a vector of scalar covariates, or ``(m, d_x)``; ``y`` matches.
    Returns 0 where the covariate kernel mass underflows below 1e-300.
    """
    x_obs = np.asarray(x_obs, dtype=float)
    x_obs = x_obs[:, None] if x_obs.ndim == 1 else x_obs
    y_obs = np.asarray(y_obs, dtype=float)
    if y_obs.size == 0:
        raise ValueError("kernel density needs at least one respondent")
    d_x = x_obs.shape[1]
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    x = np.asarray(x, dtype=float).reshape(-1, d_x)
    y = y.reshape(-1)
    kx = _x_kernel(x, x_obs, config.bandwidth_b)
    a = config.bandwidth_a
    u = (y[:, None] - y_obs[None, :]) / a
    ky = np.exp(-0.5 * u * u) / (a * _SQRT_2PI)
    den = kx.sum(axis=1)
    num = (kx * ky).sum(axis=1)
    out = np.where(den > 1e-300, num / np.where(den > 1e-300, den, 1.0), 0.0)
    return float(out[0]) if scalar else out


class SQRIVarianceContext:
    """Quantities of the influence correction that do not depend on theta.

    For every imputation draw j it stores ``q_hat_j`` at all units, ``psi_j`` of the
    respondent residuals and ``H_j^{-1}``.
    """

    def __init__(self, data: Dataset, imp: FractionalImputation, fit_config,
                 kernel: KernelConfig | None = None):
        if not imp.fits:
            raise ValueError("influence correction needs the quantile fits of the imputation")
        self.data, self.imp = data, imp
        self.kernel = kernel or silverman_config(data)
        grid = fit_config.grid
        n, resp = data.n, data.respondents
        self.basis = basis_matrix(data.covariates, grid)
        dim = self.basis.shape[1]
        coef = np.stack([f.coefficients for f in imp.fits])
        lams = np.array([f.lam for f in imp.fits])
        taus = np.array([f.tau for f in imp.fits])
        self.q = coef @ self.basis.T
        B_r = self.basis[resp]
        self.psi = psi(data.y[resp][None, :] - self.q[:, resp], taus[:, None])
        x_r, y_r = data.x[resp], data.y[resp]
        J = len(imp.fits)
        P = penalty_matrix(fit_config.penalty_order, grid.dim, data.d_x)
        self.phi = np.empty((J, dim, dim))
        self.h_inv = np.empty((J, dim, dim))
        for j in range(J):
            f = kernel_conditional_density(x_r, self.q[j, resp], x_r, y_r, self.kernel)
            self.phi[j] = (B_r * f[:, None]).T @ B_r / n
            H = self.phi[j] + lams[j] / n * P
            # the augmented bivariate basis leaves H singular along a direction that
            # every B(x) is orthogonal to, so the ridge never reaches the result
            H = H + 1e-10 * np.trace(H) / dim * np.eye(dim)
            self.h_inv[j] = np.linalg.inv(H)
        self.c_p = float(np.mean(~data.delta))

    def _weighted_solves(self, theta, system):
        # W_j = H_j^{-1} sum_k B(x_k) g_y(q_jk, x_k)^T, shape (J, dim, r)
        gy = system.dg_dy(self.q, self.data.x[None, :, :], np.asarray(theta, float))
        U = np.einsum("kd,jkr->jdr", self.basis, gy)
        return self.h_inv @ U

    def h_times_basis(self, theta, system: MomentSystem) -> np.ndarray:
        """Rows ``h_n(y_i, x_i) B(x_i)`` for the respondents, shape ``(n_resp, r)``."""
        n, J = self.data.n, self.q.shape[0]
        W = self._weighted_solves(theta, system)
        B_r = self.basis[self.data.respondents]
        return np.einsum("ji,id,jdr->ir", self.psi, B_r, W) / (n * J)

    def h_hat(self, i: int, theta, system: MomentSystem) -> np.ndarray:
        """The r x dim matrix ``h_n(y_i, x_i)`` for respondent unit ``i``."""
        data = self.data
        if not data.delta[i]:
            raise ValueError("h_hat is defined for respondents only")
        pos = int(np.searchsorted(data.respondents, i))
        n, J = data.n, self.q.shape[0]
        W = self._weighted_solves(theta, system)
        return np.einsum("j,jdr->rd", self.psi[:, pos], W) / (n * J)


def xi_hat(theta, data: Dataset, imp: FractionalImputation, context=None,
           system: MomentSystem | None = None) -> np.ndarray:
    """Influence vectors ``xi_i`` for all units, shape ``(n, r)``.

    Without a ``context`` (or for imputations without quantile fits) the respondent
    correction is omitted, which is exact when nothing is missing.
    """
    system = system or system_for(data.d_x)
    out = FractionalMoments(system, data, imp).units(theta)
    if context is not None and imp.missing.size:
        resp = data.respondents
        out[resp] += context.c_p * context.h_times_basis(theta, system)
    return out


def v_g_hat(theta, data: Dataset, imp: FractionalImputation, context=None,
            system=None) -> np.ndarray:
    """Sample covariance (n - 1 denominator) of the influence vectors."""
    if data.n < 2:
        raise ValueError("V_G needs at least two units")
    xi = xi_hat(theta, data, imp, context, system)
    V = np.cov(xi, rowvar=False, ddof=1)
    return 0.5 * (V + V.T)


def gamma_hat(theta, data: Dataset, imp: FractionalImputation, system=None) -> np.ndarray:
    system = system or system_for(data.d_x)
    return FractionalMoments(system, data, imp).jacobian(theta)


@dataclass(frozen=True)
class VarianceEstimate:
    V_G_hat: np.ndarray
    Gamma_hat: np.ndarray
    n: int
    C_p_hat: float

    @property
    def Sigma_hat(self) -> np.ndarray:
        return sandwich_weighted(self) if self.Gamma_hat.shape[0] == self.Gamma_hat.shape[1] \
            else sandwich_unweighted(self)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.Sigma_hat), 0.0, None))


def sandwich_unweighted(v: VarianceEstimate) -> np.ndarray:
    """``(G'G)^{-1} G' V G (G'G)^{-1} / n``."""
    G, V = v.Gamma_hat, v.V_G_hat
    GtG = G.T @ G
    if np.linalg.matrix_rank(GtG) < GtG.shape[0]:
        raise np.linalg.LinAlgError("singular Gamma^T Gamma")
    inv = np.linalg.inv(GtG)
    S = inv @ G.T @ V @ G @ inv / v.n
    return 0.5 * (S + S.T)


def sandwich_weighted(v: VarianceEstimate) -> np.ndarray:
    """``(G' V^{-1} G)^{-1} / n`` with the eigenvalue floor on ``V``."""
    from .gmm import _inverse_floor
    G = v.Gamma_hat
    if np.linalg.matrix_rank(G) < G.shape[1]:
        raise np.linalg.LinAlgError("Gamma is rank deficient")
    if not np.any(v.V_G_hat):
        return np.zeros((G.shape[1], G.shape[1]))
    if G.shape[0] == G.shape[1]:
        # exactly identified: G^{-1} V G^{-T}, no inversion of V needed
        Gi = np.linalg.inv(G)
        S = Gi @ v.V_G_hat @ Gi.T / v.n
    else:
        S = np.linalg.inv(G.T @ _inverse_floor(v.V_G_hat) @ G) / v.n
    return 0.5 * (S + S.T)


def estimate_variance(theta, data: Dataset, imp: FractionalImputation, fit_config=None,
                      kernel=None, system=None) -> VarianceEstimate:
    system = system or system_for(data.d_x)
    context = None
    if imp.fits and imp.missing.size:
        context = SQRIVarianceContext(data, imp, fit_config, kernel)
    V = v_g_hat(theta, data, imp, context, system)
    G = gamma_hat(theta, data, imp, system)
    return VarianceEstimate(V, G, data.n, float(np.mean(~data.delta)))


def normal_ci(theta_hat, Sigma_hat, level=0.95, names=None, indices=None) -> list:
    """``theta_k +/- z sqrt(Sigma_kk)``; ``Sigma_hat`` already carries the 1/n."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    theta_hat = np.asarray(theta_hat, dtype=float)
    diag = np.diag(np.atleast_2d(Sigma_hat))
    if np.any(diag < 0):
        raise ValueError("negative variance on the diagonal")
    z = norm.ppf(0.5 + level / 2)
    idx = range(len(theta_hat)) if indices is None else indices
    out = []
    for k in idx:
        half = z * np.sqrt(diag[k])
        name = names[k] if names is not None else f"theta_{k}"
        out.append(ConfidenceInterval(int(k), name, theta_hat[k] - half, theta_hat[k] + half,
                                      level, "normal"))
    return out


def percentile_ci(samples, level=0.95, names=None, indices=None) -> list:
    """Percentile intervals from bootstrap estimates, one row per replicate."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lo, hi = np.percentile(samples, [50 * (1 - level), 50 * (1 + level)], axis=0)
    idx = range(samples.shape[1]) if indices is None else indices
    return [ConfidenceInterval(int(k), names[k] if names is not None else f"theta_{k}",
                               float(lo[k]), float(hi[k]), level, "bootstrap") for k in idx]
