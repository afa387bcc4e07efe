"""Comparator estimators: complete-data, respondents-only, hot-deck, kernel and
parametric fractional imputation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .estimation import completed_responses, fractional_gmm
from .gmm import complete_closed_form
from .imputation import FractionalImputation


@dataclass(frozen=True)
class BaselineConfig:
    """Tuning of the comparator methods.

    ``kernel_bandwidth=None`` selects the kernel-imputation bandwidth by leave-one-out
    cross-validation of the Nadaraya-Watson regression over ``bandwidth_grid``.
    """

    donor_count: int = 20
    kernel_bandwidth: float | None = None
    bandwidth_grid: tuple = tuple(np.logspace(-2.5, 0.0, 20))
    pfi_max_iter: int = 200
    pfi_tolerance: float = 1e-8

    def __post_init__(self):
        if int(self.donor_count) != self.donor_count or self.donor_count < 1:
            raise ValueError("donor_count must be a positive integer")
        if self.kernel_bandwidth is not None and not self.kernel_bandwidth > 0:
            raise ValueError("kernel_bandwidth must be positive")
        if len(self.bandwidth_grid) == 0 or min(self.bandwidth_grid) <= 0:
            raise ValueError("bandwidth_grid must hold positive values")
        if self.pfi_max_iter < 1 or not self.pfi_tolerance > 0:
            raise ValueError("PFI iteration settings must be positive")


def full_estimator(data: Dataset) -> np.ndarray:
    """Closed-form estimates from complete data."""
    if not np.all(data.delta):
        raise ValueError("full estimator requires complete data")
    return complete_closed_form(data.x, data.y)


def resp_estimator(data: Dataset) -> np.ndarray:
    """Closed-form estimates from the respondents alone."""
    resp = data.respondents
    if resp.size < 2:
        raise ValueError("insufficient respondents")
    return complete_closed_form(data.x[resp], data.y[resp])


def _require_respondents(data):
    if data.respondents.size == 0:
        raise ValueError("insufficient respondents: none observed")


def nearest_donors(data: Dataset, donor_count: int) -> np.ndarray:
    """Respondent unit indices of the nearest donors, one row per missing unit.

    Distances are Euclidean in the covariates; ties go to the lower unit index.
    """
    _require_respondents(data)
    resp, miss = data.respondents, data.missing
    if donor_count > resp.size:
        raise ValueError(f"donor_count {donor_count} exceeds {resp.size} respondents")
    d2 = ((data.x[miss][:, None, :] - data.x[resp][None, :, :]) ** 2).sum(axis=2)
    # resp is sorted, so a stable sort keeps the lower index first among ties
    order = np.argsort(d2, axis=1, kind="stable")[:, :donor_count]
    return resp[order]


def hdfi_impute(data: Dataset, J: int = 10, donor_count: int = 20, seed=0) -> FractionalImputation:
    """J draws with replacement from each missing unit's nearest respondents."""
    rng = np.random.default_rng(seed)
    miss = data.missing
    if miss.size == 0:
        return FractionalImputation(miss, np.empty((0, J)), seed=seed, method="hdfi")
    donors = nearest_donors(data, donor_count)
    pick = rng.integers(0, donor_count, size=(miss.size, J))
    chosen = np.take_along_axis(donors, pick, axis=1)
    return FractionalImputation(miss, data.y[chosen], seed=seed, method="hdfi",
                                extras={"donor_index": chosen})


def mean_completed_estimate(data: Dataset, imp: FractionalImputation) -> np.ndarray:
    """Closed form with each missing response replaced by its fractional mean."""
    return complete_closed_form(data.x, completed_responses(data, imp))


def hdfi_estimate(data: Dataset, J=10, seed=0, config: BaselineConfig = BaselineConfig()):
    return mean_completed_estimate(data, hdfi_impute(data, J, config.donor_count, seed))


def _kernel_logits(x_eval, x_obs, h):
    z = (x_eval[:, None, :] - x_obs[None, :, :]) / h
    return -0.5 * np.sum(z * z, axis=2)


def npi_probabilities(data: Dataset, bandwidth: float) -> np.ndarray:
    """Selection probabilities of each respondent for each missing unit.

    Computed on the log scale, so a vanishing bandwidth concentrates the mass on the
    nearest respondent instead of underflowing.
    """
    _require_respondents(data)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    logits = _kernel_logits(data.x[data.missing], data.x[data.respondents], bandwidth)
    prob = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    bad = ~np.isfinite(prob).all(axis=1)
    if bad.any():
        d2 = -logits[bad]
        prob[bad] = 0.0
        prob[bad, np.argmin(d2, axis=1)] = 1.0
    return prob


def nw_cv_score(x, y, h) -> float:
    """Leave-one-out squared error of the Nadaraya-Watson regression."""
    logits = _kernel_logits(x, x, h)
    np.fill_diagonal(logits, -np.inf)
    top = np.max(logits, axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        return np.inf
    w = np.exp(logits - top)
    fit = (w @ y) / w.sum(axis=1)
    return float(np.mean((y - fit) ** 2))


def select_npi_bandwidth(data: Dataset, grid=BaselineConfig().bandwidth_grid) -> float:
    resp = data.respondents
    x, y = data.x[resp], data.y[resp]
    scores = [nw_cv_score(x, y, h) for h in grid]
    return float(grid[int(np.argmin(scores))])


def npi_kernel_impute(data: Dataset, J=10, bandwidth=None, seed=0,
                      config: BaselineConfig = BaselineConfig()) -> FractionalImputation:
    """J kernel-weighted draws from the respondents for each missing unit."""
    _require_respondents(data)
    h = bandwidth if bandwidth is not None else (
        config.kernel_bandwidth or select_npi_bandwidth(data, config.bandwidth_grid))
    miss, resp = data.missing, data.respondents
    if miss.size == 0:
        return FractionalImputation(miss, np.empty((0, J)), seed=seed, method="npi",
                                    extras={"bandwidth": h})
    prob = npi_probabilities(data, h)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(prob, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((miss.size, J))
    pick = (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
    chosen = resp[np.minimum(pick, resp.size - 1)]
    return FractionalImputation(miss, data.y[chosen], seed=seed, method="npi",
                                extras={"bandwidth": h, "donor_index": chosen})


def npi_estimate(data: Dataset, J=10, seed=0, config: BaselineConfig = BaselineConfig()):
    """Root of the fractional estimating equations under kernel imputation."""
    imp = npi_kernel_impute(data, J, None, seed, config)
    return fractional_gmm(data, imp, weighted=False).theta_hat


def _design(x):
    return np.column_stack([np.ones(len(x)), x])


def _weighted_normal_mle(X, y, w):
    sw = np.sqrt(w)
    beta = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    resid = y - X @ beta
    sigma = np.sqrt(np.sum(w * resid * resid) / np.sum(w))
    return beta, sigma


def _normal_logpdf(y, mean, sigma):
    return -0.5 * ((y - mean) / sigma) ** 2 - np.log(sigma)


@dataclass(frozen=True)
class PFIResult:
    imputation: FractionalImputation
    beta: np.ndarray
    sigma: float
    iterations: int
    converged: bool
    weight_history: tuple


def pfi_impute(data: Dataset, J=10, seed=0, config: BaselineConfig = BaselineConfig(),
               record_weights=False) -> PFIResult:
    """Parametric fractional imputation under a normal linear working model.

    The proposal is the working model at the respondent fit and stays fixed; the
    fractional weights are density ratios normalized within each unit.
    """
    resp, miss = data.respondents, data.missing
    X_r = _design(data.x[resp])
    if resp.size < X_r.shape[1] + 1:
        raise ValueError("insufficient respondents for the working model")
    beta0, sigma0 = _weighted_normal_mle(X_r, data.y[resp], np.ones(resp.size))
    if miss.size == 0:
        imp = FractionalImputation(miss, np.empty((0, J)), weights=np.empty((0, J)),
                                   seed=seed, method="pfi")
        return PFIResult(imp, beta0, sigma0, 0, True, ())
    rng = np.random.default_rng(seed)
    X_m = _design(data.x[miss])
    mean0 = X_m @ beta0
    ystar = mean0[:, None] + sigma0 * rng.standard_normal((miss.size, J))
    log_prop = _normal_logpdf(ystar, mean0[:, None], sigma0)
    X_all = np.vstack([X_r, np.repeat(X_m, J, axis=0)])
    y_all = np.concatenate([data.y[resp], ystar.ravel()])
    beta, sigma = beta0, sigma0
    history = []
    converged = False
    it = 0
    for it in range(1, config.pfi_max_iter + 1):
        logw = _normal_logpdf(ystar, (X_m @ beta)[:, None], sigma) - log_prop
        w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
        if record_weights:
            history.append(w)
        beta_new, sigma_new = _weighted_normal_mle(
            X_all, y_all, np.concatenate([np.ones(resp.size), w.ravel()]))
        change = np.linalg.norm(np.append(beta_new - beta, sigma_new - sigma))
        beta, sigma = beta_new, sigma_new
        if change < config.pfi_tolerance:
            converged = True
            break
    logw = _normal_logpdf(ystar, (X_m @ beta)[:, None], sigma) - log_prop
    w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    imp = FractionalImputation(miss, ystar, weights=w, seed=seed, method="pfi",
                               converged=converged)
    return PFIResult(imp, beta, sigma, it, converged, tuple(history))


def pfi_estimate(data: Dataset, J=10, seed=0, config: BaselineConfig = BaselineConfig()):
    return mean_completed_estimate(data, pfi_impute(data, J, seed, config).imputation)
