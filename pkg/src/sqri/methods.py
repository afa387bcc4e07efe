"""Uniform entry points for every estimator, plus percentile-bootstrap intervals."""

from __future__ import annotations

import numpy as np

from .baselines import (BaselineConfig, full_estimator, hdfi_estimate, npi_estimate,
                        pfi_estimate, resp_estimator)
from .data import Dataset
from .estimation import EstimateReport, fractional_gmm
from .gmm import system_for
from .imputation import (FractionalImputation, draw_taus, fit_tau_batch, select_lambda,
                         sqri_impute)
from .quantile_fit import Design, FitConfig
from .seeds import child_rng, child_seed
from .spline_basis import basis_matrix
from .variance import (SQRIVarianceContext, estimate_variance, normal_ci, percentile_ci,
                       sandwich_weighted, v_g_hat)

METHODS = ("full", "resp", "sqri", "pfi", "hdfi", "npi")

# fixed stream keys so that adding or removing methods never shifts another's draws
METHOD_KEYS = {name: k for k, name in enumerate(METHODS)}


class StatisticalFailure(RuntimeError):
    """Too many replicates failed for the results to be trusted."""


def check_methods(names) -> tuple:
    names = tuple(names)
    unknown = [m for m in names if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown estimator(s) {unknown}; choose from {METHODS}")
    return names


def sqri_point(data: Dataset, J=10, seed=0, fit_config: FitConfig = FitConfig(),
               imp: FractionalImputation | None = None, mode="cu", kernel=None):
    """SQRI imputation followed by weighted GMM; returns ``(GMMEstimate, imputation)``."""
    imp = imp if imp is not None else sqri_impute(data, fit_config, J, seed)
    cache = {}

    def vg(theta):
        if "ctx" not in cache:
            cache["ctx"] = SQRIVarianceContext(data, imp, fit_config, kernel) \
                if imp.missing.size else None
        return v_g_hat(theta, data, imp, cache["ctx"])

    return fractional_gmm(data, imp, weighted=True, vg_evaluator=vg, mode=mode), imp


def sqri_estimate(data: Dataset, J=10, seed=0, fit_config: FitConfig = FitConfig(),
                  inference=True, level=0.95, kernel=None,
                  imp: FractionalImputation | None = None) -> EstimateReport:
    """Point estimate, sandwich standard errors and normal intervals."""
    system = system_for(data.d_x)
    est, imp = sqri_point(data, J, seed, fit_config, imp, kernel=kernel)
    report = EstimateReport("sqri", system.names, est.theta_hat, system.targets,
                            converged=est.converged and imp.converged,
                            diagnostics={"lambda": imp.lam, "taus": imp.taus,
                                         "gmm_iterations": est.iterations})
    if inference:
        var = estimate_variance(est.theta_hat, data, imp, fit_config, kernel, system)
        sigma = sandwich_weighted(var)
        report.variance = var
        report.standard_errors = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
        report.normal_ci = normal_ci(est.theta_hat, sigma, level, system.names)
    return report


def point_estimate(method: str, data: Dataset, J=10, seed=0,
                   fit_config: FitConfig = FitConfig(),
                   baseline_config: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Full parameter vector from one method."""
    if method == "full":
        return full_estimator(data)
    if method == "resp":
        return resp_estimator(data)
    if method == "sqri":
        est, _ = sqri_point(data, J, seed, fit_config)
        if not est.converged:
            raise ArithmeticError("GMM did not converge")
        return est.theta_hat
    if method == "pfi":
        return pfi_estimate(data, J, seed, baseline_config)
    if method == "hdfi":
        return hdfi_estimate(data, J, seed, baseline_config)
    if method == "npi":
        return npi_estimate(data, J, seed, baseline_config)
    raise ValueError(f"unknown estimator {method!r}")


def _resample_index(n, seed, b):
    rng = child_rng(seed, b)
    return rng, rng.integers(0, n, size=n)


def bootstrap_estimates(method: str, data: Dataset, J=10, B=200, seed=0,
                        fit_config: FitConfig = FitConfig(),
                        baseline_config: BaselineConfig = BaselineConfig(),
                        max_failure=0.2, lam="original"):
    """Estimates on B resamples of the units, each re-imputed with its own stream.

    For SQRI the smoothing parameter is held at the value selected on the original
    sample by default; ``lam=None`` re-selects it on every resample and a number
    fixes it outright.  Returns ``(estimates, ok)`` with failed replicates as NaN rows.
    """
    if B < 1:
        raise ValueError("B must be positive")
    if method == "sqri":
        if isinstance(lam, str):
            if lam != "original":
                raise ValueError(f"unknown lambda policy {lam!r}")
            lam = _original_lambda(data, fit_config)
        est, ok = _sqri_bootstrap(data, J, B, seed, fit_config, lam)
    else:
        d = len(system_for(data.d_x).names)
        est, ok = np.full((B, d), np.nan), np.zeros(B, dtype=bool)
        for b in range(B):
            rng, idx = _resample_index(data.n, seed, b)
            try:
                est[b] = point_estimate(method, data.subset(idx), J,
                                        child_seed(seed, b, 1), fit_config, baseline_config)
                ok[b] = True
            except (ValueError, ArithmeticError, np.linalg.LinAlgError, FloatingPointError):
                pass
    if np.mean(~ok) > max_failure:
        raise StatisticalFailure(
            f"{int((~ok).sum())} of {B} bootstrap replicates failed for {method}")
    return est, ok


def _original_lambda(data, fit_config):
    resp = data.respondents
    if fit_config.lambda_per_tau or resp.size == 0:
        return None
    design = Design(data.covariates[resp], fit_config)
    counts = np.ones((1, resp.size))
    return float(select_lambda(design, data.y[resp], counts, fit_config)[0])


def _sqri_bootstrap(data, J, B, seed, fit_config, lam=None):
    n = data.n
    system = system_for(data.d_x)
    resp = data.respondents
    idx = np.empty((B, n), dtype=int)
    taus = np.empty((B, J))
    for b in range(B):
        rng, idx[b] = _resample_index(n, seed, b)
        taus[b] = draw_taus(J, rng)
    counts = np.stack([np.bincount(row, minlength=n) for row in idx]).astype(float)
    design = Design(data.covariates[resp], fit_config)
    c_r = counts[:, resp]
    usable = (c_r > 0).sum(axis=1) >= 2 * design.dim
    est = np.full((B, len(system.names)), np.nan)
    ok = np.zeros(B, dtype=bool)
    if not usable.any():
        return est, ok
    lams = None if lam is None else np.full(int(usable.sum()), float(lam))
    coef, _, _ = fit_tau_batch(design, data.y[resp], c_r[usable], taus[usable], fit_config,
                               lams)
    for k, b in enumerate(np.flatnonzero(usable)):
        sub = data.subset(idx[b])
        miss = sub.missing
        values = basis_matrix(sub.covariates[miss], fit_config.grid) @ coef[k].T \
            if miss.size else np.empty((0, J))
        imp = FractionalImputation(miss, values, taus[b], method="sqri")
        try:
            res = fractional_gmm(sub, imp, weighted=True)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, FloatingPointError):
            continue
        if res.converged:
            est[b], ok[b] = res.theta_hat, True
    return est, ok


def bootstrap_ci(data: Dataset, config: FitConfig = FitConfig(), J=10, B=200, seed=0,
                 level=0.95, method="sqri", baseline_config: BaselineConfig = BaselineConfig(),
                 lam="original"):
    """Percentile intervals for every parameter of the moment system."""
    if B < 50:
        raise ValueError("bootstrap needs at least 50 replicates")
    est, ok = bootstrap_estimates(method, data, J, B, seed, config, baseline_config, lam=lam)
    return percentile_ci(est[ok], level, system_for(data.d_x).names)
