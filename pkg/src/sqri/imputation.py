"""Fractional imputation by penalized quantile regression.

One set of uniforms ``tau_1..tau_J`` is drawn, one quantile curve is fitted per draw on
the respondents, and every missing unit receives the J curves evaluated at its own
covariate.  The estimating equations then use the average of ``g`` over those J values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .spline_basis import basis_matrix
from .quantile_fit import (Design, FitConfig, QuantileFit, gacv_scores, solve_batch,
                           _argmin_prefer_smooth)

MEDIAN = 0.5


def draw_taus(J: int, seed) -> np.ndarray:
    """J i.i.d. Uniform(0, 1) draws, strictly inside the interval."""
    if int(J) != J or J < 1:
        raise ValueError(f"J must be a positive integer, got {J}")
    rng = np.random.default_rng(seed)
    taus = rng.random(int(J))
    # random() can return exactly 0; redraw those (probability ~2**-53 each)
    while np.any(taus <= 0.0):
        bad = taus <= 0.0
        taus[bad] = rng.random(int(bad.sum()))
    return taus


@dataclass(frozen=True)
class FractionalImputation:
    """J imputed responses for each missing unit.

    ``values[k, j]`` is the j-th imputed response of unit ``missing[k]``.  ``weights``
    holds per-unit fractional weights (rows sum to one); ``None`` means ``1/J``.
    """

    missing: np.ndarray
    values: np.ndarray
    taus: np.ndarray | None = None
    fits: tuple = ()
    weights: np.ndarray | None = None
    seed: object = None
    lam: float | None = None
    method: str = "sqri"
    converged: bool = True
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def imputed(self) -> dict:
        return {int(i): self.values[k] for k, i in enumerate(self.missing)}

    def fraction_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(self.values.shape, 1.0 / max(self.J, 1))

    def mean_values(self) -> np.ndarray:
        """Weighted average of the imputed values per missing unit."""
        return np.sum(self.fraction_weights() * self.values, axis=1)


def select_lambda(design, y, counts, config: FitConfig, tau=MEDIAN):
    """GACV choice of lambda for each row of ``counts``; returns an array."""
    counts = np.atleast_2d(counts)
    n_obs = np.rint(counts.sum(axis=1)).astype(int)
    lams = np.array([config.lambdas(k) for k in n_obs])
    if lams.shape[1] == 1:
        return lams[:, 0].copy()
    eps = np.array([config.epsilon(y[row > 0]) for row in counts])
    scores, _, _ = gacv_scores(design, y, counts, tau, lams, eps, config)
    return np.array([_argmin_prefer_smooth(row, grid) for row, grid in zip(scores, lams)])


def fit_tau_batch(design: Design, y, counts, taus, config: FitConfig, lams=None, start=None):
    """Quantile coefficients for every (row of ``counts``, tau) pair.

    Parameters
    ----------
    design : Design
        Basis rows of the respondents.
    counts : ndarray, shape (B, N)
        Respondent multiplicities per replicate.
    taus : ndarray, shape (B, J)
    lams : ndarray, shape (B,) or (B, J), optional
        Smoothing parameters; selected by GACV at the median when omitted.
    start : ndarray, shape (B, J, dim), optional
        Starting coefficients for the solver.

    Returns
    -------
    coefficients : ndarray, shape (B, J, dim)
    lams : ndarray, shape (B, J)
    result : BatchResult
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    taus = np.atleast_2d(np.asarray(taus, dtype=float))
    B, J = taus.shape
    if lams is None:
        if config.lambda_per_tau:
            lams = np.array([[select_lambda(design, y, counts[b:b + 1], config, taus[b, j])[0]
                              for j in range(J)] for b in range(B)])
        else:
            lams = select_lambda(design, y, counts, config)
    lams = np.broadcast_to(np.asarray(lams, dtype=float).reshape(B, -1), (B, J))
    eps = np.array([config.epsilon(y[row > 0]) for row in counts])
    res = solve_batch(design, y, np.repeat(counts, J, axis=0), taus.ravel(), lams.ravel(),
                      np.repeat(eps, J), config,
                      b0=None if start is None else np.reshape(start, (B * J, design.dim)))
    if not np.all(np.isfinite(res.coefficients)):
        raise np.linalg.LinAlgError("degenerate design")
    return res.coefficients.reshape(B, J, design.dim), lams, res


def sqri_impute(data: Dataset, config: FitConfig = FitConfig(), J: int = 10, seed=0,
                lam=None, taus=None) -> FractionalImputation:
    """Impute every missing response with J fitted conditional quantiles.

    Parameters
    ----------
    data : Dataset
    config : FitConfig
    J : int
        Number of uniform draws (and quantile fits).
    seed : int or numpy.random.SeedSequence
        Seeds the uniform draws; the fits themselves are deterministic.
    lam : float, optional
        Fixed smoothing parameter.  By default it is chosen once by GACV at the median.
    taus : array_like, optional
        Quantile levels to use instead of drawing them; ``J`` is then ignored.
    """
    if taus is None:
        taus = draw_taus(J, seed)
    else:
        taus = np.asarray(taus, dtype=float).ravel()
        if taus.size == 0 or np.any(~(taus > 0) | ~(taus < 1)):
            raise ValueError("taus must be a non-empty set of levels in (0, 1)")
        J = taus.size
    resp = data.respondents
    x_r = data.covariates[resp]
    y_r = data.y[resp]
    design = Design(x_r, config)
    if len(resp) < 2 * design.dim:
        raise ValueError(f"insufficient respondents: {len(resp)} < {2 * design.dim}")
    counts = np.ones((1, len(resp)))
    coef, lams, res = fit_tau_batch(design, y_r, counts, taus[None, :], config,
                                    None if lam is None else np.full(1, float(lam)))
    fits = tuple(
        QuantileFit(float(taus[j]), coef[0, j].copy(), float(lams[0, j]),
                    float(res.objective[j]), int(res.iterations[j]), bool(res.converged[j]),
                    config.grid, design.n_covariates, res.weights[j])
        for j in range(J))
    miss = data.missing
    if miss.size:
        # column by column, the same product predict_quantile forms, so values match bitwise
        B = basis_matrix(data.covariates[miss], config.grid)
        values = np.column_stack([B @ fit.coefficients for fit in fits])
    else:
        values = np.empty((0, J))
    lam_out = float(lams[0, 0]) if not config.lambda_per_tau else None
    return FractionalImputation(miss, values, taus, fits, None, seed, lam_out, "sqri",
                                bool(res.converged.all()), {"lams": lams[0].copy()})


def augmented_moment(system, data: Dataset, imp: FractionalImputation, theta) -> np.ndarray:
    """``G_n(theta)``: respondents contribute ``g``, missing units the fractional average."""
    return unit_moments(system, data, imp, theta).mean(axis=0)


def unit_moments(system, data: Dataset, imp: FractionalImputation, theta) -> np.ndarray:
    """Per-unit contributions to ``G_n(theta)``, shape ``(n, r)``."""
    theta = np.asarray(theta, dtype=float)
    out = np.empty((data.n, system.r))
    resp = data.respondents
    out[resp] = system.g(data.y[resp], data.x[resp], theta)
    if imp.missing.size:
        if not np.array_equal(imp.missing, data.missing):
            raise ValueError("imputation does not match the dataset's missing units")
        xm = data.x[imp.missing]
        gv = system.g(imp.values, xm[:, None, :], theta)
        out[imp.missing] = np.einsum("kj,kjr->kr", imp.fraction_weights(), gv)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.argwhere(bad)[0, 0])
        raise FloatingPointError(f"moment overflow at unit {i}")
    return out
