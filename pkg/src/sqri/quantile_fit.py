"""Penalized B-spline quantile regression.

The check loss is replaced by a Huber-type smoothing inside ``|u| <= eps`` and the
penalized objective is minimized by majorize-minimize (iteratively reweighted least
squares).  Every MM step minimizes a quadratic majorizer, so the smoothed objective
never increases.  After each step the solver also guesses the set of residuals inside
the smoothing band, solves the quadratic that holds on that region, and stops as soon
as the solution is consistent with the guess (a certificate of the exact optimum).

Fits are batched: one call solves many (tau, lambda, row-multiplicity) systems that
share a design matrix, which is how bootstrap replicates and GACV grids are run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spline_basis import KnotGrid, basis_matrix, penalty_matrix

_POLISH_BANDS = (1.0, 3.0, 10.0)


def check_loss(u, tau):
    """``u * (tau - 1{u < 0})``, elementwise."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def smoothed_check_loss(u, tau, eps):
    """Check loss with the kink replaced by a parabola on ``|u| <= eps``."""
    u = np.asarray(u, dtype=float)
    # inside the band the parabola exceeds the check loss by (eps - |u|)^2 / (4 eps)
    gap = np.maximum(eps - np.abs(u), 0.0)
    return u * (tau - (u < 0)) + gap * gap / (4.0 * eps)


def psi(u, tau):
    return tau - (np.asarray(u) < 0)


def _check_tau(tau):
    t = np.asarray(tau, dtype=float)
    if np.any(~(t > 0.0) | ~(t < 1.0)):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def default_lambda_grid(n_obs: int) -> tuple:
    return (0.0,) + tuple(float(v) for v in np.logspace(-4, 3, 14) * n_obs)


@dataclass(frozen=True)
class FitConfig:
    """Basis, penalty and solver settings shared by every quantile fit.

    ``lambda_grid=None`` means :func:`default_lambda_grid` of the respondent count.
    ``smoothing_epsilon=None`` means ``epsilon_scale * IQR(y)``.
    """

    degree: int = 3
    penalty_order: int = 2
    n_intervals: int = 5
    lambda_grid: tuple | None = None
    smoothing_epsilon: float | None = None
    epsilon_scale: float = 1e-4
    max_iterations: int = 500
    tolerance: float = 1e-9
    ridge: float = 1e-10
    lambda_per_tau: bool = False

    def __post_init__(self):
        if not 1 <= self.penalty_order < self.degree:
            raise ValueError("penalty order must satisfy 1 <= m < p")
        if self.smoothing_epsilon is not None and not self.smoothing_epsilon > 0:
            raise ValueError("smoothing_epsilon must be positive")
        if not self.tolerance > 0 or not self.epsilon_scale > 0:
            raise ValueError("tolerance and epsilon_scale must be positive")
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid or min(grid) < 0:
                raise ValueError("lambda_grid must be a non-empty set of non-negative values")
            object.__setattr__(self, "lambda_grid", grid)
        KnotGrid(self.n_intervals, self.degree)

    @property
    def grid(self) -> KnotGrid:
        return KnotGrid(self.n_intervals, self.degree)

    def lambdas(self, n_obs: int) -> np.ndarray:
        grid = self.lambda_grid if self.lambda_grid is not None else default_lambda_grid(n_obs)
        return np.asarray(grid, dtype=float)

    def epsilon(self, y) -> float:
        if self.smoothing_epsilon is not None:
            return float(self.smoothing_epsilon)
        q75, q25 = np.percentile(y, [75, 25])
        scale = q75 - q25
        if not scale > 0:
            scale = max(float(np.max(np.abs(y))), 1.0)
        return self.epsilon_scale * scale


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    coefficients: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    grid: KnotGrid
    n_covariates: int = 1
    weights: np.ndarray | None = field(default=None, repr=False, compare=False)

    def predict(self, x):
        return predict_quantile(self, x)


class Design:
    """Basis rows for a fixed covariate sample, computed once and reused by every fit."""

    def __init__(self, x, config: FitConfig):
        x = np.asarray(x, dtype=float)
        self.x = x
        self.config = config
        self.n_covariates = 1 if x.ndim == 1 else x.shape[1]
        self.basis = basis_matrix(x, config.grid)
        self.n, self.dim = self.basis.shape
        self.outer = (self.basis[:, :, None] * self.basis[:, None, :]).reshape(self.n, -1)
        self.penalty = penalty_matrix(config.penalty_order, config.grid.dim, self.n_covariates)
        self.rank = int(np.linalg.matrix_rank(self.basis))


@dataclass
class BatchResult:
    coefficients: np.ndarray
    smoothed_objective: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    weights: np.ndarray
    history: list | None = None


def _smoothed_objective(design, b, y, counts, taus, lams, eps):
    R = y - b @ design.basis.T
    loss = (counts * smoothed_check_loss(R, taus[:, None], eps[:, None])).sum(axis=1)
    pen = 0.5 * lams * np.einsum("si,ij,sj->s", b, design.penalty, b)
    return loss + pen, R


def _exact_objective(design, b, y, counts, taus, lams):
    R = y - b @ design.basis.T
    u = R * (taus[:, None] - (R < 0))
    pen = 0.5 * lams * np.einsum("si,ij,sj->s", b, design.penalty, b)
    return (counts * u).sum(axis=1) + pen


def _initial_coefficients(design, y, counts, taus, lams, ridge):
    # penalized least squares shifted by the tau-quantile of its residuals
    S, d = counts.shape[0], design.dim
    M = (counts @ design.outer).reshape(S, d, d) + lams[:, None, None] * design.penalty
    M = M + ridge * np.trace(M, axis1=1, axis2=2)[:, None, None] / d * np.eye(d)
    b = np.linalg.solve(M, ((counts * y) @ design.basis)[..., None])[..., 0]
    R = y - b @ design.basis.T
    shift = np.empty(S)
    for s in range(S):
        keep = counts[s] > 0
        shift[s] = np.quantile(np.repeat(R[s, keep], counts[s, keep].astype(int)), taus[s])
    return b + shift[:, None]


_STEPS = np.array([1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 34.0])


_NEWTON_STEPS = np.array([1.0, 0.5, 0.25, 0.125])


def _extrapolate(design, b, b_mm, y, counts, taus, lams, eps, steps=_STEPS):
    """Best point on the ray through the MM update; the MM point itself is the fallback."""
    S = b.shape[0]
    step = b_mm - b
    cand = b[:, None, :] + steps[None, :, None] * step[:, None, :]
    R = y - cand @ design.basis.T
    # long steps may overflow; such candidates must lose, never win through a NaN
    with np.errstate(over="ignore", invalid="ignore"):
        loss = (counts[:, None, :] * smoothed_check_loss(R, taus[:, None, None],
                                                         eps[:, None, None])).sum(axis=2)
        pen = 0.5 * lams[:, None] * np.einsum("ski,ij,skj->sk", cand, design.penalty, cand)
        f = loss + pen
    f = np.where(np.isfinite(f), f, np.inf)
    f[:, 0] = np.where(np.isfinite(f[:, 0]), f[:, 0], np.finfo(float).max)
    k = np.argmin(f, axis=1)
    rows = np.arange(S)
    return cand[rows, k], f[rows, k], R[rows, k]


def _polish(design, R, y, counts, taus, lams, eps):
    """Candidate exact minimizers for a few guesses of the inside-band set."""
    S, d = R.shape[0], design.dim
    eye = np.eye(d)
    out = []
    A = np.where(counts > 0, np.abs(R), np.inf)
    guesses = [A <= band * eps[:, None] for band in _POLISH_BANDS]
    k = min(design.rank, R.shape[1]) - 1
    # an unpenalized L1 fit interpolates as many points as the basis has rank
    guesses.append(A <= np.partition(A, k, axis=1)[:, k:k + 1])
    for inside in guesses:
        hw = counts * inside / (2.0 * eps[:, None])
        H = (hw @ design.outer).reshape(S, d, d) + lams[:, None, None] * design.penalty
        H = H + 1e-12 * np.maximum(np.trace(H, axis1=1, axis2=2), 1e-300)[:, None, None] / d * eye
        side = np.where(R < 0, taus[:, None] - 1.0, taus[:, None])
        rhs = ((hw * y) @ design.basis
               + (counts * inside * (taus[:, None] - 0.5)) @ design.basis
               + (counts * ~inside * side) @ design.basis)
        with np.errstate(invalid="ignore", over="ignore"):
            b = np.linalg.solve(H, rhs[..., None])[..., 0]
            Rn = y - b @ design.basis.T
        slack = 1e-9
        ok_in = np.abs(Rn) <= eps[:, None] * (1 + slack)
        ok_out = (np.abs(Rn) >= eps[:, None] * (1 - slack)) & (np.sign(Rn) == np.sign(R))
        ok = np.where(counts > 0, np.where(inside, ok_in, ok_out), True).all(axis=1)
        out.append((ok, b))
    return out


def solve_batch(design: Design, y, counts, taus, lams, eps, config: FitConfig,
                b0=None, record_history=False) -> BatchResult:
    """Minimize the smoothed penalized check loss for every row of ``counts``.

    Parameters
    ----------
    design : Design
    y : ndarray, shape (N,)
        Responses; entries with zero count are ignored (may be NaN).
    counts : ndarray, shape (S, N)
        Row multiplicities per system (0/1 for plain fits, bootstrap counts otherwise).
    taus, lams, eps : ndarray, shape (S,)
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    S, N = counts.shape
    d = design.dim
    taus = np.broadcast_to(np.asarray(taus, dtype=float), (S,)).copy()
    lams = np.broadcast_to(np.asarray(lams, dtype=float), (S,)).copy()
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (S,)).copy()
    y = np.where(np.any(counts > 0, axis=0), np.asarray(y, dtype=float), 0.0)
    eye = np.eye(d)

    b = _initial_coefficients(design, y, counts, taus, lams, config.ridge) if b0 is None \
        else np.array(b0, dtype=float).reshape(S, d)
    f, R = _smoothed_objective(design, b, y, counts, taus, lams, eps)
    iterations = np.zeros(S, dtype=int)
    converged = np.zeros(S, dtype=bool)
    history = [f.copy()] if record_history else None

    active = np.arange(S)
    for _ in range(config.max_iterations):
        if active.size == 0:
            break
        c, t, lm, ep = counts[active], taus[active], lams[active], eps[active]
        ba, Ra = b[active], R[active]
        v = c / (2.0 * np.maximum(np.abs(Ra), ep[:, None]))
        M = (v @ design.outer).reshape(-1, d, d) + lm[:, None, None] * design.penalty
        ridge = config.ridge * np.trace(M, axis1=1, axis2=2) / d
        rhs = (v * y) @ design.basis + (t - 0.5)[:, None] * (c @ design.basis) + ridge[:, None] * ba
        b_mm = np.linalg.solve(M + ridge[:, None, None] * eye, rhs[..., None])[..., 0]
        b_new, f_new, R_new = _extrapolate(design, ba, b_mm, y, c, t, lm, ep)
        iterations[active] += 1
        decrease = f[active] - f_new
        small = decrease <= config.tolerance * np.maximum(np.abs(f_new), 1e-300)

        open_ = np.flatnonzero(~small)
        for ok, b_cand in _polish(design, R_new[open_], y, c[open_], t[open_], lm[open_],
                                  ep[open_]):
            take = ok & ~small[open_]
            # inconsistent band guesses still give a Newton direction worth a line search
            near = np.flatnonzero(~ok & ~small[open_])
            if near.size:
                rows = open_[near]
                b_ls, f_ls, R_ls = _extrapolate(design, b_new[rows], b_cand[near], y, c[rows],
                                                t[rows], lm[rows], ep[rows], _NEWTON_STEPS)
                better = f_ls < f_new[rows]
                idx = rows[better]
                b_new[idx], f_new[idx], R_new[idx] = b_ls[better], f_ls[better], R_ls[better]
            if take.any():
                rows = open_[take]
                f_cand, R_cand = _smoothed_objective(design, b_cand[take], y, c[rows], t[rows],
                                                     lm[rows], ep[rows])
                better = f_cand <= f_new[rows]
                idx = rows[better]
                b_new[idx], f_new[idx], R_new[idx] = b_cand[take][better], f_cand[better], \
                    R_cand[better]
                small[idx] = True

        b[active], f[active], R[active] = b_new, f_new, R_new
        if record_history:
            history.append(f.copy())
        converged[active[small]] = True
        active = active[~small]

    weights = counts / (2.0 * np.maximum(np.abs(R), eps[:, None]))
    exact = _exact_objective(design, b, y, counts, taus, lams)
    return BatchResult(b, f, exact, iterations, converged, weights, history)


def _as_covariates(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    return x


def fit_quantiles(x, y, taus, lam, config: FitConfig = FitConfig(), design=None):
    """Fit one penalized quantile curve per entry of ``taus`` on the same respondents."""
    x = _as_covariates(x)
    y = np.asarray(y, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    _check_tau(taus)
    if not np.all(np.isfinite(y)):
        raise ValueError("respondent responses must be finite")
    design = design if design is not None else Design(x, config)
    n_obs = len(y)
    if n_obs < 2 * design.dim:
        raise ValueError(f"insufficient respondents: {n_obs} < {2 * design.dim}")
    lams = np.broadcast_to(np.asarray(lam, dtype=float), taus.shape)
    if np.any(lams < 0):
        raise ValueError("lambda must be non-negative")
    counts = np.ones((len(taus), n_obs))
    eps = np.full(len(taus), config.epsilon(y))
    res = solve_batch(design, y, counts, taus, lams, eps, config)
    _check_degenerate(res)
    return [
        QuantileFit(float(taus[s]), res.coefficients[s].copy(), float(lams[s]),
                    float(res.objective[s]), int(res.iterations[s]), bool(res.converged[s]),
                    config.grid, design.n_covariates, res.weights[s])
        for s in range(len(taus))
    ]


def _check_degenerate(res):
    if not np.all(np.isfinite(res.coefficients)):
        raise np.linalg.LinAlgError("degenerate design")


def fit_quantile(x, y, tau, lam, config: FitConfig = FitConfig()) -> QuantileFit:
    return fit_quantiles(x, y, [tau], lam, config)[0]


def predict_quantile(fit: QuantileFit, x):
    """``B(x)^T b(tau)``; scalar in, scalar out."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and fit.n_covariates > 1 and x.shape[0] == fit.n_covariates)
    if scalar:
        x = x.reshape(1, -1) if fit.n_covariates > 1 else x.reshape(1)
    B = basis_matrix(_as_covariates(x), fit.grid)
    out = B @ fit.coefficients
    return float(out[0]) if scalar else out


def gacv_scores(design: Design, y, counts, tau, lams, eps, config: FitConfig):
    """GACV(lambda) = check loss / (n_obs - df) for each lambda, batched over rows of ``counts``.

    ``lams`` is one grid shared by all rows or an ``(n_rows, n_lambda)`` array.  Returns ``(scores, df, result)`` with scores and df shaped ``(n_rows, n_lambda)``.
    """
    counts = np.atleast_2d(counts)
    n_rows = counts.shape[0]
    lams = np.broadcast_to(np.asarray(lams, dtype=float), (n_rows, np.shape(lams)[-1]))
    L = lams.shape[1]
    rep_counts = np.repeat(counts, L, axis=0)
    rep_lams = lams.ravel()
    rep_eps = np.repeat(np.broadcast_to(eps, (n_rows,)), L)
    res = solve_batch(design, y, rep_counts, np.full(n_rows * L, tau), rep_lams, rep_eps, config)
    d = design.dim
    BWB = (res.weights @ design.outer).reshape(-1, d, d)
    M = BWB + rep_lams[:, None, None] * design.penalty
    M = M + config.ridge * np.trace(M, axis1=1, axis2=2)[:, None, None] / d * np.eye(d)
    df = np.trace(np.linalg.solve(M, BWB), axis1=1, axis2=2)
    n_obs = rep_counts.sum(axis=1)
    loss = res.objective - 0.5 * rep_lams * np.einsum(
        "si,ij,sj->s", res.coefficients, design.penalty, res.coefficients)
    denom = n_obs - df
    scores = np.where(denom > 0, loss / np.where(denom > 0, denom, 1.0), np.inf)
    return scores.reshape(n_rows, L), df.reshape(n_rows, L), res


def _argmin_prefer_smooth(scores, lams):
    # ties (to rounding) resolved toward the larger lambda
    finite = np.isfinite(scores)
    if not finite.any():
        raise ValueError("grid too small: df(lambda) >= n_obs for every lambda")
    best = np.min(scores[finite])
    tied = finite & (scores <= best * (1 + 1e-12))
    return float(np.max(lams[tied]))


def select_lambda_gacv(x, y, tau, config: FitConfig = FitConfig(), design=None) -> float:
    """Smoothing parameter from ``config`` grid minimizing GACV at quantile level ``tau``."""
    _check_tau(tau)
    x = _as_covariates(x)
    y = np.asarray(y, dtype=float)
    lams = config.lambdas(len(y))
    if lams.size == 1:
        return float(lams[0])
    design = design if design is not None else Design(x, config)
    scores, _, _ = gacv_scores(design, y, np.ones((1, len(y))), tau, lams,
                               config.epsilon(y), config)
    return _argmin_prefer_smooth(scores[0], lams)
