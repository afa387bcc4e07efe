"""Equidistant-knot B-spline bases and difference penalties on [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb


@dataclass(frozen=True)
class KnotGrid:
    """Equidistant knots ``k / n_intervals`` for ``k = -degree + 1, ..., n_intervals + degree``.

    ``n_intervals`` is the K_n of the usual notation: there are ``n_intervals - 1``
    knots strictly inside (0, 1) and the basis has ``n_intervals + degree`` functions.
    """

    n_intervals: int
    degree: int

    def __post_init__(self):
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 2:
            raise ValueError(f"n_intervals must be an integer >= 2, got {self.n_intervals}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree}")

    @property
    def knots(self) -> np.ndarray:
        k = np.arange(-self.degree + 1, self.n_intervals + self.degree + 1)
        return k / self.n_intervals

    @property
    def dim(self) -> int:
        return self.n_intervals + self.degree

    def knot(self, k):
        return np.asarray(k) / self.n_intervals


def make_knots(n_intervals: int, degree: int) -> KnotGrid:
    return KnotGrid(n_intervals, degree)


def _check_unit_interval(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("basis evaluation requires finite covariates")
    if np.any(x < 0.0) or np.any(x > 1.0):
        bad = x[(x < 0.0) | (x > 1.0)]
        raise ValueError(f"covariate outside [0, 1]: {bad.ravel()[:5]}")
    return x


def _degree_zero(x, grid):
    # B^[0]_k for k = -p+1 .. K+p; interval (k-1)/K < x <= k/K, x = 0 goes to (0, 1/K].
    K, p = grid.n_intervals, grid.degree
    ks = np.arange(-p + 1, K + p + 1)
    edges = ks / K
    # first knot index with knot >= x
    pos = np.searchsorted(edges, x, side="left")
    k_of_x = ks[0] + pos
    k_of_x = np.where(x == 0.0, 1, k_of_x)
    vals = (k_of_x[:, None] == ks[None, :]).astype(float)
    return ks, vals


def recursion_step(x, ks, prev, s, grid):
    """Raise basis values from degree ``s - 1`` to degree ``s``.

    ``prev[:, i]`` holds B^[s-1]_{ks[i]}(x); the result holds B^[s]_k for
    ``k = ks[0], ..., ks[-2]``.
    """
    kappa = grid.knot
    k = ks[:-1]
    left = (x[:, None] - kappa(k - 1)) / (kappa(k + s - 1) - kappa(k - 1))
    right = (kappa(k + s) - x[:, None]) / (kappa(k + s) - kappa(k))
    return k, left * prev[:, :-1] + right * prev[:, 1:]


def eval_basis(x, grid: KnotGrid) -> np.ndarray:
    """Evaluate all ``grid.dim`` basis functions at ``x``.

    Parameters
    ----------
    x : float or array-like
        Points in [0, 1].
    grid : KnotGrid

    Returns
    -------
    numpy.ndarray
        Shape ``(grid.dim,)`` for scalar ``x``, otherwise ``(len(x), grid.dim)``.
    """
    x = _check_unit_interval(x)
    scalar = x.ndim == 0
    xs = np.atleast_1d(x).ravel()
    ks, vals = _degree_zero(xs, grid)
    for s in range(1, grid.degree + 1):
        ks, vals = recursion_step(xs, ks, vals, s, grid)
    return vals[0] if scalar else vals


def basis_matrix(x, grid: KnotGrid) -> np.ndarray:
    """Design matrix of basis rows; a 2-D ``x`` gets one augmented block per column."""
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return eval_basis(np.atleast_1d(x), grid)
    return np.hstack([eval_basis(x[:, j], grid) for j in range(x.shape[1])])


def difference_matrix(m: int, dim: int) -> np.ndarray:
    """The m-th order difference matrix, shape ``(dim - m, dim)``.

    Row ``i`` carries ``(-1)**(j - i) * C(m, j - i)`` in columns ``j = i, ..., i + m``.
    """
    if m < 1:
        raise ValueError("difference order must be positive")
    if m >= dim:
        raise ValueError(f"difference order {m} must be smaller than dimension {dim}")
    D = np.zeros((dim - m, dim))
    coefs = np.array([(-1) ** t * comb(m, t, exact=True) for t in range(m + 1)], dtype=float)
    for i in range(dim - m):
        D[i, i:i + m + 1] = coefs
    return D


def penalty_matrix(m: int, dim: int, blocks: int = 1) -> np.ndarray:
    """Block-diagonal ``D_m^T D_m``, one block per covariate."""
    D = difference_matrix(m, dim)
    P = D.T @ D
    return np.kron(np.eye(blocks), P)


def augment_bivariate(b1, b2) -> np.ndarray:
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if b1.shape[-1] != b2.shape[-1]:
        raise ValueError(f"mismatched basis dimensions {b1.shape[-1]} and {b2.shape[-1]}")
    return np.concatenate([b1, b2], axis=-1)
