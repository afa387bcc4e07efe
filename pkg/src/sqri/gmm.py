"""Moment systems and generalized-method-of-moments estimation.

A :class:`MomentSystem` carries ``g(y, x, theta)`` with its analytic derivatives.  The
estimators take a *builder* ``theta -> G_n(theta)`` so the same code serves complete
data, fractional imputations and the kernel baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class MomentSystem:
    """Vectorized estimating functions.

    ``g(y, x, theta)`` takes ``y`` of shape ``S`` and ``x`` of shape ``S + (d_x,)``
    (broadcasting allowed) and returns ``S + (r,)``.  ``dg_dtheta`` returns
    ``S + (r, d_theta)`` and ``dg_dy`` returns ``S + (r,)``.
    """

    name: str
    r: int
    d_theta: int
    g: Callable
    dg_dtheta: Callable
    dg_dy: Callable
    lower: np.ndarray
    upper: np.ndarray
    names: tuple
    targets: tuple
    d_x: int = 1

    def __post_init__(self):
        if self.r < self.d_theta:
            raise ValueError("need at least as many moments as parameters")

    def within_bounds(self, theta, strict=True) -> bool:
        theta = np.asarray(theta)
        if strict:
            lo_ok = np.where(np.isfinite(self.lower), theta > self.lower, True)
        else:
            lo_ok = theta >= self.lower
        return bool(np.all(lo_ok) and np.all(theta <= self.upper) and np.all(np.isfinite(theta)))


def _check_scales(sig):
    if np.any(np.asarray(sig) <= 0):
        raise ValueError("scale parameters must be positive")


def moments_five(x, y, theta):
    """``(x-mu_x, y-mu_y, (x-mu_x)^2-s_x^2, (y-mu_y)^2-s_y^2, (x-mu_x)(y-mu_y)-rho s_x s_y)``."""
    mx, my, sx, sy, rho = np.asarray(theta, dtype=float)
    _check_scales((sx, sy))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u, v = np.broadcast_arrays(x - mx, y - my)
    return np.stack([u, v, u * u - sx * sx, v * v - sy * sy, u * v - rho * sx * sy], axis=-1)


def moments_bivariate(x1, x2, y, theta):
    """Eight moments for two covariates: three means, three variances, two correlations."""
    m1, m2, my, s1, s2, sy, r1, r2 = np.asarray(theta, dtype=float)
    _check_scales((s1, s2, sy))
    u1, u2, v = np.broadcast_arrays(np.asarray(x1, float) - m1, np.asarray(x2, float) - m2,
                                    np.asarray(y, float) - my)
    return np.stack([u1, u2, v, u1 * u1 - s1 * s1, u2 * u2 - s2 * s2, v * v - sy * sy,
                     u1 * v - r1 * s1 * sy, u2 * v - r2 * s2 * sy], axis=-1)


def _five_g(y, x, theta):
    return moments_five(x[..., 0], y, theta)


def _five_dtheta(y, x, theta):
    mx, my, sx, sy, rho = theta
    u, v = np.broadcast_arrays(x[..., 0] - mx, np.asarray(y) - my)
    out = np.zeros(u.shape + (5, 5))
    out[..., 0, 0] = -1.0
    out[..., 1, 1] = -1.0
    out[..., 2, 0] = -2.0 * u
    out[..., 2, 2] = -2.0 * sx
    out[..., 3, 1] = -2.0 * v
    out[..., 3, 3] = -2.0 * sy
    out[..., 4, 0] = -v
    out[..., 4, 1] = -u
    out[..., 4, 2] = -rho * sy
    out[..., 4, 3] = -rho * sx
    out[..., 4, 4] = -sx * sy
    return out


def _five_dy(y, x, theta):
    mx, my = theta[0], theta[1]
    u, v = np.broadcast_arrays(x[..., 0] - mx, np.asarray(y) - my)
    out = np.zeros(u.shape + (5,))
    out[..., 1] = 1.0
    out[..., 3] = 2.0 * v
    out[..., 4] = u
    return out


def _biv_g(y, x, theta):
    return moments_bivariate(x[..., 0], x[..., 1], y, theta)


def _biv_dtheta(y, x, theta):
    m1, m2, my, s1, s2, sy, r1, r2 = theta
    u1, u2, v = np.broadcast_arrays(x[..., 0] - m1, x[..., 1] - m2, np.asarray(y) - my)
    out = np.zeros(v.shape + (8, 8))
    for k in range(3):
        out[..., k, k] = -1.0
    out[..., 3, 0] = -2.0 * u1
    out[..., 3, 3] = -2.0 * s1
    out[..., 4, 1] = -2.0 * u2
    out[..., 4, 4] = -2.0 * s2
    out[..., 5, 2] = -2.0 * v
    out[..., 5, 5] = -2.0 * sy
    out[..., 6, 0] = -v
    out[..., 6, 2] = -u1
    out[..., 6, 3] = -r1 * sy
    out[..., 6, 5] = -r1 * s1
    out[..., 6, 6] = -s1 * sy
    out[..., 7, 1] = -v
    out[..., 7, 2] = -u2
    out[..., 7, 4] = -r2 * sy
    out[..., 7, 5] = -r2 * s2
    out[..., 7, 7] = -s2 * sy
    return out


def _biv_dy(y, x, theta):
    m1, m2, my = theta[:3]
    u1, u2, v = np.broadcast_arrays(x[..., 0] - m1, x[..., 1] - m2, np.asarray(y) - my)
    out = np.zeros(v.shape + (8,))
    out[..., 2] = 1.0
    out[..., 5] = 2.0 * v
    out[..., 6] = u1
    out[..., 7] = u2
    return out


FIVE = MomentSystem(
    "five", 5, 5, _five_g, _five_dtheta, _five_dy,
    lower=np.array([-np.inf, -np.inf, 0.0, 0.0, -1.0]),
    upper=np.array([np.inf, np.inf, np.inf, np.inf, 1.0]),
    names=("mu_x", "mu_y", "sigma_x", "sigma_y", "rho"),
    targets=(1, 3, 4), d_x=1)

BIVARIATE = MomentSystem(
    "bivariate", 8, 8, _biv_g, _biv_dtheta, _biv_dy,
    lower=np.array([-np.inf] * 3 + [0.0] * 3 + [-1.0] * 2),
    upper=np.array([np.inf] * 6 + [1.0] * 2),
    names=("mu_x1", "mu_x2", "mu_y", "sigma_x1", "sigma_x2", "sigma_y", "rho_1", "rho_2"),
    targets=(2, 5, 6, 7), d_x=2)


def system_for(d_x: int) -> MomentSystem:
    if d_x == 1:
        return FIVE
    if d_x == 2:
        return BIVARIATE
    raise ValueError(f"no moment system for {d_x} covariates")


def complete_closed_form(x, y) -> np.ndarray:
    """Sample means, (n-1)-denominator standard deviations and correlations.

    Returns the parameter vector in the order of :func:`system_for` (means of the
    covariates, mean of y, their standard deviations, then the correlations of y with
    each covariate).
    """
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 2:
        raise ValueError("closed form needs at least two observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("closed form needs complete responses")
    mx, my = x.mean(axis=0), y.mean()
    sx = np.sqrt(((x - mx) ** 2).sum(axis=0) / (n - 1))
    sy = np.sqrt(((y - my) ** 2).sum() / (n - 1))
    if sy == 0 or np.any(sx == 0):
        raise ValueError("zero variance")
    rho = ((x - mx) * (y - my)[:, None]).sum(axis=0) / (n - 1) / (sx * sy)
    return np.concatenate([mx, [my], sx, [sy], rho])


def to_moment_convention(theta_closed, n: int) -> np.ndarray:
    """Rescale (n-1)-denominator standard deviations to the n-denominator GMM root."""
    theta = np.array(theta_closed, dtype=float)
    d_x = (len(theta) - 2) // 3
    theta[d_x + 1:2 * d_x + 2] *= np.sqrt((n - 1) / n)
    return theta


@dataclass(frozen=True)
class GMMEstimate:
    theta_hat: np.ndarray
    objective: float
    mode: str
    iterations: int
    converged: bool
    gradient_norm: float = float("nan")


def _numeric_jacobian(builder, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h * max(1.0, abs(theta[k]))
        cols.append((builder(theta + e) - builder(theta - e)) / (2 * e[k]))
    return np.stack(cols, axis=1)


def gmm_unweighted(builder, system: MomentSystem, theta_init, jacobian=None,
                   max_iterations=200, tolerance=1e-10) -> GMMEstimate:
    """Minimize ``G(theta)^T G(theta)`` by Gauss-Newton with backtracking.

    Parameters
    ----------
    builder : callable
        ``theta -> G_n(theta)``.
    jacobian : callable, optional
        ``theta -> dG_n/dtheta``; central differences when omitted.
    tolerance : float
        Convergence threshold on the gradient norm ``2 |Gamma^T G|``.
    """
    return _gauss_newton(builder, system, theta_init, jacobian, None, max_iterations,
                         tolerance, "unweighted")


def _inverse_floor(V):
    V = 0.5 * (V + V.T)
    r = V.shape[0]
    w, Q = np.linalg.eigh(V)
    tr = np.trace(V)
    if not np.isfinite(tr) or tr <= 0 or w[-1] <= 0:
        raise np.linalg.LinAlgError("weight matrix degenerate")
    w = np.maximum(w, 1e-10 * tr / r)
    return (Q / w) @ Q.T


def gmm_weighted(builder, system: MomentSystem, theta_init, vg_evaluator, jacobian=None,
                 mode="cu", max_iterations=200, tolerance=1e-10) -> GMMEstimate:
    """Weighted GMM with weight ``V_G(theta)^{-1}``.

    ``mode='cu'`` re-evaluates the weight inside the objective (continuous updating);
    ``mode='two-step'`` fixes it at the unweighted estimate.  An exactly identified
    system whose unweighted objective vanishes is returned as is, since any positive
    definite weight has the same root.
    """
    if mode not in ("cu", "two-step"):
        raise ValueError(f"unknown weighting mode {mode!r}")
    first = gmm_unweighted(builder, system, theta_init, jacobian, max_iterations, tolerance)
    label = "weighted-CU" if mode == "cu" else "weighted-two-step"
    if system.r == system.d_theta and first.objective < 1e-14:
        return GMMEstimate(first.theta_hat, first.objective, label, first.iterations,
                           first.converged, first.gradient_norm)
    if mode == "two-step":
        W = _inverse_floor(vg_evaluator(first.theta_hat))
        weight = lambda theta: W  # noqa: E731
    else:
        weight = lambda theta: _inverse_floor(vg_evaluator(theta))  # noqa: E731
    return _gauss_newton(builder, system, first.theta_hat, jacobian, weight, max_iterations,
                         tolerance, label)


def _gauss_newton(builder, system, theta_init, jacobian, weight, max_iterations, tolerance,
                  label):
    theta = np.array(theta_init, dtype=float)
    if not system.within_bounds(theta):
        raise ValueError("initial value outside the parameter bounds")
    jac = jacobian if jacobian is not None else (lambda t: _numeric_jacobian(builder, t))

    def objective(t):
        G = builder(t)
        W = np.eye(len(G)) if weight is None else weight(t)
        return float(G @ W @ G), G, W

    f, G, W = objective(theta)
    if not np.isfinite(f):
        raise FloatingPointError("objective not finite at the initial value")
    steps, converged, gnorm = 0, False, np.inf
    for _ in range(max_iterations + 1):
        Gam = jac(theta)
        grad = 2.0 * Gam.T @ W @ G
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tolerance or f < 1e-30:
            converged = True
            break
        if steps == max_iterations:
            break
        A = Gam.T @ W @ Gam
        try:
            step = -np.linalg.lstsq(A, Gam.T @ W @ G, rcond=None)[0]
        except np.linalg.LinAlgError:
            step = -grad
        accepted = False
        for direction in (step, -grad / max(gnorm, 1e-300) * np.linalg.norm(step)):
            t = 1.0
            for _ in range(60):
                cand = theta + t * direction
                if system.within_bounds(cand):
                    try:
                        f_new, G_new, W_new = objective(cand)
                    except (ValueError, np.linalg.LinAlgError, FloatingPointError):
                        f_new = np.inf
                    if np.isfinite(f_new) and f_new < f:
                        accepted = True
                        break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            break
        theta, f, G, W = cand, f_new, G_new, W_new
        steps += 1
    return GMMEstimate(theta, f, label, steps, converged, gnorm)
