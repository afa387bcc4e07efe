"""GMM on fractionally completed data and the common report type."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .gmm import (GMMEstimate, MomentSystem, complete_closed_form, gmm_unweighted,
                  gmm_weighted, system_for, to_moment_convention)
from .imputation import FractionalImputation, unit_moments


class FractionalMoments:
    """``G_n`` and its Jacobian for one dataset and one fractional imputation."""

    def __init__(self, system: MomentSystem, data: Dataset, imp: FractionalImputation):
        self.system, self.data, self.imp = system, data, imp

    def units(self, theta) -> np.ndarray:
        return unit_moments(self.system, self.data, self.imp, theta)

    def __call__(self, theta) -> np.ndarray:
        return self.units(theta).mean(axis=0)

    def jacobian(self, theta) -> np.ndarray:
        """``Gamma(theta)``: the same fractional average applied to ``dg/dtheta``."""
        theta = np.asarray(theta, dtype=float)
        sys, data, imp = self.system, self.data, self.imp
        resp = data.respondents
        total = sys.dg_dtheta(data.y[resp], data.x[resp], theta).sum(axis=0)
        if imp.missing.size:
            xm = data.x[imp.missing]
            d = sys.dg_dtheta(imp.values, xm[:, None, :], theta)
            total = total + np.einsum("kj,kjab->ab", imp.fraction_weights(), d)
        if not np.all(np.isfinite(total)):
            raise FloatingPointError("non-finite moment derivative")
        return total / data.n


def completed_responses(data: Dataset, imp: FractionalImputation) -> np.ndarray:
    """Responses with each missing value replaced by its fractional mean."""
    y = np.array(data.y, dtype=float)
    if imp.missing.size:
        y[imp.missing] = imp.mean_values()
    return y


def initial_theta(data: Dataset, imp: FractionalImputation) -> np.ndarray:
    """Closed form on the mean-completed data, in the n-denominator convention."""
    theta = complete_closed_form(data.x, completed_responses(data, imp))
    return to_moment_convention(theta, data.n)


def fractional_gmm(data: Dataset, imp: FractionalImputation, weighted=True,
                   vg_evaluator=None, mode="cu", system=None) -> GMMEstimate:
    """Solve the fractional estimating equations; weighted unless told otherwise."""
    system = system or system_for(data.d_x)
    builder = FractionalMoments(system, data, imp)
    theta0 = initial_theta(data, imp)
    theta0 = np.clip(theta0, system.lower + 1e-12, system.upper - 1e-12)
    if not weighted:
        return gmm_unweighted(builder, system, theta0, builder.jacobian)
    if vg_evaluator is None:
        def vg_evaluator(theta):
            from .variance import v_g_hat
            return v_g_hat(theta, data, imp)
    return gmm_weighted(builder, system, theta0, vg_evaluator, builder.jacobian, mode=mode)


@dataclass
class ConfidenceInterval:
    index: int
    name: str
    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"interval bounds out of order for {self.name}")

    def contains(self, value) -> bool:
        return bool(self.lower <= value <= self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass
class EstimateReport:
    """Point estimates with whatever uncertainty the method supports."""

    method: str
    names: tuple
    theta_hat: np.ndarray
    targets: tuple
    standard_errors: np.ndarray | None = None
    normal_ci: list = field(default_factory=list)
    bootstrap_ci: list = field(default_factory=list)
    variance: object = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def target_values(self) -> np.ndarray:
        return np.asarray(self.theta_hat)[list(self.targets)]

    def target_names(self) -> tuple:
        return tuple(self.names[k] for k in self.targets)
