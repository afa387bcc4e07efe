"""Semiparametric quantile-regression imputation with GMM estimation."""

__version__ = "0.1.0"

from .baselines import BaselineConfig  # noqa: E402
from .data import Dataset, rescale_unit  # noqa: E402
from .gmm import BIVARIATE, FIVE, MomentSystem, complete_closed_form, system_for  # noqa: E402
from .imputation import FractionalImputation, draw_taus, sqri_impute  # noqa: E402
from .methods import (METHODS, StatisticalFailure, bootstrap_ci, point_estimate,  # noqa: E402
                      sqri_estimate)
from .quantile_fit import FitConfig, fit_quantile, predict_quantile  # noqa: E402
from .variance import KernelConfig, estimate_variance  # noqa: E402

__all__ = [
    "BIVARIATE", "FIVE", "METHODS", "BaselineConfig", "Dataset", "FitConfig",
    "FractionalImputation", "KernelConfig", "MomentSystem", "StatisticalFailure",
    "bootstrap_ci", "complete_closed_form", "draw_taus", "estimate_variance", "fit_quantile",
    "point_estimate", "predict_quantile", "rescale_unit", "sqri_estimate", "sqri_impute",
    "system_for",
]
