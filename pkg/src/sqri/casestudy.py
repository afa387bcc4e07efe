"""Income-by-age study: artificial deletion, every estimator, relative bias and CI width."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineConfig, full_estimator
from .csvio import read_case_csv
from .data import Dataset, rescale_unit
from .gmm import system_for, to_moment_convention
from .imputation import FractionalImputation
from .methods import (METHOD_KEYS, bootstrap_estimates, check_methods, point_estimate,
                      sqri_estimate)
from .quantile_fit import FitConfig
from .seeds import child_seed, seed_label
from .simulation import CASE_STUDY_MECHANISM, MissingMechanism, gen_missing
from .variance import estimate_variance, normal_ci, percentile_ci, sandwich_weighted

CASE_METHODS = ("sqri", "pfi", "hdfi", "npi", "resp")


def case_datasets(age, log_income, mechanism: MissingMechanism | None, seed):
    """``(complete, observed)``; ``mechanism=None`` deletes nothing."""
    x = rescale_unit(age)
    y = np.asarray(log_income, dtype=float)
    full = Dataset(x, y, np.ones(len(y), dtype=bool))
    if mechanism is None:
        return full, full
    delta = gen_missing(x[:, None], mechanism, child_seed(seed, 2))
    return full, Dataset(x, y, delta)


@dataclass
class CaseRow:
    method: str
    parameter: str
    estimate: float
    reference: float
    ci_normal: tuple | None = None
    ci_bootstrap: tuple | None = None

    @property
    def rbias_x100(self) -> float:
        return 100.0 * (self.estimate - self.reference) / self.reference

    @property
    def ci_width(self) -> float:
        """Bootstrap width when available, the normal width otherwise."""
        ci = self.ci_bootstrap or self.ci_normal
        return float("nan") if ci is None else ci[1] - ci[0]


@dataclass
class CaseStudyReport:
    rows: list
    reference: dict
    n: int
    missing_rate: float
    seed: str
    J: int
    B: int
    diagnostics: dict = field(default_factory=dict)

    def get(self, method, parameter) -> CaseRow:
        for row in self.rows:
            if (row.method, row.parameter) == (method, parameter):
                return row
        raise KeyError((method, parameter))

    def estimates(self, method) -> dict:
        return {r.parameter: r.estimate for r in self.rows if r.method == method}

    def table(self) -> str:
        """Human-readable layout: Est, RBias x100 and CI width per parameter."""
        params = list(self.reference)
        head = f"{'method':<8}" + "".join(f" | {p:>8} {'RBias':>7} {'width':>7}" for p in params)
        lines = [head, "-" * len(head)]
        lines.append(f"{'full':<8}" + "".join(f" | {self.reference[p]:8.4g} {'':>7} {'':>7}"
                                              for p in params))
        for m in dict.fromkeys(r.method for r in self.rows):
            if m == "full":
                continue
            cells = []
            for p in params:
                r = self.get(m, p)
                cells.append(f" | {r.estimate:8.4g} {r.rbias_x100:7.2f} {r.ci_width:7.3f}")
            lines.append(f"{m:<8}" + "".join(cells))
        lines.append(f"n={self.n} missing rate={self.missing_rate:.3f} J={self.J} B={self.B} "
                     f"seed={self.seed}")
        return "\n".join(lines)


def _full_normal(full: Dataset, level, names):
    # no missing units: the influence vectors are the moments themselves
    theta = to_moment_convention(full_estimator(full), full.n)
    imp = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)), method="full")
    var = estimate_variance(theta, full, imp)
    return normal_ci(full_estimator(full), sandwich_weighted(var), level, names)


def case_study(source, mechanism: MissingMechanism | None = CASE_STUDY_MECHANISM, J=100, B=0,
               seed=0, methods=CASE_METHODS, level=0.95,
               fit_config: FitConfig = FitConfig(),
               baseline_config: BaselineConfig = BaselineConfig()) -> CaseStudyReport:
    """Delete responses with ``mechanism`` and compare every method to the full sample.

    ``source`` is a CSV path or an ``(age, log_income)`` pair.  Bootstrap intervals are
    computed when ``B >= 50``; SQRI also reports its sandwich interval.
    """
    methods = check_methods(methods)
    age, inc = read_case_csv(source) if isinstance(source, (str, bytes)) or hasattr(
        source, "__fspath__") else source
    full, obs = case_datasets(age, inc, mechanism, seed)
    system = system_for(1)
    names, targets = system.names, system.targets
    theta_full = full_estimator(full)
    ref = {names[p]: float(theta_full[p]) for p in targets}
    rows = []
    full_ci = _full_normal(full, level, names)
    for p in targets:
        ci = full_ci[p]
        rows.append(CaseRow("full", names[p], theta_full[p], theta_full[p],
                            ci_normal=(ci.lower, ci.upper)))
    diagnostics = {}
    for m in methods:
        if m == "full":
            continue
        stream = child_seed(seed, 10 + METHOD_KEYS[m])
        normal = None
        if m == "sqri":
            rep = sqri_estimate(obs, J, stream, fit_config, inference=True, level=level)
            theta = rep.theta_hat
            normal = rep.normal_ci
            diagnostics["sqri_lambda"] = rep.diagnostics["lambda"]
        else:
            theta = point_estimate(m, obs, J, stream, fit_config, baseline_config)
        boot = None
        if B >= 50:
            est, ok = bootstrap_estimates(m, obs, J, B, child_seed(seed, 100 + METHOD_KEYS[m]),
                                          fit_config, baseline_config)
            boot = percentile_ci(est[ok], level, names)
        for p in targets:
            rows.append(CaseRow(m, names[p], float(theta[p]), ref[names[p]],
                                ci_normal=None if normal is None else
                                (normal[p].lower, normal[p].upper),
                                ci_bootstrap=None if boot is None else
                                (boot[p].lower, boot[p].upper)))
    return CaseStudyReport(rows, ref, full.n, obs.missing_rate, seed_label(seed), J, B,
                           diagnostics)
