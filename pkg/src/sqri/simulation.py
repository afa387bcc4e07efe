"""Simulation designs, true parameter values and the Monte Carlo harness."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .baselines import BaselineConfig
from .data import Dataset
from .gmm import system_for
from .methods import (METHOD_KEYS, StatisticalFailure, bootstrap_estimates, check_methods,
                      point_estimate, sqri_estimate)
from .quantile_fit import FitConfig
from .seeds import child_rng, child_seed
from .variance import percentile_ci

NOISE_SD = 0.1
COV_LOC, COV_SCALE = 0.5, 0.3
_TRUNC = stats.truncnorm((0.0 - COV_LOC) / COV_SCALE, (1.0 - COV_LOC) / COV_SCALE,
                         loc=COV_LOC, scale=COV_SCALE)


@dataclass(frozen=True)
class MissingMechanism:
    """Logistic response probability ``p(x) = expit(intercept + slopes . x)``."""

    intercept: float
    slopes: tuple

    def prob(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        eta = self.intercept + x @ np.asarray(self.slopes, dtype=float)
        return 1.0 / (1.0 + np.exp(-eta))


UNIVARIATE_MECHANISM = MissingMechanism(1.0, (0.5,))
BIVARIATE_MECHANISM = MissingMechanism(0.2, (1.0, 0.5))
CASE_STUDY_MECHANISM = MissingMechanism(1.0, (-0.5,))


def _bump2(x2):
    return 2.0 * np.exp(-10.0 * (x2 - 0.4) ** 2)


@dataclass(frozen=True)
class SimModel:
    name: str
    code: int
    d_x: int
    mean: Callable = field(repr=False)
    mechanism: MissingMechanism = UNIVARIATE_MECHANISM
    noise_sd: float = NOISE_SD


MODELS = {
    "linear": SimModel("linear", 0, 1, lambda x: 1.0 + 2.0 * (x[:, 0] - 0.5)),
    "bump": SimModel("bump", 1, 1, lambda x: 1.0 + 2.0 * (x[:, 0] - 0.5)
                     + np.exp(-30.0 * (x[:, 0] - 0.5) ** 2)),
    "cycle": SimModel("cycle", 2, 1, lambda x: 0.5 + 2.0 * x[:, 0] + np.sin(3.0 * np.pi * x[:, 0])),
    "bivariate": SimModel("bivariate", 3, 2, lambda x: 1.0 + 2.0 * (x[:, 0] - 0.5) + _bump2(x[:, 1]),
                          BIVARIATE_MECHANISM),
}


def get_model(name) -> SimModel:
    if isinstance(name, SimModel):
        return name
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {tuple(MODELS)}") from None


def mean_function(model, x) -> np.ndarray:
    model = get_model(model)
    x = np.asarray(x, dtype=float)
    return model.mean(x[:, None] if x.ndim == 1 else x)


def truncated_normal(size: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling from N(0.5, 0.3^2) restricted to [0, 1]."""
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        draw = rng.normal(COV_LOC, COV_SCALE, size=int(need / 0.85) + 16)
        keep = draw[(draw >= 0.0) & (draw <= 1.0)][:need]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


def gen_covariates(n: int, model, seed) -> np.ndarray:
    model = get_model(model)
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    return np.column_stack([truncated_normal(n, rng) for _ in range(model.d_x)])


def gen_response(x, model, seed) -> np.ndarray:
    model = get_model(model)
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    return model.mean(x) + model.noise_sd * rng.standard_normal(x.shape[0])


def gen_missing(x, mechanism: MissingMechanism, seed) -> np.ndarray:
    """Response indicators: ``delta_i ~ Bernoulli(p(x_i))``."""
    rng = np.random.default_rng(seed)
    return rng.random(np.shape(x)[0]) < mechanism.prob(x)


def simulate(model, n: int, seed):
    """``(complete, observed)`` datasets from independent child streams of ``seed``."""
    model = get_model(model)
    x = gen_covariates(n, model, child_seed(seed, 0))
    y = gen_response(x, model, child_seed(seed, 1))
    delta = gen_missing(x, model.mechanism, child_seed(seed, 2))
    return Dataset(x, y, np.ones(n, dtype=bool)), Dataset(x, y, delta)


def _expect(h):
    val, _ = integrate.quad(lambda t: h(t) * _TRUNC.pdf(t), 0.0, 1.0, epsabs=1e-14,
                            epsrel=1e-13, limit=200)
    return val


def theta0(model) -> np.ndarray:
    """Population parameter vector by one-dimensional quadrature.

    Covariates are independent and the noise is additive, so every moment reduces to
    integrals against the truncated-normal density.
    """
    model = get_model(model)
    mx = _expect(lambda t: t)
    vx = _expect(lambda t: (t - mx) ** 2)
    s2 = model.noise_sd ** 2
    if model.d_x == 1:
        m = lambda t: model.mean(np.atleast_1d(t)[:, None])[0]  # noqa: E731
        my = _expect(m)
        vy = _expect(lambda t: (m(t) - my) ** 2) + s2
        cov = _expect(lambda t: (t - mx) * (m(t) - my))
        return np.array([mx, my, np.sqrt(vx), np.sqrt(vy), cov / np.sqrt(vx * vy)])
    e_mean = _expect(_bump2)
    e_var = _expect(lambda t: (_bump2(t) - e_mean) ** 2)
    my = 1.0 + 2.0 * (mx - 0.5) + e_mean
    vy = 4.0 * vx + e_var + s2
    c1 = 2.0 * vx
    c2 = _expect(lambda t: (t - mx) * (_bump2(t) - e_mean))
    sx = np.sqrt(vx)
    return np.array([mx, mx, my, sx, sx, np.sqrt(vy), c1 / (sx * np.sqrt(vy)),
                     c2 / (sx * np.sqrt(vy))])


def theta0_monte_carlo(model, draws: int = 10**7, seed=20240101, chunk: int = 10**6):
    """Population moments from ``draws`` simulated units (independent check of quadrature)."""
    model = get_model(model)
    d = model.d_x
    sums = np.zeros(2 + 3 * d)
    done, k = 0, 0
    while done < draws:
        m = min(chunk, draws - done)
        x = gen_covariates(m, model, child_seed(seed, k, 0))
        y = gen_response(x, model, child_seed(seed, k, 1))
        sums += np.concatenate([x.sum(0), [y.sum()], (x * x).sum(0), [(y * y).sum()],
                                (x * y[:, None]).sum(0)])
        done += m
        k += 1
    mean = sums / draws
    mx, my = mean[:d], mean[d]
    vx = mean[d + 1:2 * d + 1] - mx ** 2
    vy = mean[2 * d + 1] - my ** 2
    cov = mean[2 * d + 2:] - mx * my
    return np.concatenate([mx, [my], np.sqrt(vx), [np.sqrt(vy)], cov / np.sqrt(vx * vy)])


def expected_missing_rate(mechanism: MissingMechanism, d_x: int = 1) -> float:
    """``1 - E p(X)`` under independent truncated-normal covariates."""
    if d_x == 1:
        return 1.0 - _expect(lambda t: mechanism.prob(np.array([t]))[0])
    val, _ = integrate.dblquad(
        lambda b, a: mechanism.prob(np.array([[a, b]]))[0] * _TRUNC.pdf(a) * _TRUNC.pdf(b),
        0.0, 1.0, 0.0, 1.0, epsabs=1e-12)
    return 1.0 - val


def max_workers(requested=None) -> int:
    cap = os.environ.get("SQRI_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"SQRI_THREADS must be an integer, got {cap!r}") from None
    return max(1, int(n))


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


_ERRORS = (ValueError, ArithmeticError, np.linalg.LinAlgError, FloatingPointError)


def _mc_replicate(args):
    model_name, r, n, J, seed, estimators, fit_config, baseline_config = args
    model = get_model(model_name)
    full, obs = simulate(model, n, child_seed(seed, model.code, r))
    out = {}
    for m in estimators:
        data = full if m == "full" else obs
        try:
            out[m] = point_estimate(m, data, J, child_seed(seed, model.code, r, 10 + METHOD_KEYS[m]),
                                    fit_config, baseline_config)
        except _ERRORS:
            out[m] = None
    return out, obs.missing_rate


@dataclass
class MCReport:
    """Relative bias and variance (both x100) per model, estimator and parameter."""

    rows: list
    seed: int
    replicates: int
    estimates: dict = field(repr=False, default_factory=dict)
    theta0: dict = field(repr=False, default_factory=dict)
    missing_rates: dict = field(repr=False, default_factory=dict)

    def get(self, model, estimator, parameter) -> dict:
        for row in self.rows:
            if (row["model"], row["estimator"], row["parameter"]) == (model, estimator, parameter):
                return row
        raise KeyError((model, estimator, parameter))

    def rbias(self, model, estimator, parameter) -> float:
        return self.get(model, estimator, parameter)["rbias_x100"]


def summarize(estimates: np.ndarray, truth: np.ndarray):
    """Relative bias and Monte Carlo variance, both x100, column-wise."""
    est = np.asarray(estimates, dtype=float)
    rbias = 100.0 * (est.mean(axis=0) - truth) / truth
    var = 100.0 * est.var(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
    return rbias, var


def run_mc(models, estimators, R=200, n=200, J=10, seed=0,
           fit_config: FitConfig = FitConfig(),
           baseline_config: BaselineConfig = BaselineConfig(), workers=None,
           max_failure=0.05) -> MCReport:
    """Monte Carlo relative bias and variance of each estimator on each model."""
    if R < 1:
        raise ValueError("R must be positive")
    estimators = check_methods(estimators)
    rows, store, truths, rates = [], {}, {}, {}
    for name in models:
        model = get_model(name)
        system = system_for(model.d_x)
        tgt = list(system.targets)
        truth = theta0(model)
        truths[model.name] = truth
        jobs = [(model.name, r, n, J, seed, estimators, fit_config, baseline_config)
                for r in range(R)]
        results = _map(_mc_replicate, jobs, max_workers(workers))
        rates[model.name] = np.array([mr for _, mr in results])
        for m in estimators:
            vals = [res[m] for res, _ in results]
            ok = [v for v in vals if v is not None]
            failed = len(vals) - len(ok)
            if failed > max_failure * R:
                raise StatisticalFailure(f"{failed} of {R} replicates failed for {m} on {model.name}")
            est = np.array(ok)[:, tgt]
            store[(model.name, m)] = est
            rb, var = summarize(est, truth[tgt])
            for k, p in enumerate(tgt):
                rows.append({"model": model.name, "estimator": m, "parameter": system.names[p],
                             "theta0": float(truth[p]), "mean": float(est[:, k].mean()),
                             "rbias_x100": float(rb[k]), "var_x100": float(var[k]),
                             "replicates": len(ok), "failures": failed})
    return MCReport(rows, seed, R, store, truths, rates)


def _coverage_replicate(args):
    model_name, r, n, J, B, seed, level, fit_config = args
    model = get_model(model_name)
    _, obs = simulate(model, n, child_seed(seed, model.code, r))
    system = system_for(model.d_x)
    try:
        rep = sqri_estimate(obs, J, child_seed(seed, model.code, r, 10 + METHOD_KEYS["sqri"]),
                            fit_config, inference=True, level=level)
    except _ERRORS:
        return None
    normal = [(ci.lower, ci.upper) for ci in rep.normal_ci]
    try:
        est, ok = bootstrap_estimates("sqri", obs, J, B, child_seed(seed, model.code, r, 100),
                                      fit_config, lam=rep.diagnostics["lambda"])
        boot = [(ci.lower, ci.upper) for ci in percentile_ci(est[ok], level, system.names)]
    except (StatisticalFailure,) + _ERRORS:
        boot = None
    return {"theta": rep.theta_hat, "normal": normal, "bootstrap": boot}


@dataclass
class CoverageReport:
    rows: list
    seed: int
    replicates: int
    intervals: dict = field(repr=False, default_factory=dict)

    def coverage(self, model, parameter, method) -> float:
        for row in self.rows:
            if (row["model"], row["parameter"], row["method"]) == (model, parameter, method):
                return row["coverage"]
        raise KeyError((model, parameter, method))


def interval_coverage(intervals, truth) -> float:
    """Fraction of ``(lower, upper)`` pairs containing ``truth``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        return float("nan")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


def coverage_study(models, R=200, n=200, J=10, B=200, seed=0, level=0.95,
                   fit_config: FitConfig = FitConfig(), workers=None,
                   max_failure=0.05) -> CoverageReport:
    """Coverage of normal and percentile-bootstrap intervals for SQRI-GMM."""
    rows, store = [], {}
    for name in models:
        model = get_model(name)
        system = system_for(model.d_x)
        truth = theta0(model)
        jobs = [(model.name, r, n, J, B, seed, level, fit_config) for r in range(R)]
        results = _map(_coverage_replicate, jobs, max_workers(workers))
        good = [res for res in results if res is not None]
        if len(results) - len(good) > max_failure * R:
            raise StatisticalFailure(f"too many failed replicates on {model.name}")
        boot_ok = [res for res in good if res["bootstrap"] is not None]
        if len(good) - len(boot_ok) > max_failure * R:
            raise StatisticalFailure(f"too many failed bootstraps on {model.name}")
        store[model.name] = good
        for p in system.targets:
            for method, pool in (("normal", good), ("bootstrap", boot_ok)):
                iv = [res[method][p] for res in pool]
                rows.append({"model": model.name, "parameter": system.names[p], "method": method,
                             "coverage": interval_coverage(iv, truth[p]),
                             "mean_width": float(np.mean(np.diff(np.asarray(iv), axis=1)))
                             if iv else float("nan"),
                             "replicates": len(pool), "level": level})
    return CoverageReport(rows, seed, R, store)


def missing_rate_check(mechanism: MissingMechanism, d_x=1, units=10**5, seed=0) -> float:
    """Simulated missing rate of ``mechanism`` over ``units`` draws."""
    rng = child_rng(seed, 0)
    x = np.column_stack([truncated_normal(units, rng) for _ in range(d_x)])
    return float(np.mean(~gen_missing(x, mechanism, child_seed(seed, 1))))
