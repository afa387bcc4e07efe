"""Command-line entry point: simulate, impute, estimate, casestudy.

Exit status is 0 on success, 2 for configuration or input errors and 3 when the
statistics fail (too many failed replicates, too few respondents, singular systems).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys

import numpy as np

from . import __version__
from .baselines import BaselineConfig, full_estimator, resp_estimator
from .casestudy import case_study
from .config import ConfigError, RunConfig, load_config
from .csvio import SchemaError, atomic_write_text, read_dataset_csv, write_csv
from .data import Dataset
from .gmm import system_for, to_moment_convention
from .imputation import FractionalImputation, sqri_impute
from .methods import (METHOD_KEYS, StatisticalFailure, bootstrap_estimates, point_estimate,
                      sqri_estimate)
from .quantile_fit import FitConfig
from .seeds import child_seed
from .simulation import CASE_STUDY_MECHANISM, coverage_study, run_mc
from .variance import (KernelConfig, estimate_variance, normal_ci, percentile_ci,
                       sandwich_weighted)

EXIT_OK, EXIT_CONFIG, EXIT_STATISTICAL = 0, 2, 3

_STAT_ERRORS = (StatisticalFailure, ArithmeticError, np.linalg.LinAlgError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--replicates", type=int, metavar="N")
    common.add_argument("--imputations", type=int, metavar="J")
    common.add_argument("--bootstrap", type=int, metavar="B")
    common.add_argument("--model", metavar="NAME", help="comma list of simulation models")
    common.add_argument("--estimators", metavar="LIST", help="comma list of estimators")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--full-scale", action="store_true", default=None,
                        help="R=1000, B=400")
    parser = _Parser(prog="sqri", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sqri {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="Monte Carlo bias/variance study")
    for name, text in (("impute", "write SQRI imputations in long format"),
                       ("estimate", "estimate parameters from a data file"),
                       ("casestudy", "deletion study on age/log-income data")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("data", metavar="DATA_CSV")
    return parser


def _config_from_args(args) -> RunConfig:
    # --imputations sets the case-study J for the casestudy command
    j_key = "case_imputations" if args.command == "casestudy" else "imputations"
    return load_config(args.config, seed=args.seed, replicates=args.replicates,
                       bootstrap=args.bootstrap, **{j_key: args.imputations},
                       models=args.model, estimators=args.estimators, out=args.out,
                       full_scale=args.full_scale)


def fit_config_of(cfg: RunConfig) -> FitConfig:
    return FitConfig(lambda_grid=cfg.lambda_grid or None)


def baseline_config_of(cfg: RunConfig) -> BaselineConfig:
    return BaselineConfig(donor_count=cfg.donor_count,
                          kernel_bandwidth=cfg.npi_bandwidth or None)


def kernel_of(cfg: RunConfig, d_x: int):
    if cfg.bandwidth_a > 0:
        return KernelConfig(cfg.bandwidth_a, (cfg.bandwidth_b,) * d_x)
    return None


def method_stream(cfg: RunConfig, method: str):
    return child_seed(cfg.seed, 10 + METHOD_KEYS[method])


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, data_path=None) -> str:
    """Config text plus provenance comments; reading it back reproduces the run."""
    import matplotlib
    import scipy
    lines = [f"# sqri run manifest: {command}",
             f"# versions: sqri {__version__}, numpy {np.__version__}, scipy {scipy.__version__}, "
             f"matplotlib {matplotlib.__version__}, python {platform.python_version()}",
             f"# master seed {cfg.seed}; method streams use keys 10 + "
             + ", ".join(f"{m}={k}" for m, k in METHOD_KEYS.items()),
             f"# effective replicates {cfg.effective_replicates}, bootstrap "
             f"{cfg.effective_bootstrap}"]
    if data_path is not None:
        lines.append(f"# data {os.path.abspath(data_path)} sha256 {_file_digest(data_path)}")
    path = os.path.join(cfg.out, "manifest.cfg")
    atomic_write_text(path, "\n".join(lines) + "\n" + cfg.to_text())
    return path


def cmd_simulate(cfg: RunConfig, stdout=sys.stdout) -> int:
    from .plotting import plot_bias_ratios, plot_coverage
    R, B = cfg.effective_replicates, cfg.effective_bootstrap
    fit, base = fit_config_of(cfg), baseline_config_of(cfg)
    report = run_mc(cfg.models, cfg.estimators, R, cfg.n, cfg.imputations, cfg.seed, fit, base)
    cols = ["model", "estimator", "parameter", "theta0", "mean", "rbias_x100", "var_x100",
            "replicates", "failures"]
    write_csv(os.path.join(cfg.out, "mc_report.csv"), cols,
              [[r[c] for c in cols] for r in report.rows])
    print(f"{'model':<10} {'estimator':<9} {'parameter':<8} {'RBias x100':>10} {'Var x100':>9}",
          file=stdout)
    for r in report.rows:
        print(f"{r['model']:<10} {r['estimator']:<9} {r['parameter']:<8} "
              f"{r['rbias_x100']:10.3f} {r['var_x100']:9.4f}", file=stdout)
    if "sqri" in cfg.estimators and len(set(cfg.estimators) - {"sqri", "full"}):
        plot_bias_ratios(report.rows, os.path.join(cfg.out, "figures", "bias_ratio.svg"))
    if cfg.coverage:
        if B < 50:
            raise ConfigError("coverage needs bootstrap >= 50")
        cov = coverage_study(cfg.models, R, cfg.n, cfg.imputations, B, cfg.seed, cfg.level, fit)
        ccols = ["model", "parameter", "method", "coverage", "mean_width", "replicates", "level"]
        write_csv(os.path.join(cfg.out, "coverage.csv"), ccols,
                  [[r[c] for c in ccols] for r in cov.rows])
        for r in cov.rows:
            print(f"coverage {r['model']:<10} {r['parameter']:<8} {r['method']:<9} "
                  f"{r['coverage']:.3f}", file=stdout)
        plot_coverage(cov.rows, os.path.join(cfg.out, "figures", "coverage.svg"), cfg.level)
    write_manifest(cfg, "simulate")
    return EXIT_OK


def imputation_rows(imp: FractionalImputation):
    rows = []
    for k, i in enumerate(imp.missing):
        for j in range(imp.J):
            rows.append([int(i), j, float(imp.taus[j]), float(imp.values[k, j])])
    return rows


def cmd_impute(data_path, cfg: RunConfig, stdout=sys.stdout) -> int:
    data = read_dataset_csv(data_path)
    imp = sqri_impute(data, fit_config_of(cfg), cfg.imputations, method_stream(cfg, "sqri"))
    write_csv(os.path.join(cfg.out, "imputations.csv"), ["row_id", "j", "tau_j", "y_star"],
              imputation_rows(imp))
    write_manifest(cfg, "impute", data_path)
    print(f"imputed {imp.missing.size} missing rows x {imp.J} values "
          f"(lambda {imp.lam if imp.lam is not None else 'per tau'})", file=stdout)
    return EXIT_OK


def read_imputation_csv(path, data: Dataset):
    """``(taus, values)`` from a long-format imputation file; validated against ``data``."""
    import csv
    entries = {}
    taus = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["row_id", "j", "tau_j", "y_star"]:
            raise SchemaError(f"{path}: line 1: header must be row_id,j,tau_j,y_star")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j, tau, y = int(row[0]), int(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise SchemaError(f"{path}: line {lineno}: malformed row") from None
            if i < 0 or i >= data.n or data.delta[i]:
                raise SchemaError(f"{path}: line {lineno}: row_id {i} is not a missing unit")
            if taus.setdefault(j, tau) != tau:
                raise SchemaError(f"{path}: line {lineno}: tau_j differs across rows for j={j}")
            entries[(i, j)] = y
    miss = data.missing
    J = len(taus)
    if miss.size and (sorted(taus) != list(range(J)) or len(entries) != miss.size * J):
        raise SchemaError(f"{path}: expected {J} values for each of {miss.size} missing rows")
    values = np.array([[entries[(int(i), j)] for j in range(J)] for i in miss]).reshape(
        miss.size, J)
    return np.array([taus[j] for j in range(J)]), values


def _intervals_row(names, theta, se, normal, boot):
    rows = []
    for k, name in enumerate(names):
        n_ci = normal[k] if normal else None
        b_ci = boot[k] if boot else None
        rows.append([name, theta[k], "" if se is None else se[k],
                     "" if n_ci is None else n_ci.lower, "" if n_ci is None else n_ci.upper,
                     "" if b_ci is None else b_ci.lower, "" if b_ci is None else b_ci.upper])
    return rows


def estimate_report(data: Dataset, cfg: RunConfig, imp=None):
    """``(names, theta, se, normal_cis, bootstrap_cis)`` for ``cfg.method``."""
    method = cfg.method
    system = system_for(data.d_x)
    names = system.names
    fit, base = fit_config_of(cfg), baseline_config_of(cfg)
    J, B = cfg.imputations, cfg.effective_bootstrap
    se = normal = boot = None
    if method == "sqri":
        rep = sqri_estimate(data, J, method_stream(cfg, "sqri"), fit, True, cfg.level,
                            kernel_of(cfg, data.d_x), imp=imp)
        theta, se, normal = rep.theta_hat, rep.standard_errors, rep.normal_ci
    elif method in ("full", "resp"):
        sub = data if method == "full" else data.subset(data.respondents)
        theta = full_estimator(data) if method == "full" else resp_estimator(data)
        empty = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)), method=method)
        var = estimate_variance(to_moment_convention(theta, sub.n), sub, empty)
        sigma = sandwich_weighted(var)
        se = np.sqrt(np.clip(np.diag(sigma), 0, None))
        normal = normal_ci(theta, sigma, cfg.level, names)
    else:
        theta = point_estimate(method, data, J, method_stream(cfg, method), fit, base)
    if B >= 50:
        est, ok = bootstrap_estimates(method, data, J, B, child_seed(cfg.seed, 100), fit, base)
        boot = percentile_ci(est[ok], cfg.level, names)
        if se is None:
            se = np.std(est[ok], axis=0, ddof=1)
    return names, np.asarray(theta), se, normal, boot


def cmd_estimate(data_path, cfg: RunConfig, stdout=sys.stdout) -> int:
    data = read_dataset_csv(data_path)
    imp = None
    if cfg.imputed:
        if cfg.method != "sqri":
            raise ConfigError("imputed files carry SQRI draws; use method = sqri")
        taus, values = read_imputation_csv(cfg.imputed, data)
        imp = sqri_impute(data, fit_config_of(cfg), taus=taus)
        if data.missing.size and not np.allclose(imp.values, values, rtol=1e-12, atol=1e-12):
            raise SchemaError(f"{cfg.imputed}: imputed values do not match a refit at the "
                              f"recorded tau_j")
    names, theta, se, normal, boot = estimate_report(data, cfg, imp)
    header = ["parameter", "estimate", "std_error", "normal_lower", "normal_upper",
              "bootstrap_lower", "bootstrap_upper"]
    rows = _intervals_row(names, theta, se, normal, boot)
    write_csv(os.path.join(cfg.out, "estimates.csv"), header, rows)
    lines = [f"method {cfg.method}, n={data.n}, missing rate {data.missing_rate:.3f}",
             f"{'parameter':<9} {'estimate':>9} {'s.e.':>8} {'normal CI':>21} "
             f"{'bootstrap CI':>21}"]
    for k, name in enumerate(names):
        s = "" if se is None else f"{se[k]:.4f}"
        n_ci = f"[{normal[k].lower:.4f}, {normal[k].upper:.4f}]" if normal else "-"
        b_ci = f"[{boot[k].lower:.4f}, {boot[k].upper:.4f}]" if boot else "-"
        lines.append(f"{name:<9} {theta[k]:9.4f} {s:>8} {n_ci:>21} {b_ci:>21}")
    text = "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(cfg.out, "estimates.txt"), text)
    stdout.write(text)
    write_manifest(cfg, "estimate", data_path)
    return EXIT_OK


def cmd_casestudy(data_path, cfg: RunConfig, stdout=sys.stdout) -> int:
    from .plotting import plot_case_rbias
    mechanism = CASE_STUDY_MECHANISM if cfg.mechanism == "logistic" else None
    methods = tuple(m for m in cfg.estimators if m != "full")
    B = cfg.effective_bootstrap
    header = ["deletion_seed", "method", "parameter", "estimate", "reference", "rbias_x100",
              "ci_width", "normal_lower", "normal_upper", "bootstrap_lower", "bootstrap_upper",
              "missing_rate"]
    rows, texts, reports = [], [], []
    for k in range(cfg.case_seeds):
        rep = case_study(data_path, mechanism, cfg.case_imputations, B, child_seed(cfg.seed, k),
                         methods, cfg.level, fit_config_of(cfg), baseline_config_of(cfg))
        reports.append(rep)
        for r in rep.rows:
            nl, nu = r.ci_normal or ("", "")
            bl, bu = r.ci_bootstrap or ("", "")
            rows.append([k, r.method, r.parameter, r.estimate, r.reference, r.rbias_x100,
                         r.ci_width, nl, nu, bl, bu, rep.missing_rate])
        texts.append(f"deletion seed {k}\n{rep.table()}")
    write_csv(os.path.join(cfg.out, "casestudy.csv"), header, rows)
    text = "\n\n".join(texts) + "\n"
    atomic_write_text(os.path.join(cfg.out, "casestudy.txt"), text)
    plot_case_rbias(reports, os.path.join(cfg.out, "figures", "casestudy_rbias.svg"))
    stdout.write(text)
    write_manifest(cfg, "casestudy", data_path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "impute":
            return cmd_impute(args.data, cfg)
        if args.command == "estimate":
            return cmd_estimate(args.data, cfg)
        return cmd_casestudy(args.data, cfg)
    except (ConfigError, SchemaError, OSError) as exc:
        print(f"sqri: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _STAT_ERRORS as exc:
        print(f"sqri: statistical failure: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except ValueError as exc:
        # estimator preconditions (too few respondents, incomplete data for full, ...)
        print(f"sqri: statistical failure: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL


if __name__ == "__main__":
    raise SystemExit(main())
