"""Static SVG figures for Monte Carlo and coverage reports."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .csvio import atomic_write_bytes  # noqa: E402

_STYLE = {
    "svg.hashsalt": "sqri",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "legend.frameon": False,
}


def bias_ratios(rows, reference="sqri") -> dict:
    """``|RBias(m) / RBias(reference)|`` keyed by ``(model, parameter, estimator)``."""
    base = {(r["model"], r["parameter"]): r["rbias_x100"] for r in rows
            if r["estimator"] == reference}
    out = {}
    for r in rows:
        key = (r["model"], r["parameter"])
        if r["estimator"] == reference or key not in base:
            continue
        den = abs(base[key])
        out[key + (r["estimator"],)] = abs(r["rbias_x100"]) / den if den > 0 else np.inf
    return out


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_bias_ratios(rows, path, reference="sqri", skip=("full",)):
    """One panel per model; bars above the dashed line favor ``reference``."""
    ratios = bias_ratios(rows, reference)
    models = list(dict.fromkeys(k[0] for k in ratios))
    if not models:
        raise ValueError(f"no estimators to compare against {reference}")
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(models), figsize=(3.2 * len(models), 3.0),
                                 squeeze=False, sharey=True)
        for ax, model in zip(axes[0], models):
            params = list(dict.fromkeys(k[1] for k in ratios if k[0] == model))
            others = [m for m in dict.fromkeys(k[2] for k in ratios if k[0] == model)
                      if m not in skip]
            width = 0.8 / max(len(others), 1)
            pos = np.arange(len(params))
            for j, m in enumerate(others):
                vals = [ratios.get((model, p, m), np.nan) for p in params]
                vals = np.clip(vals, 1e-3, 1e3)
                ax.bar(pos + (j - (len(others) - 1) / 2) * width, vals, width, label=m)
            ax.axhline(1.0, color="k", ls="--", lw=0.8)
            ax.set_yscale("log")
            ax.set_xticks(pos)
            ax.set_xticklabels(params)
            ax.set_title(model)
        axes[0, 0].set_ylabel(f"|RBias(method) / RBias({reference})|")
        axes[0, -1].legend(fontsize=7, loc="upper right")
        _save(fig, path)


def plot_coverage(rows, path, level=0.95):
    """Normal and bootstrap coverage per model and parameter against the nominal level."""
    models = list(dict.fromkeys(r["model"] for r in rows))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(models), figsize=(3.2 * len(models), 3.0),
                                 squeeze=False, sharey=True)
        for ax, model in zip(axes[0], models):
            sub = [r for r in rows if r["model"] == model]
            params = list(dict.fromkeys(r["parameter"] for r in sub))
            pos = np.arange(len(params))
            for j, method in enumerate(("normal", "bootstrap")):
                vals = [next((r["coverage"] for r in sub
                              if r["parameter"] == p and r["method"] == method), np.nan)
                        for p in params]
                ax.bar(pos + (j - 0.5) * 0.38, vals, 0.38, label=method)
            ax.axhline(level, color="k", ls="--", lw=0.8)
            ax.set_ylim(0.5, 1.0)
            ax.set_xticks(pos)
            ax.set_xticklabels(params)
            ax.set_title(model)
        axes[0, 0].set_ylabel("coverage")
        axes[0, -1].legend(fontsize=7, loc="lower right")
        _save(fig, path)


def plot_case_rbias(reports, path):
    """Mean |RBias| x100 per method and parameter over deletion seeds."""
    params = list(reports[0].reference)
    methods = [m for m in dict.fromkeys(r.method for r in reports[0].rows) if m != "full"]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(params) * max(len(methods), 1) / 3, 3.0))
        width = 0.8 / max(len(methods), 1)
        pos = np.arange(len(params))
        for j, m in enumerate(methods):
            vals = [np.mean([abs(rep.get(m, p).rbias_x100) for rep in reports]) for p in params]
            ax.bar(pos + (j - (len(methods) - 1) / 2) * width, vals, width, label=m)
        ax.set_xticks(pos)
        ax.set_xticklabels(params)
        ax.set_ylabel("|RBias| x100")
        ax.legend(fontsize=7)
        _save(fig, path)
