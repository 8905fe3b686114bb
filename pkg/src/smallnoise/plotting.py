"""Optional PNG rendering of the plot-data rows (means with mean theoretical 95% CIs)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_estimates(summary, dest, truth: dict | None = None) -> Path:
    """One panel per parameter; estimator label on x, one marker series per n."""
    from .harness import plot_rows, true_values, ExperimentConfig, estimator_param_names

    rows = plot_rows(summary)
    if not rows:
        # nothing labelled: fall back to every row, indexed by estimator order
        kinds = list(dict.fromkeys(r.kind for r in summary.rows))
        rows = [{"label": kinds.index(r.kind), "kind": r.kind, "n": r.n, "param": r.param, "mean": r.mean,
                 "ci_lo": r.mean - r.ci_halfwidth, "ci_hi": r.mean + r.ci_halfwidth} for r in summary.rows]
    if truth is None and summary.config:
        cfg = ExperimentConfig(**summary.config)
        truth = {}
        for name in cfg.estimators:
            truth.update(zip(estimator_param_names(cfg, name), true_values(cfg, name)))
    params = list(dict.fromkeys(r["param"] for r in rows))
    ns = sorted({r["n"] for r in rows})
    fig, axes = plt.subplots(1, len(params), figsize=(3.2 * len(params), 3.0), squeeze=False)
    width = 0.6 / max(len(ns), 1)
    for ax, param in zip(axes[0], params):
        for i, n in enumerate(ns):
            sel = [r for r in rows if r["param"] == param and r["n"] == n]
            if not sel:
                continue
            x = np.array([r["label"] for r in sel], dtype=float) + (i - (len(ns) - 1) / 2) * width
            mean = np.array([r["mean"] for r in sel])
            lo = np.array([r["ci_lo"] for r in sel])
            hi = np.array([r["ci_hi"] for r in sel])
            err = np.vstack([mean - lo, hi - mean])
            err = np.where(np.isfinite(err), err, 0.0)
            ax.errorbar(x, mean, yerr=err, fmt="o", ms=3, capsize=2, lw=0.8, label=f"n={n}")
        if truth and param in truth:
            ax.axhline(truth[param], color="0.4", lw=0.8, ls="--")
        ax.set_title(param)
        ax.set_xlabel("estimator")
        ax.set_xticks(sorted({r["label"] for r in rows if r["param"] == param}))
    axes[0][0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    dest = Path(dest)
    fig.savefig(dest, dpi=120)
    plt.close(fig)
    return dest
