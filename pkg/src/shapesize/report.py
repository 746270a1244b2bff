"""Comparison figures for reproduction runs.

One PNG per study: the left panel shows empirical bias per parameter for
this run against the reference values, with the run's tolerance band;
the right panel shows the spread summaries (ESE, and ASE when a
bootstrap ran) next to the reference. Rendering is headless and file
based; figures accompany the delimited output, they never replace it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .inference import MonteCarloTable

_PNG_METADATA = {"Software": "shapesize"}


def _cell_labels(rows):
    return [f"{r['estimator']}\n{r['parameter']}" for r in rows]


def render_comparison_figure(table: MonteCarloTable, comparison_rows: list, path) -> None:
    """Write the bias/spread comparison panels for one study."""
    rows = comparison_rows
    if not rows:
        raise ValueError("no comparison rows to draw")
    labels = _cell_labels(rows)
    xs = np.arange(len(rows))

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    fig.suptitle(
        f"{table.scenario}, n={table.n}, frailty={table.frailty}, "
        f"{table.replicates} replicates, B={table.B}"
    )

    width = 0.36
    ours = [1000.0 * r["bias"] if r["bias"] is not None else np.nan for r in rows]
    ref = [1000.0 * r["ref_bias"] for r in rows]
    tol = [1000.0 * r["bias_tol"] for r in rows]
    ax1.bar(xs - width / 2, ours, width, label="this run", color="#4878d0")
    ax1.bar(xs + width / 2, ref, width, label="reference", color="#ee854a")
    ax1.plot(xs, tol, ls="none", marker="_", ms=16, color="0.3")
    ax1.plot(xs, [-t for t in tol], ls="none", marker="_", ms=16, color="0.3")
    ax1.axhline(0.0, color="0.6", lw=0.8)
    ax1.set_title("bias (x1000), dashes mark the tolerance band")
    ax1.set_xticks(xs, labels, fontsize=8)
    ax1.legend(fontsize=8)

    ours_e = [1000.0 * r["ese"] if r["ese"] is not None else np.nan for r in rows]
    ref_e = [1000.0 * r["ref_ese"] for r in rows]
    ours_a = [1000.0 * r["ase"] if r["ase"] is not None else np.nan for r in rows]
    w2 = 0.27
    ax2.bar(xs - w2, ours_e, w2, label="ESE this run", color="#4878d0")
    ax2.bar(xs, ref_e, w2, label="ESE reference", color="#ee854a")
    if np.any(np.isfinite(ours_a)):
        ax2.bar(xs + w2, ours_a, w2, label="ASE this run", color="#6acc64")
    ax2.set_title("spread (x1000)")
    ax2.set_xticks(xs, labels, fontsize=8)
    ax2.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_METADATA)
    plt.close(fig)


def render_table_figure(table: MonteCarloTable, path) -> None:
    """Bias with ESE whiskers for a study without reference cells."""
    rows = [r for r in table.rows]
    if not rows:
        raise ValueError("empty table")
    xs = np.arange(len(rows))
    labels = [f"{r['estimator']}\n{r['parameter']}" for r in rows]
    bias = [1000.0 * r["bias"] if r["bias"] is not None else np.nan for r in rows]
    ese = [1000.0 * r["ese"] if r["ese"] is not None else 0.0 for r in rows]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(xs, bias, 0.5, yerr=ese, capsize=4, color="#4878d0")
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_title(
        f"{table.scenario}, n={table.n}: bias (x1000) with ESE whiskers"
    )
    ax.set_xticks(xs, labels, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_METADATA)
    plt.close(fig)
