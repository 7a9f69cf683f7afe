"""Static SVG figures: selection heatmaps and FDR/power curves."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .multi import SelectionMatrix, heatmap_order  # noqa: E402

# fixed salt and no date so the same figure gives the same bytes
_RC = {"svg.hashsalt": "mixknock", "svg.fonttype": "path"}
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def heatmap_svg(mat: SelectionMatrix, path, order: str = "by-frequency") -> None:
    """Variables (rows) by knockoff draws (columns), selected cells dark."""
    idx = heatmap_order(mat, order)
    with plt.rc_context(_RC):
        h = max(2.0, 0.18 * len(idx) + 1.0)
        fig, ax = plt.subplots(figsize=(8, h))
        ax.imshow(mat.indicators[:, idx].T, aspect="auto", cmap="Greys", vmin=0, vmax=1,
                  interpolation="nearest")
        ax.set_yticks(range(len(idx)))
        ax.set_yticklabels([mat.variable_names[j] for j in idx], fontsize=6)
        ax.set_xlabel("knockoff draw")
        ax.set_ylabel("variable")
        fig.tight_layout()
        _save(fig, path)


def curves_svg(summary: list[dict], path, metric: str = "mean_fdp", q: float | None = None) -> None:
    """Mean FDP or TPP against amplitude, one line per method and setting."""
    se = metric.replace("mean", "se")
    lines: dict = {}
    for row in summary:
        key = (row["method"], row["cov_kind"], row["rho"], row["p_b"])
        lines.setdefault(key, []).append((row["a"], row[metric], row[se]))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in sorted(lines, key=str):
            pts = sorted(lines[key])
            a, m, s = (np.array(v, dtype=float) for v in zip(*pts))
            label = f"{key[0]} ({key[1]}, rho={key[2]}, p_b={key[3]})"
            ax.errorbar(a, m, yerr=2 * np.nan_to_num(s), marker="o", capsize=2, label=label)
        if q is not None and metric == "mean_fdp":
            ax.axhline(q, color="k", linestyle="--", linewidth=0.8)
        ax.set_xlabel("amplitude a")
        ax.set_ylabel("FDP" if metric == "mean_fdp" else "TPP")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(fontsize=6)
        fig.tight_layout()
        _save(fig, path)
