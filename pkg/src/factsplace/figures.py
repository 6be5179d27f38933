"""Matplotlib renderings of sweep, convergence and utilization results.

Figures are written with the non-interactive Agg backend; PNG metadata is
pinned so reruns produce identical files.
"""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .optimizer import Jump, PlacementResult, ScenarioCheck, SweepPoint  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "factsplace",
}
_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata=_METADATA)
    plt.close(fig)


def sweep_figure(points: Sequence[SweepPoint], path, jumps: Sequence[Jump] = (), charged: bool = False) -> None:
    """Cost versus alpha/alpha_c (top) and final susceptance of each corrected line (bottom)."""
    with plt.rc_context(_STYLE):
        fig, (ax, bx) = plt.subplots(2, 1, figsize=(5.5, 5.0), sharex=True,
                                     gridspec_kw={"height_ratios": [3, 2]})
        ratio = np.array([p.ratio for p in points])
        cost = np.array([p.charged_cost if charged else p.cost for p in points])
        ax.plot(ratio, cost, "o-", ms=2.5, lw=1, color="k")
        for j in jumps:
            ax.axvspan(j.ratio_before, j.ratio_after, color="tab:red", alpha=0.25, lw=0)
        ax.set_ylabel("l1 correction" + (" (removal charged)" if charged else ""))
        lines = sorted({l for p in points for l in p.per_line_final_beta})
        for l in lines:
            y = np.array([p.per_line_final_beta.get(l, math.nan) for p in points])
            bx.plot(ratio, y, ".", ms=3, label=f"line {l}")
        bx.set_xlabel("alpha / alpha_c")
        bx.set_ylabel("final susceptance")
        if lines:
            bx.legend(ncol=4, frameon=False)
        _save(fig, path)


def convergence_figure(result: PlacementResult, path) -> None:
    """Cost and worst relative overload per outer iteration."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        it = [r.iteration for r in result.iterations]
        ax.plot(it, [r.cost for r in result.iterations], "o-", color="k", ms=3, label="cost")
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("l1 correction")
        bx = ax.twinx()
        viol = [max(r.max_violation, 1e-16) if math.isfinite(r.max_violation) else math.nan
                for r in result.iterations]
        bx.semilogy(it, viol, "s--", color="tab:red", ms=3, label="max overload")
        bx.set_ylabel("max relative overload")
        bx.spines["right"].set_visible(True)
        _save(fig, path)


def utilization_figure(checks: Sequence[ScenarioCheck], path) -> None:
    """Per-line utilization for each verified scenario with the limit drawn at 1."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        width = 0.8 / max(len(checks), 1)
        for i, c in enumerate(checks):
            x = np.arange(len(c.utilization)) + i * width
            ax.bar(x, c.utilization, width=width, label=c.label or f"scenario {i}")
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_xlabel("line")
        ax.set_ylabel("|flow| / limit")
        if len(checks) > 1:
            ax.legend(frameon=False)
        _save(fig, path)
