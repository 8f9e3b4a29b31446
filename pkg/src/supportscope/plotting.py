"""Figures for reports: Pass@K curves per modality and before/after deltas per regime."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from supportscope.recipe import REGIMES, DeltaReport  # noqa: E402
from supportscope.stats import SupportEstimate  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.dpi": 150,
}
# no timestamps/software tags, so re-rendering unchanged inputs is byte-identical
PNG_METADATA = {"Software": None}


def plot_pass_at_k(estimates: Sequence[SupportEstimate], path) -> None:
    groups: dict[str, list[SupportEstimate]] = {}
    for e in estimates:
        if e.S:
            groups.setdefault(e.modality or "unassigned", []).append(e)
    if not groups:
        return
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups), 2.8), squeeze=False)
        for ax, (group, ests) in zip(axes[0], groups.items()):
            for e in ests:
                ks = sorted(e.S)
                (line,) = ax.plot(ks, [e.S[k] for k in ks], marker="o", ms=3, label=e.task_id)
                ax.axhline(e.A, color=line.get_color(), ls=":", lw=0.8)
                lo = [e.ci[f"pass@{k}"][0] for k in ks if f"pass@{k}" in e.ci]
                hi = [e.ci[f"pass@{k}"][1] for k in ks if f"pass@{k}" in e.ci]
                if len(lo) == len(ks):
                    ax.fill_between(ks, lo, hi, color=line.get_color(), alpha=0.15, lw=0)
            ax.set_xscale("log", base=2)
            ax.set_xticks(sorted({k for e in ests for k in e.S}))
            ax.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
            ax.set_ylim(0, 1.02)
            ax.set_title(group)
            ax.set_xlabel("K")
            ax.legend(fontsize=7)
        axes[0][0].set_ylabel("Pass@K (dotted: Acc@1)")
        fig.tight_layout()
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)


def plot_deltas(deltas: Sequence[DeltaReport], path) -> None:
    if not deltas:
        return
    ordered = sorted(deltas, key=lambda d: (REGIMES.index(d.regime), d.train_task, d.eval_task))
    labels = [f"{d.train_task}→{d.eval_task}" for d in ordered]
    x = range(len(ordered))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.9 * len(ordered) + 1.5), 3.0))
        ax.bar([i - 0.2 for i in x], [d.delta_a for d in ordered], width=0.4, label="ΔAcc@1")
        ax.bar([i + 0.2 for i in x], [d.delta_s_k for d in ordered], width=0.4,
               label=f"ΔPass@{ordered[0].k_ref}")
        for i, d in enumerate(ordered):
            if d.collapse_flag:
                ax.annotate("collapse", (i + 0.2, d.delta_s_k), ha="center", va="top", fontsize=6, color="crimson")
        ax.axhline(0, color="black", lw=0.6)
        ax.set_xticks(list(x))
        ax.set_xticklabels([f"{lbl}\n{d.regime.lower().replace('_', '-')}" for lbl, d in zip(labels, ordered)],
                           fontsize=6)
        ax.set_ylabel("after − before")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)
