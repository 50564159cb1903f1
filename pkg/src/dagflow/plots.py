"""Figure rendering for the report paths.

Every chart is derived from the same rows the CSV emitters write, so the
figures are a view of the delimited output, never a separate computation.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_POLICY_STYLE = {
    "seq_flex": ("#888888", "SEQ-Flex"),
    "seq_overflow": ("#4477aa", "SEQ-Overflow"),
    "gogeta_df": ("#ee7733", "df"),
    "gogeta_map": ("#cc3311", "map"),
    "ideal": ("#228833", "Ideal"),
}


def render_traffic_figures(rows: list[dict], outdir: str) -> list[str]:
    """One DRAM bar chart per dataset: panels per SRAM size, groups per N."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    datasets = sorted({r["dataset"] for r in rows})
    for dataset in datasets:
        sub = [r for r in rows if r["dataset"] == dataset]
        sram_sizes = sorted({r["sram_mb"] for r in sub})
        n_values = sorted({r["N"] for r in sub})
        policies = [p for p in _POLICY_STYLE if any(r["policy"] == p for r in sub)]
        fig, axes = plt.subplots(1, len(sram_sizes),
                                 figsize=(3.2 * len(sram_sizes), 2.8),
                                 sharey=True, squeeze=False)
        for ax, sram in zip(axes[0], sram_sizes):
            width = 0.8 / len(policies)
            for j, policy in enumerate(policies):
                xs, ys = [], []
                for i, n in enumerate(n_values):
                    for r in sub:
                        if (r["sram_mb"], r["N"], r["policy"]) == (sram, n, policy):
                            xs.append(i + (j - len(policies) / 2 + 0.5) * width)
                            ys.append(r["dram_mb"])
                color, label = _POLICY_STYLE[policy]
                ax.bar(xs, ys, width=width, color=color, label=label)
            ax.set_xticks(range(len(n_values)))
            ax.set_xticklabels([str(n) for n in n_values])
            ax.set_xlabel("N")
            ax.set_title(f"{sram} MB")
            ax.grid(axis="y", alpha=0.3)
        axes[0][0].set_ylabel("DRAM (MB)")
        axes[0][-1].legend(fontsize=7)
        fig.suptitle(dataset)
        fig.tight_layout()
        path = os.path.join(outdir, f"dram_{dataset}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def render_noc_figure(rows: list[dict], outdir: str, n_value: int = 8) -> str | None:
    """Inter-cluster traversals, whole-tensor vs sliced mapping, at one N."""
    sub = [r for r in rows
           if r["policy"] in ("gogeta_df", "gogeta_map") and r["N"] == n_value]
    if not sub:
        return None
    os.makedirs(outdir, exist_ok=True)
    datasets = sorted({r["dataset"] for r in sub})
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(datasets), 2.8))
    for j, policy in enumerate(("gogeta_df", "gogeta_map")):
        ys = []
        for d in datasets:
            vals = [r["noc_kb"] for r in sub if r["dataset"] == d and r["policy"] == policy]
            ys.append(vals[0] if vals else 0.0)
        color, label = _POLICY_STYLE[policy]
        ax.bar([i + (j - 0.5) * 0.4 for i in range(len(datasets))], ys,
               width=0.4, color=color, label=label)
    ax.set_xticks(range(len(datasets)))
    ax.set_xticklabels(datasets, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(f"NoC traversals (KB), N={n_value}")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = os.path.join(outdir, "noc.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_intensity_figure(rows: list[dict], outdir: str) -> str | None:
    """Bar chart of best-case intensity per row of the intensity CSV."""
    if not rows:
        return None
    os.makedirs(outdir, exist_ok=True)
    labels = [f"{r['workload']}\n{r['mode']}" for r in rows]
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(rows), 3.0))
    ax.bar(range(len(rows)), [r["ai"] for r in rows], color="#4477aa")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("MACs per word")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = os.path.join(outdir, "intensity.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
