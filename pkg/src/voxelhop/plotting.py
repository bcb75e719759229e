"""Report figures, written next to the CSV/JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

THRESHOLD_COLORS = {0.95: "tab:orange", 0.96: "tab:green", 0.97: "tab:blue",
                    0.98: "tab:red", 0.99: "tab:purple"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def energy_figure(spectra: dict[tuple[int, int], np.ndarray], path,
                  thresholds=tuple(THRESHOLD_COLORS)) -> None:
    """Log AC eigenvalue against filter index, one panel per stage and one line
    per channel, with dots where each cumulative-energy threshold is reached."""
    stages = sorted({s for s, _ in spectra})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(stages), figsize=(2.6 * len(stages), 2.6), squeeze=False)
        for ax, s in zip(axes[0], stages):
            for (st, c), spec in sorted(spectra.items()):
                if st != s or spec.size == 0 or spec.sum() <= 0:
                    continue
                energy = spec / spec.sum()
                idx = np.arange(1, spec.size + 1)
                ax.semilogy(idx, np.maximum(energy, 1e-12), lw=1, color="0.4", alpha=0.8)
                frac = np.cumsum(energy)
                for t in thresholds:
                    k = min(int(np.searchsorted(frac, t - 1e-12)), spec.size - 1)
                    ax.plot(idx[k], max(energy[k], 1e-12), "o", ms=3,
                            color=THRESHOLD_COLORS.get(t, "k"), label=f"{t:.0%}" if c == 0 else None)
            ax.set_title(f"stage {s + 1}")
            ax.set_xlabel("AC filter index")
        axes[0][0].set_ylabel("energy (fraction)")
        axes[0][0].legend(frameon=False)
        _save(fig, path)


def roc_figure(fpr, tpr, auc: float, path, label: str = "VoxelHop") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.plot(fpr, tpr, lw=1.5, label=f"{label} (AUC={auc:.4f})")
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="0.6")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def sweep_figure(xs, aucs, path, xlabel: str, stds=None) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 2.6))
        if stds is None:
            ax.plot(xs, aucs, "o-", ms=3)
        else:
            ax.errorbar(xs, aucs, yerr=stds, fmt="o-", ms=3, capsize=2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("AUC")
        _save(fig, path)
