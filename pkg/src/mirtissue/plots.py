"""SVG figures. Output is byte-stable: fixed hash salt, no date metadata, text kept as text."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .rank import max_srd  # noqa: E402

_RC = {"svg.hashsalt": "mirtissue", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> None:
    with plt.rc_context(_RC):
        fig.savefig(Path(path), format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _figure(*args, **kwargs):
    with plt.rc_context(_RC):
        return plt.subplots(*args, **kwargs)


def roc_svg(curves: dict[str, list[list[tuple[float, float]]]], path, title: str = "ROC") -> None:
    """One panel per method, one line per repeat."""
    names = list(curves)
    fig, axes = _figure(1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        for pts in curves[name]:
            p = np.asarray(pts)
            ax.plot(p[:, 0], p[:, 1], lw=0.8, alpha=0.7)
        ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.6)
        ax.set_title(name)
        ax.set_xlabel("FPR")
        ax.set_ylabel("TPR")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def latent_svg(panels: dict[str, tuple[np.ndarray, np.ndarray]], path) -> None:
    """PCA scatter per background method; red = kept, blue = discarded."""
    fig, axes = _figure(1, len(panels), figsize=(4 * len(panels), 4), squeeze=False)
    for ax, (name, (scores, kept)) in zip(axes[0], panels.items()):
        kept = np.asarray(kept, dtype=bool)
        ax.scatter(scores[~kept, 0], scores[~kept, 1], s=3, c="blue", label="discarded")
        ax.scatter(scores[kept, 0], scores[kept, 1], s=3, c="red", label="kept")
        ax.set_title(name)
        ax.set_xlabel("PC1")
        ax.set_ylabel("PC2")
        ax.legend(loc="best", markerscale=3)
    fig.tight_layout()
    _save(fig, path)


def srd_svg(srd, crrn, path) -> None:
    """Methods as labeled markers over the random-ranking SRD distribution."""
    fig, ax = _figure(figsize=(6, 4))
    ax.plot(crrn.support_pct, crrn.probabilities, color="black", lw=1.0, label="random")
    top = float(crrn.probabilities.max())
    for name, pct in zip(srd.methods, srd.srd_pct.tolist()):
        ax.axvline(pct, color="tab:orange", lw=0.6)
        ax.text(pct, top * 1.02, name, rotation=90, ha="center", va="bottom", fontsize=7)
    xx1 = 100.0 * crrn.quantile(0.05) / max_srd(crrn.n_rows)
    ax.axvline(xx1, color="grey", ls=":", lw=0.8, label="5% random quantile")
    ax.set_xlabel("SRD [%]")
    ax.set_ylabel("relative frequency (random)")
    ax.set_ylim(0, top * 1.35)
    ax.legend(loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def crossval_svg(cv, path) -> None:
    fig, ax = _figure(figsize=(6, 4))
    ax.boxplot(
        [cv.srd_pct[:, j] for j in range(len(cv.methods))],
        flierprops={"markerfacecolor": "green", "marker": "o"},
        medianprops={"color": "gold"},
    )
    ax.set_xticks(range(1, len(cv.methods) + 1), cv.methods, rotation=30)
    ax.set_ylabel("SRD [%]")
    fig.tight_layout()
    _save(fig, path)
