"""Figures written next to the delimited report files.

Everything renders to SVG with a fixed hash salt and no date metadata, so
reruns produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "actionpose",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
}


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def pca_2d(x: np.ndarray) -> np.ndarray:
    """Project rows onto the first two principal components.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:2]
    flip = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * flip[:, None]
    out = xc @ comps.T
    if out.shape[1] < 2:
        out = np.pad(out, ((0, 0), (0, 2 - out.shape[1])))
    return out


def embedding_scatter(xy: np.ndarray, labels, path: str | Path, title: str = "pose embeddings (PCA)") -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        classes = sorted(set(labels))
        cmap = plt.get_cmap("tab10" if len(classes) <= 10 else "tab20")
        labels = np.asarray(labels)
        for i, c in enumerate(classes):
            sel = labels == c
            ax.scatter(xy[sel, 0], xy[sel, 1], s=14, color=cmap(i % cmap.N), label=c, linewidths=0)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        ax.set_title(title)
        ax.legend(fontsize=7, loc="best", markerscale=1.2)
        _save(fig, path)


def pck_curve_plot(thresholds: np.ndarray, curve: np.ndarray, path: str | Path) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(thresholds, curve, marker="o", markersize=2.5)
        ax.set_xlabel("threshold (mm)")
        ax.set_ylabel("PCK (%)")
        ax.set_ylim(0, 100)
        ax.set_xlim(thresholds[0], thresholds[-1])
        _save(fig, path)


def loss_curve_plot(steps: list[dict], path: str | Path, keys=("total", "l_con", "l_3d", "l_v")) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        x = [r["step"] for r in steps]
        for k in keys:
            if steps and k in steps[0]:
                ax.plot(x, [r[k] for r in steps], label=k)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=7)
        _save(fig, path)
