"""Report figures written next to the delimited outputs.

All functions render to a file path (SVG by default) with a headless
backend; nothing here opens a window.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SCATTER_CAP = 20000  # points per scatter before stable decimation


def _decimate(points, labels, cap=_SCATTER_CAP):
    if len(points) <= cap:
        return points, labels
    keep = np.sort(np.random.default_rng(0).choice(len(points), size=cap, replace=False))
    return points[keep], None if labels is None else labels[keep]


def scatter_embedding(embedding, path, title=None):
    pts, labels = _decimate(embedding.points, embedding.labels)
    fig, ax = plt.subplots(figsize=(6, 6))
    if labels is None:
        ax.scatter(pts[:, 0], pts[:, 1], s=2, linewidths=0, color="#3b6aa0")
    else:
        cmap = plt.get_cmap("tab10")
        for cls in np.unique(labels):
            sel = labels == cls
            ax.scatter(
                pts[sel, 0], pts[sel, 1], s=2, linewidths=0,
                color=cmap(int(cls) % 10), label=str(cls),
            )
        if len(np.unique(labels)) <= 12:
            ax.legend(markerscale=4, fontsize=8, loc="best")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def line_stress(trace, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace.iterations, trace.stress, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("stress")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def line_curve(k, values, path, ylabel, logx=True):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(k, values, lw=1.2)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel("neighborhood size k")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def scatter_pairs(x, y, path, xlabel, ylabel, identity=False):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(x, y, s=3, alpha=0.4, linewidths=0)
    if identity:
        lim = [min(np.min(x), np.min(y)), max(np.max(x), np.max(y))]
        ax.plot(lim, lim, "k--", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
