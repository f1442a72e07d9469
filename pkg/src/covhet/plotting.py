"""Figures for the report directory.

Uses ``matplotlib.figure.Figure`` directly so no pyplot state or GUI backend
is involved.
"""

from __future__ import annotations

import numpy as np
from matplotlib.figure import Figure

_RC = {"figsize": (5.0, 3.5), "dpi": 120}


def _save(fig: Figure, path) -> None:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})


def eigenvalue_histogram(eigenvalues, path, bins=None) -> None:
    eig = np.asarray(eigenvalues, dtype=float)
    bins = bins or max(1, int(np.ceil(np.sqrt(eig.size))))
    fig = Figure(figsize=_RC["figsize"], dpi=_RC["dpi"])
    ax = fig.add_subplot()
    ax.hist(eig, bins=bins, color="0.4")
    ax.set_yscale("log")
    ax.annotate(r"$\lambda_1$", xy=(eig[0], 1), xytext=(eig[0], 3),
                ha="center", arrowprops={"arrowstyle": "->"})
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("count")
    _save(fig, path)


def coordinate_histogram(alpha1, path, labels=None, bins=None) -> None:
    a = np.asarray(alpha1, dtype=float)
    bins = bins or max(1, int(np.ceil(np.sqrt(a.size))))
    edges = np.histogram_bin_edges(a, bins=bins)
    fig = Figure(figsize=_RC["figsize"], dpi=_RC["dpi"])
    ax = fig.add_subplot()
    if labels is None:
        ax.hist(a, bins=edges, color="0.4")
    else:
        labels = np.asarray(labels)
        for k in np.unique(labels):
            ax.hist(a[labels == k], bins=edges, alpha=0.6, label=f"cluster {k}")
        ax.legend(frameon=False)
    ax.set_xlabel(r"$\alpha_1$")
    ax.set_ylabel("count")
    _save(fig, path)
