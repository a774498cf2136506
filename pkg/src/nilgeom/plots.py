"""Figure rendering for the CLI: every CSV the batch commands emit gets a
matplotlib figure next to it."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "line_figure",
    "heatmap_figure",
    "scatter_figure",
]

# keep PNG output free of library-version metadata so reruns compare clean
_META = {"Software": None}


def line_figure(path, x, series, xlabel, ylabel, title, logy=False):
    """series: list of (label, values)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, ys in series:
        ax.plot(x, ys, label=label, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def heatmap_figure(path, values, xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(values.T, origin="lower", aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def scatter_figure(path, x, y, color, xlabel, ylabel, title, clabel=""):
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    sc = ax.scatter(x, y, c=color, s=6, cmap="viridis")
    cb = fig.colorbar(sc, ax=ax, shrink=0.85)
    if clabel:
        cb.set_label(clabel)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
