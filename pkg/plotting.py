"""
plotting.py - SVG rendering of an LCS curve (display artifact only).

matplotlib is imported lazily with the Agg backend so headless runs work
and commands that never plot pay nothing for it.
"""

from __future__ import annotations

import logging
from pathlib import Path

from lcs import GroupVerdict, LcsCurve

_logger = logging.getLogger("botdna.plotting")


def plot_curve(curve: LcsCurve, path: str | Path, verdict: GroupVerdict | None = None,
               title: str = "LCS curve"):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks   = [k for k, _ in curve.points]
    lens = [v for _, v in curve.points]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, lens, marker="o", linewidth=1.5, color="#2b6cb0")
    if verdict is not None and verdict.split_k:
        ax.axvline(verdict.split_k + 0.5, linestyle="--", color="#c53030",
                   label=f"split at k={verdict.split_k} (drop {verdict.drop_magnitude})")
        ax.legend(loc="upper right", frameon=False)
    ax.set_xlabel("number of accounts k")
    ax.set_ylabel("LCS length")
    ax.set_title(title)
    ax.set_ylim(bottom=0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    # Fixed metadata keeps reruns byte-identical.
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    _logger.info(f"curve plot written to {path}")
