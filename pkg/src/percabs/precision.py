"""Empirical precision of an abstraction and heatmap rendering.

A test pair (truth, perceived) counts as positive when the perceived percept
lies in the closed ball of its cell.  The per-cell score is the fraction of
positives.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .partition import locate_arrays
from .perception import Dataset
from .search import distance
from .synthesis import Abstraction


@dataclass
class PrecisionMap:
    positives: np.ndarray  # (n_y, n_theta) int
    totals: np.ndarray     # (n_y, n_theta) int
    outside: int = 0       # samples whose state lies outside the partition domain

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64)
        self.totals = np.asarray(self.totals, dtype=np.int64)
        if self.positives.shape != self.totals.shape or self.positives.ndim != 2:
            raise ValueError("positives and totals must be matching 2D grids")
        if (self.positives < 0).any() or (self.positives > self.totals).any():
            raise ValueError("need 0 <= positives <= totals")

    @property
    def shape(self):
        return self.totals.shape

    @property
    def scores(self) -> np.ndarray:
        """Per-cell score; NaN where the cell received no samples."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.totals > 0, self.positives / np.maximum(self.totals, 1), np.nan)

    def mean_score(self) -> float:
        s = self.scores
        return float(np.nanmean(s)) if np.isfinite(s).any() else math.nan

    def pooled_score(self) -> float:
        t = int(self.totals.sum())
        return int(self.positives.sum()) / t if t else math.nan

    def rows(self):
        s = self.scores
        for iy in range(self.shape[0]):
            for it in range(self.shape[1]):
                yield iy, it, int(self.positives[iy, it]), int(self.totals[iy, it]), s[iy, it]


def membership(abst: Abstraction, data: Dataset):
    """Flat cell index per sample (-1 outside) and the in-ball flag per sample."""
    cfg = abst.scenario
    flat = locate_arrays(cfg.partition, data.states[:, 1], data.states[:, 2])
    inside = flat >= 0
    k = np.where(inside, flat, 0)
    A = np.array([c.map.A for c in abst.cells])[k]
    b = np.array([c.map.b for c in abst.cells])[k]
    r = np.array([c.radius for c in abst.cells])[k]
    center = np.einsum("nij,nj->ni", A, data.truth) + b
    dev = data.perceived - center
    dist = distance(dev[:, 0], dev[:, 1], cfg.norm)
    return flat, inside & (np.isinf(r) | (dist <= r))


def evaluate(abst: Abstraction, test: Dataset) -> PrecisionMap:
    if len(test) == 0:
        raise ValueError("empty test set")
    spec = abst.scenario.partition
    flat, positive = membership(abst, test)
    inside = flat >= 0
    n = spec.n_y * spec.n_theta
    totals = np.bincount(flat[inside], minlength=n)
    pos = np.bincount(flat[inside & positive], minlength=n)
    return PrecisionMap(pos.reshape(spec.n_y, spec.n_theta), totals.reshape(spec.n_y, spec.n_theta),
                        int((~inside).sum()))


def write_csv(pmap: PrecisionMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iy", "itheta", "positives", "total", "score"])
        for iy, it, p, t, s in pmap.rows():
            w.writerow([iy, it, p, t, "" if math.isnan(s) else repr(float(s))])


def render_heatmap(pmap: PrecisionMap, path, csv_path=None, domain=None, title=None) -> None:
    """Write the score grid as an SVG (y across, theta up) and optionally the CSV table.

    ``domain`` is ``((y_lo, y_hi), (theta_lo, theta_hi))`` for axis labels;
    without it the axes count cells.  Output bytes depend only on the inputs.
    """
    import matplotlib
    from matplotlib.cm import ScalarMappable
    from matplotlib.colors import LinearSegmentedColormap, Normalize
    from matplotlib.figure import Figure
    from matplotlib.patches import Rectangle

    n_y, n_t = pmap.shape
    if domain is None:
        domain = ((0.0, float(n_y)), (0.0, float(n_t)))
    (ylo, yhi), (tlo, thi) = domain
    wy, wt = (yhi - ylo) / n_y, (thi - tlo) / n_t
    cmap = LinearSegmentedColormap.from_list("precision", ["#ffffff", "#006400"])
    norm = Normalize(vmin=0.0, vmax=1.0)

    with matplotlib.rc_context({"svg.hashsalt": "percabs", "svg.fonttype": "none"}):
        fig = Figure(figsize=(1.2 + 0.55 * n_y, 1.0 + 0.45 * n_t))
        ax = fig.add_subplot()
        scores = pmap.scores
        for iy in range(n_y):
            for it in range(n_t):
                s = scores[iy, it]
                xy = (ylo + iy * wy, tlo + it * wt)
                if math.isnan(s):
                    patch = Rectangle(xy, wy, wt, facecolor="#ffffff", edgecolor="0.4",
                                      hatch="//", linewidth=0.5)
                else:
                    patch = Rectangle(xy, wy, wt, facecolor=cmap(norm(s)), edgecolor="0.4",
                                      linewidth=0.5)
                patch.set_gid(f"cell_{iy}_{it}")
                ax.add_patch(patch)
        ax.set_xlim(ylo, yhi)
        ax.set_ylim(tlo, thi)
        ax.set_xlabel("y (m)")
        ax.set_ylabel("theta (rad)")
        if title:
            ax.set_title(title)
        sm = ScalarMappable(norm=norm, cmap=cmap)
        bar = fig.colorbar(sm, ax=ax, ticks=[0.0, 0.5, 1.0])
        bar.set_label("precision")
        fig.savefig(path, format="svg", metadata={"Date": None})
    if csv_path is not None:
        write_csv(pmap, csv_path)
