"""Uniform rectangular partitions of the (y, theta) invariant domain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .interval import Interval


@dataclass(frozen=True)
class PartitionSpec:
    y_range: Tuple[float, float]
    theta_range: Tuple[float, float]
    n_y: int
    n_theta: int

    def __post_init__(self):
        object.__setattr__(self, "y_range", (float(self.y_range[0]), float(self.y_range[1])))
        object.__setattr__(self, "theta_range",
                           (float(self.theta_range[0]), float(self.theta_range[1])))
        if not self.y_range[0] < self.y_range[1] or not self.theta_range[0] < self.theta_range[1]:
            raise ValueError("partition ranges must be non-degenerate")
        if int(self.n_y) < 1 or int(self.n_theta) < 1:
            raise ValueError("partition counts must be positive")

    def y_edges(self):
        return _edges(*self.y_range, self.n_y)

    def theta_edges(self):
        return _edges(*self.theta_range, self.n_theta)


def _edges(lo, hi, n):
    # i/n is computed exactly for the fraction, so refinements share edges bit-for-bit
    e = np.array([lo + (hi - lo) * (i / n) for i in range(n + 1)])
    e[0], e[-1] = lo, hi
    return e


@dataclass(frozen=True)
class Cell:
    index: Tuple[int, int]
    y_bounds: Interval
    theta_bounds: Interval

    @property
    def iy(self):
        return self.index[0]

    @property
    def itheta(self):
        return self.index[1]

    @property
    def center(self):
        return self.y_bounds.mid, self.theta_bounds.mid

    def contains(self, y, theta):
        return bool(self.y_bounds.contains(y) and self.theta_bounds.contains(theta))


def build_partition(spec: PartitionSpec) -> List[Cell]:
    ye, te = spec.y_edges(), spec.theta_edges()
    return [Cell((i, j), Interval(ye[i], ye[i + 1]), Interval(te[j], te[j + 1]))
            for i in range(spec.n_y) for j in range(spec.n_theta)]


def _bin(edges, v):
    n = len(edges) - 1
    if not (edges[0] <= v <= edges[-1]):
        return None
    i = int(np.searchsorted(edges, v, side="right")) - 1
    return min(i, n - 1)


def locate_index(spec: PartitionSpec, y, theta) -> Optional[Tuple[int, int]]:
    iy = _bin(spec.y_edges(), y)
    it = _bin(spec.theta_edges(), theta)
    if iy is None or it is None:
        return None
    return iy, it


def locate_arrays(spec: PartitionSpec, y, theta):
    """Vectorized locate: flat row-major cell index, -1 outside the domain."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ye, te = spec.y_edges(), spec.theta_edges()
    iy = np.minimum(np.searchsorted(ye, y, side="right") - 1, spec.n_y - 1)
    it = np.minimum(np.searchsorted(te, theta, side="right") - 1, spec.n_theta - 1)
    inside = (y >= ye[0]) & (y <= ye[-1]) & (theta >= te[0]) & (theta <= te[-1])
    return np.where(inside, iy * spec.n_theta + it, -1)


def locate(s, cells: Sequence[Cell]) -> Optional[Cell]:
    """Cell containing state ``s`` (lower-closed, upper-open except on the last row/column)."""
    if not cells:
        return None
    n_y = max(c.iy for c in cells) + 1
    n_t = max(c.itheta for c in cells) + 1
    first, last = cells[0], cells[-1]
    spec = PartitionSpec((first.y_bounds.lo, last.y_bounds.hi),
                         (first.theta_bounds.lo, last.theta_bounds.hi), n_y, n_t)
    idx = locate_index(spec, s.y, s.theta)
    if idx is None:
        return None
    return cells[idx[0] * n_t + idx[1]]


def refine_map(coarse: PartitionSpec, fine: PartitionSpec) -> List[Tuple[Cell, Cell]]:
    if coarse.y_range != fine.y_range or coarse.theta_range != fine.theta_range:
        raise ValueError("refinement must keep the domain ranges")
    if fine.n_y % coarse.n_y or fine.n_theta % coarse.n_theta:
        raise ValueError(f"{fine.n_y}x{fine.n_theta} is not a refinement of "
                         f"{coarse.n_y}x{coarse.n_theta}")
    ry, rt = fine.n_y // coarse.n_y, fine.n_theta // coarse.n_theta
    parents = build_partition(coarse)
    return [(c, parents[(c.iy // ry) * coarse.n_theta + c.itheta // rt])
            for c in build_partition(fine)]
