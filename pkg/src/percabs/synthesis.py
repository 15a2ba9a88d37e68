"""Per-cell abstraction synthesis: affine center fit plus certified safe radius.

An abstraction maps every state of a partition cell to the ball
``{z : ||z - (A m*(x) + b)|| < r}``.  Radii come from the branch-and-bound
lower bound on the distance to the nearest percept that makes the tracking
error grow, so every percept inside the ball keeps the error non-increasing.
"""
from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (ConfigError, MarginPolicy, ScenarioConfig, load_scenario,
                     scenario_from_dict, scenario_to_dict)
from .models import State, Percept, error_increase
from .partition import Cell, build_partition, locate_arrays
from .perception import Dataset
from .regression import AffineMap, DegenerateFit, fit_affine
from .search import SearchResult, SolverBudget, Witness, centers, min_distance

FORMAT_VERSION = 1


class CellStatus(str, enum.Enum):
    CERTIFIED = "certified"
    FALLBACK = "fallback"
    INFEASIBLE = "infeasible"


class ArtifactError(ValueError):
    pass


@dataclass
class CellAbstraction:
    cell: Cell
    map: AffineMap
    radius: float
    status: CellStatus
    fit: str = "ls"  # "ls" or "fallback" (identity map after a degenerate fit)
    lower: Optional[float] = None
    upper: Optional[float] = None
    witness: Optional[Witness] = None
    nodes: int = 0

    def __post_init__(self):
        self.status = CellStatus(self.status)
        if not self.radius >= 0:
            raise ValueError(f"cell {self.cell.index}: radius must be >= 0")
        if (self.status is CellStatus.INFEASIBLE) != math.isinf(self.radius):
            raise ValueError(f"cell {self.cell.index}: infeasible status iff infinite radius")

    def center(self, y, theta):
        return centers(np.asarray(y, float), np.asarray(theta, float), self.map.A, self.map.b)


@dataclass
class CellError:
    index: Tuple[int, int]
    kind: str
    message: str

    def as_dict(self):
        return {"iy": self.index[0], "itheta": self.index[1], "kind": self.kind,
                "message": self.message}


@dataclass
class Abstraction:
    scenario: ScenarioConfig
    cells: List[CellAbstraction]
    errors: List[CellError] = field(default_factory=list)
    outside_samples: int = 0

    def __post_init__(self):
        spec = self.scenario.partition
        seen = sorted(c.cell.index for c in self.cells)
        want = [(i, j) for i in range(spec.n_y) for j in range(spec.n_theta)]
        if seen != want:
            raise ArtifactError("cells do not cover the partition exactly once")
        self.cells = sorted(self.cells, key=lambda c: c.cell.index)

    def at(self, iy, itheta) -> CellAbstraction:
        return self.cells[iy * self.scenario.partition.n_theta + itheta]

    def radii(self) -> np.ndarray:
        spec = self.scenario.partition
        return np.array([c.radius for c in self.cells]).reshape(spec.n_y, spec.n_theta)

    def counts(self) -> Dict[str, int]:
        out = {s.value: 0 for s in CellStatus}
        for c in self.cells:
            out[c.status.value] += 1
        return out


# single-cell operations ----------------------------------------------------

def unsafe_percept(s: State, z: Percept, cfg: ScenarioConfig) -> bool:
    """True iff using percept ``z`` at state ``s`` makes the tracking error strictly grow."""
    return bool(error_increase(s.y, s.theta, z.d, z.psi, cfg.params, cfg.error_fn) > 0)


def _bounds(cell):
    if isinstance(cell, Cell):
        return ((cell.y_bounds.lo, cell.y_bounds.hi), (cell.theta_bounds.lo, cell.theta_bounds.hi))
    return cell


def certify_cell(cell, map_: AffineMap, cfg: ScenarioConfig) -> SearchResult:
    return min_distance(_bounds(cell), map_, cfg)


def min_dist_certified(cell, map_: AffineMap, cfg: ScenarioConfig) -> Tuple[float, float]:
    """(certified lower bound, falsifier upper bound) on the distance to unsafe percepts.

    ``cell`` is a :class:`Cell` or ``((y_lo, y_hi), (theta_lo, theta_hi))``.
    Both values are ``inf`` when no unsafe percept exists in the search box.
    """
    res = certify_cell(cell, map_, cfg)
    return res.lower, res.upper


def safe_radius(lower: float, upper: float, cfg: ScenarioConfig) -> float:
    if math.isinf(lower):
        return math.inf
    if cfg.solver.margin_policy is MarginPolicy.FIXED_EPSILON:
        return max(0.0, lower - cfg.solver.epsilon)
    return lower


def center_shift(cell: Cell, child: AffineMap, parent: AffineMap) -> float:
    """Upper bound on max over the cell of ||child center - parent center||.

    The difference is affine in the state, so its norm peaks at a box corner;
    a small relative margin absorbs rounding.
    """
    ys = np.array([cell.y_bounds.lo, cell.y_bounds.lo, cell.y_bounds.hi, cell.y_bounds.hi])
    ts = np.array([cell.theta_bounds.lo, cell.theta_bounds.hi, cell.theta_bounds.lo,
                   cell.theta_bounds.hi])
    c0, c1 = centers(ys, ts, child.A, child.b)
    p0, p1 = centers(ys, ts, parent.A, parent.b)
    return float(np.hypot(c0 - p0, c1 - p1).max()) * (1 + 1e-12) + 1e-15


# whole-partition synthesis -------------------------------------------------

def _fit_cells(cfg: ScenarioConfig, cells: Sequence[Cell], data: Dataset):
    flat = locate_arrays(cfg.partition, data.states[:, 1], data.states[:, 2]) if len(data) \
        else np.zeros(0, dtype=np.int64)
    maps, errors = [], []
    for k, cell in enumerate(cells):
        sel = flat == k
        try:
            maps.append((fit_affine(data.truth[sel], data.perceived[sel], cell.index), "ls"))
        except DegenerateFit as exc:
            maps.append((AffineMap.identity(), "fallback"))
            errors.append(CellError(cell.index, "degenerate_fit", str(exc)))
    return maps, errors, int((flat < 0).sum())


def _certify_job(args):
    bounds, map_, cfg = args
    try:
        return min_distance(bounds, map_, cfg), None
    except SolverBudget as exc:
        return None, str(exc)


def compute_abstraction(cfg: ScenarioConfig, data: Dataset, parent: Optional[Abstraction] = None,
                        threads: int = 1) -> Abstraction:
    """Fit and certify every cell.  Per-cell failures are collected in ``.errors``.

    With ``parent`` (an abstraction over a coarser partition of the same
    domain and scenario), each child radius is at least the parent radius
    minus the shift between the two centers over the child cell, which keeps
    radii monotone under refinement.
    """
    cells = build_partition(cfg.partition)
    maps, errors, outside = _fit_cells(cfg, cells, data)
    jobs = [(_bounds(c), m, cfg) for c, (m, _) in zip(cells, maps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_certify_job, jobs))
    else:
        results = [_certify_job(j) for j in jobs]

    parents = _parent_lookup(cfg, parent) if parent is not None else None
    out = []
    for cell, (map_, fit), (res, err) in zip(cells, maps, results):
        if res is None:
            # a zero radius is always sound (the open ball is empty)
            errors.append(CellError(cell.index, "solver_budget", err))
            lower, upper, witness, nodes = 0.0, math.inf, None, cfg.solver.max_nodes
        else:
            lower, upper, witness, nodes = res.lower, res.upper, res.witness, res.nodes
        radius = safe_radius(lower, upper, cfg)
        if parents is not None:
            par = parents(cell)
            if math.isinf(par.radius):
                radius = math.inf
            else:
                radius = max(radius, par.radius - center_shift(cell, map_, par.map))
        if math.isinf(radius):
            status = CellStatus.INFEASIBLE
        elif fit == "fallback":
            status = CellStatus.FALLBACK
        else:
            status = CellStatus.CERTIFIED
        out.append(CellAbstraction(cell, map_, radius, status, fit, lower, upper, witness, nodes))
    return Abstraction(cfg, out, errors, outside)


def _parent_lookup(cfg: ScenarioConfig, parent: Abstraction):
    pc, fine = parent.scenario, cfg.partition
    same = scenario_to_dict(pc.with_partition(fine.n_y, fine.n_theta)) == scenario_to_dict(cfg)
    if not same:
        raise ValueError("parent abstraction was built for a different scenario")
    coarse = pc.partition
    if fine.n_y % coarse.n_y or fine.n_theta % coarse.n_theta:
        raise ValueError(f"{fine.n_y}x{fine.n_theta} does not refine "
                         f"{coarse.n_y}x{coarse.n_theta}")
    ry, rt = fine.n_y // coarse.n_y, fine.n_theta // coarse.n_theta
    return lambda cell: parent.at(cell.iy // ry, cell.itheta // rt)


# artifact I/O --------------------------------------------------------------

def _num(v):
    if v is None:
        return None
    return "inf" if math.isinf(v) else float(v)


def _from_num(v, what):
    if v == "inf":
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ArtifactError(f"{what}: expected a number or \"inf\"")
    return float(v)


def to_json(abst: Abstraction) -> dict:
    cfg = abst.scenario
    p = cfg.params
    return {
        "format_version": FORMAT_VERSION,
        "scenario": cfg.name,
        "error_fn": cfg.error_fn.value,
        "params": {"v_f": p.v_f, "L": p.wheel_base, "dt": p.dt, "sat": p.sat_limit, "K": p.gain},
        "domain": {"y": list(cfg.partition.y_range), "theta": list(cfg.partition.theta_range)},
        "partition": {"n_y": cfg.partition.n_y, "n_theta": cfg.partition.n_theta},
        "cells": [{"iy": c.cell.iy, "itheta": c.cell.itheta, "A": c.map.A.tolist(),
                   "b": c.map.b.tolist(), "r": _num(c.radius), "status": c.status.value,
                   "fit": c.fit, "lower": _num(c.lower), "upper": _num(c.upper)}
                  for c in abst.cells],
        "errors": [e.as_dict() for e in abst.errors],
        "scenario_config": scenario_to_dict(cfg),
    }


def save_abstraction(abst: Abstraction, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json(abst), fh, indent=1)
        fh.write("\n")


def from_json(doc: dict) -> Abstraction:
    if not isinstance(doc, dict):
        raise ArtifactError("artifact must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        if "scenario_config" in doc:
            cfg = scenario_from_dict(doc["scenario_config"])
        else:
            cfg = _scenario_from_summary(doc)
        cfg_part = doc["partition"]
        if (cfg_part["n_y"], cfg_part["n_theta"]) != (cfg.partition.n_y, cfg.partition.n_theta):
            raise ArtifactError("partition block disagrees with the embedded scenario")
        cells = build_partition(cfg.partition)
        out = []
        for rec in doc["cells"]:
            iy, it = int(rec["iy"]), int(rec["itheta"])
            if not (0 <= iy < cfg.partition.n_y and 0 <= it < cfg.partition.n_theta):
                raise ArtifactError(f"cell ({iy}, {it}) lies outside the partition")
            lower = rec.get("lower")
            upper = rec.get("upper")
            out.append(CellAbstraction(
                cells[iy * cfg.partition.n_theta + it], AffineMap(rec["A"], rec["b"]),
                _from_num(rec["r"], f"cell ({iy}, {it}) r"), CellStatus(rec["status"]),
                rec.get("fit", "ls"),
                None if lower is None else _from_num(lower, "lower"),
                None if upper is None else _from_num(upper, "upper")))
        errors = [CellError((e["iy"], e["itheta"]), e["kind"], e["message"])
                  for e in doc.get("errors", [])]
        return Abstraction(cfg, out, errors)
    except ArtifactError:
        raise
    except ConfigError as exc:
        raise ArtifactError(f"embedded scenario: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed artifact: {exc!r}") from None


def _scenario_from_summary(doc):
    """Rebuild the scenario from the summary blocks, filling the rest from a preset."""
    base = load_scenario(doc["scenario"]) if doc.get("scenario") in ("gem", "agbot") else None
    if base is None:
        raise ArtifactError("artifact lacks scenario_config and names no known preset")
    d = scenario_to_dict(base)
    p = doc["params"]
    d["params"].update({"v_f": p["v_f"], "dt": p["dt"], "sat_limit": p["sat"], "gain": p["K"]})
    if p.get("L") is not None:
        d["params"]["wheel_base"] = p["L"]
    d["error_fn"] = doc["error_fn"]
    d["partition"].update({"y_range": doc["domain"]["y"], "theta_range": doc["domain"]["theta"],
                           **doc["partition"]})
    return scenario_from_dict(d)


def load_abstraction(path) -> Abstraction:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: invalid JSON ({exc})") from None
    return from_json(doc)
