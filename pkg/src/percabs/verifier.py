"""Invariant checks for a synthesized abstraction.

``check_induction`` re-proves, cell by cell, that no percept inside the safe
ball makes the tracking error grow.  ``bounded_reach`` rolls the abstract
closed loop forward with an adversary picking percepts from the balls and
looks for executions that reach the unsafe set or leave the partition domain.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .models import (Percept, State, control_law, controller, dynamics_step, error_arrays,
                     error_increase, ground_truth_arrays, ground_truth_percept, in_unsafe,
                     step_arrays, tracking_error, unsafe_arrays)
from .partition import locate_arrays
from .search import Witness, branch_and_bound, centers, distance, falsify, violating
from .synthesis import Abstraction, CellStatus


class Verdict(str, enum.Enum):
    PASS = "pass"
    COUNTEREXAMPLE = "counterexample"
    INCONCLUSIVE = "inconclusive"


@dataclass
class VerificationReport:
    verdict: Verdict
    witness: Optional[dict] = None
    cells_checked: int = 0
    effort: dict = field(default_factory=dict)
    details: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"verdict": self.verdict.value, "witness": self.witness,
                "cells_checked": self.cells_checked, "effort": self.effort,
                "details": self.details}


# induction -----------------------------------------------------------------

def _step_record(cfg, y, theta, d, psi):
    s = State(0.0, float(y), float(theta))
    z = Percept(float(d), float(psi))
    nxt = dynamics_step(s, controller(z, cfg.params), cfg.params)
    return s, z, nxt


def induction_witness(cell, cfg, y, theta, d, psi, radius) -> dict:
    s, z, nxt = _step_record(cfg, y, theta, d, psi)
    c0, c1 = centers(np.array(y), np.array(theta), cell.map.A, cell.map.b)
    dist = float(distance(np.array(d - c0), np.array(psi - c1), cfg.norm))
    return {"kind": "induction", "cell": list(cell.cell.index), "state": list(s),
            "percept": list(z), "next_state": list(nxt), "dist": dist, "radius": radius,
            "error_before": tracking_error(cfg.error_fn, ground_truth_percept(s), cfg.params),
            "error_after": tracking_error(cfg.error_fn, ground_truth_percept(nxt), cfg.params)}


def replay_witness(witness: dict, abst: Abstraction) -> bool:
    """Re-evaluate a counterexample with the scalar models; True if it still fails."""
    cfg = abst.scenario
    if witness["kind"] == "induction":
        cell = abst.at(*witness["cell"])
        s = State(*witness["state"])
        z = Percept(*witness["percept"])
        if not cell.cell.contains(s.y, s.theta):
            return False
        c0, c1 = cell.center(s.y, s.theta)
        dist = float(distance(np.array(z.d - c0), np.array(z.psi - c1), cfg.norm))
        nxt = dynamics_step(s, controller(z, cfg.params), cfg.params)
        grows = (tracking_error(cfg.error_fn, ground_truth_percept(nxt), cfg.params)
                 > tracking_error(cfg.error_fn, ground_truth_percept(s), cfg.params))
        return bool(grows and dist < cell.radius and list(nxt) == witness["next_state"])
    # reach trace: every step must follow the dynamics and use a percept from the ball
    trace = witness["trace"]
    s = State(*trace[0]["state"])
    for step in trace:
        if list(s) != step["state"]:
            return False
        cell = abst.at(*step["cell"])
        z = Percept(*step["percept"])
        c0, c1 = cell.center(s.y, s.theta)
        r = _reach_radius(cell.radius, cfg)
        if float(distance(np.array(z.d - c0), np.array(z.psi - c1), cfg.norm)) > r:
            return False
        s = dynamics_step(s, controller(z, cfg.params), cfg.params)
    final = State(*witness["final_state"])
    if list(s) != list(final):
        return False
    if witness["kind"] == "unsafe":
        return in_unsafe(final, cfg.unsafe)
    lo_y, hi_y = cfg.partition.y_range
    lo_t, hi_t = cfg.partition.theta_range
    return not (lo_y <= final.y <= hi_y and lo_t <= final.theta <= hi_t)


def _checked_cells(abst):
    return [c for c in abst.cells
            if c.status is not CellStatus.INFEASIBLE and math.isfinite(c.radius)]


def _deepen(cell, cfg, w, r, n=257):
    """Move a boundary witness along its ray to the point inside the ball with the largest error growth.

    The falsifier stops at the first violating radius, where the growth is
    only rounding-sized; a deeper point makes the counterexample robust.
    """
    c0, c1 = centers(np.array(w.y), np.array(w.theta), cell.map.A, cell.map.b)
    v0, v1 = w.d - float(c0), w.psi - float(c1)
    norm = float(distance(np.array(v0), np.array(v1), cfg.norm))
    if norm == 0.0:
        return w
    top = min(r, _reach_radius(r, cfg)) * (1 - 1e-9)
    rho = np.linspace(norm, max(norm, top), n)
    d = float(c0) + rho * v0 / norm
    psi = float(c1) + rho * v1 / norm
    gain = np.where(violating(np.full(n, w.y), np.full(n, w.theta), d, psi, cfg),
                    error_increase(w.y, w.theta, d, psi, cfg.params, cfg.error_fn), -np.inf)
    j = int(np.argmax(gain))
    if not np.isfinite(gain[j]):
        return w
    return Witness(w.y, w.theta, float(d[j]), float(psi[j]), float(rho[j]))


def _induction_job(args):
    cell, cfg = args
    bounds = ((cell.cell.y_bounds.lo, cell.cell.y_bounds.hi),
              (cell.cell.theta_bounds.lo, cell.cell.theta_bounds.hi))
    r = cell.radius
    if r == 0.0:
        return "pass", None, 0, 0
    upper, w, evals = falsify(bounds, cell.map, cfg)
    if w is not None and w.dist < r:
        w = _deepen(cell, cfg, w, r)
        wit = induction_witness(cell, cfg, w.y, w.theta, w.d, w.psi, r)
        if wit["dist"] < r:
            return "counterexample", wit, 0, evals
    res = branch_and_bound(bounds, cell.map, cfg, radius=r)
    wit = None
    if res.status == "counterexample":
        w = res.witness
        wit = induction_witness(cell, cfg, w.y, w.theta, w.d, w.psi, r)
    return res.status, wit, res.nodes, evals


def check_induction(abst: Abstraction, threads: int = 1) -> VerificationReport:
    """Prove per cell that every percept within the radius keeps the error non-increasing.

    Balls are open (``dist < r``), so a zero radius holds no percepts.
    Infeasible cells are skipped: their certificate already covers the whole
    percept search box.
    """
    cfg = abst.scenario
    cells = _checked_cells(abst)
    jobs = [(c, cfg) for c in cells]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_induction_job, jobs))
    else:
        results = [_induction_job(j) for j in jobs]
    details, witness, verdict = [], None, Verdict.PASS
    nodes = evals = 0
    for cell, (status, wit, n, e) in zip(cells, results):
        nodes += n
        evals += e
        details.append({"cell": list(cell.cell.index), "status": status})
        if status == "counterexample":
            verdict = Verdict.COUNTEREXAMPLE
            witness = witness or wit
        elif status == "inconclusive" and verdict is Verdict.PASS:
            verdict = Verdict.INCONCLUSIVE
    return VerificationReport(verdict, witness, len(cells),
                              {"nodes": nodes, "falsifier_evaluations": evals}, details)


# bounded reach -------------------------------------------------------------

@dataclass(frozen=True)
class WorstGrid:
    """Percept maximizing the next-step tracking error among k boundary points and the center."""
    k: int = 8


@dataclass(frozen=True)
class Random:
    """n independent executions per initial point, each drawing uniform ball percepts."""
    seed: int = 0
    n: int = 4


def _reach_radius(r, cfg):
    # an unbounded ball still only ranges over the percept search box
    if math.isinf(r):
        box = cfg.search_box
        return float(np.hypot(*(box[:, 1] - box[:, 0])))
    return r


def _initial_grid(cfg, grid):
    (ylo, yhi), (tlo, thi) = cfg.initial
    ys = np.linspace(ylo, yhi, grid) if yhi > ylo else np.array([ylo])
    ts = np.linspace(tlo, thi, grid) if thi > tlo else np.array([tlo])
    Y, T = np.meshgrid(ys, ts, indexing="ij")
    return Y.ravel(), T.ravel()


def _clip_to_box(d, psi, box):
    return np.clip(d, box[0, 0], box[0, 1]), np.clip(psi, box[1, 0], box[1, 1])


def bounded_reach(abst: Abstraction, horizon: int,
                  adversary: Union[WorstGrid, Random] = WorstGrid(), grid: int = 11,
                  on_exit: str = "fail") -> VerificationReport:
    """Roll out the abstract closed loop from a grid over the initial set.

    Percepts come from the closed ball of each visited cell (so a zero radius
    still yields the center).  Unsafe entries count as counterexamples.
    Leaving the partition domain does too with ``on_exit="fail"``; with
    ``on_exit="extend"`` the execution continues using the nearest boundary
    cell and only the exit count is reported.  The witness is the first
    failing execution in initial-grid order and replays step by step.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if on_exit not in ("fail", "extend"):
        raise ValueError(f"unknown on_exit policy {on_exit!r}")
    cfg, p = abst.scenario, abst.scenario.params
    spec = cfg.partition
    (iylo, iyhi), (itlo, ithi) = cfg.initial
    if not (spec.y_range[0] <= iylo and iyhi <= spec.y_range[1]
            and spec.theta_range[0] <= itlo and ithi <= spec.theta_range[1]):
        raise ValueError("initial set is not contained in the partition domain")

    Y0, T0 = _initial_grid(cfg, grid)
    if isinstance(adversary, Random):
        reps = adversary.n
        rngs = [np.random.default_rng([adversary.seed, i]) for i in range(Y0.size * reps)]
    else:
        reps = 1
        rngs = None
    y = np.repeat(Y0, reps)
    th = np.repeat(T0, reps)
    n = y.size
    A = np.array([c.map.A for c in abst.cells])
    b = np.array([c.map.b for c in abst.cells])
    R = np.array([_reach_radius(c.radius, cfg) for c in abst.cells])
    box = cfg.search_box

    hist_y = [y.copy()]
    hist_t = [th.copy()]
    hist_cell, hist_d, hist_p = [], [], []
    fail_step = np.full(n, -1)
    fail_kind = np.array([""] * n, dtype=object)
    exited = np.zeros(n, bool)
    (ylo, yhi), (tlo, thi) = spec.y_range, spec.theta_range

    def mark(step, yy, tt):
        unsafe = unsafe_arrays(yy, tt, cfg.unsafe)
        outside = locate_arrays(spec, yy, tt) < 0
        exited[:] |= outside
        if on_exit == "extend":
            outside = np.zeros_like(outside)
        new = (fail_step < 0) & (unsafe | outside)
        fail_step[new] = step
        fail_kind[new & unsafe] = "unsafe"
        fail_kind[new & ~unsafe] = "domain_exit"

    mark(0, y, th)
    samples = 0
    for step in range(horizon):
        alive = fail_step < 0
        if not alive.any():
            break
        idx = locate_arrays(spec, np.clip(y, ylo, yhi), np.clip(th, tlo, thi))
        c0 = A[idx, 0, 0] * -y + A[idx, 0, 1] * -th + b[idx, 0]
        c1 = A[idx, 1, 0] * -y + A[idx, 1, 1] * -th + b[idx, 1]
        r = R[idx]
        if rngs is None:
            k = adversary.k
            ang = np.linspace(0, 2 * math.pi, k, endpoint=False)
            u0, u1 = np.cos(ang), np.sin(ang)
            if cfg.norm == "linf":
                s = np.maximum(np.abs(u0), np.abs(u1))
                u0, u1 = u0 / s, u1 / s
            cd = np.column_stack([c0, c0[:, None] + r[:, None] * u0[None, :]])
            cp = np.column_stack([c1, c1[:, None] + r[:, None] * u1[None, :]])
            cd, cp = _clip_to_box(cd, cp, box)
            u = control_law(cd, cp, p)
            ny, nt = step_arrays(0.0, y[:, None], th[:, None], u, p)[1:]
            nd, npsi = ground_truth_arrays(ny, nt)
            score = error_arrays(cfg.error_fn, nd, npsi, p)
            pick = np.argmax(score, axis=1)
            rows = np.arange(n)
            d, psi = cd[rows, pick], cp[rows, pick]
            samples += cd.size
        else:
            draws = np.array([g.uniform(size=2) for g in rngs])
            ang = 2 * math.pi * draws[:, 0]
            rad = r * np.sqrt(draws[:, 1])
            u0, u1 = np.cos(ang), np.sin(ang)
            if cfg.norm == "linf":
                s = np.maximum(np.abs(u0), np.abs(u1))
                u0, u1 = u0 / s, u1 / s
            d, psi = _clip_to_box(c0 + rad * u0, c1 + rad * u1, box)
            samples += n
        u = control_law(d, psi, p)
        _, ny, nt = step_arrays(0.0, y, th, u, p)
        # failed executions stay frozen
        y = np.where(alive, ny, y)
        th = np.where(alive, nt, th)
        hist_cell.append(idx)
        hist_d.append(d)
        hist_p.append(psi)
        hist_y.append(y.copy())
        hist_t.append(th.copy())
        mark(step + 1, y, th)

    failed = np.nonzero(fail_step >= 0)[0]
    effort = {"executions": int(n), "horizon": int(horizon), "percept_evaluations": int(samples)}
    n_unsafe = int(sum(fail_kind[i] == "unsafe" for i in failed))
    effort["unsafe_entries"] = n_unsafe
    effort["domain_exits"] = int(exited.sum())
    if failed.size == 0:
        return VerificationReport(Verdict.PASS, None, 0, effort)
    i = int(failed[0])
    steps = int(fail_step[i])
    trace = _build_trace(abst, hist_y[0][i], hist_t[0][i],
                         [(hist_cell[t][i], hist_d[t][i], hist_p[t][i]) for t in range(steps)])
    witness = {"kind": str(fail_kind[i]), "execution": i, "steps": steps,
               "trace": trace[:-1], "final_state": trace[-1]["state"]}
    return VerificationReport(Verdict.COUNTEREXAMPLE, witness, 0, effort)


def _build_trace(abst, y0, t0, choices):
    """Replay the chosen percepts with the scalar models to produce an exact trace."""
    p = abst.scenario.params
    spec = abst.scenario.partition
    s = State(0.0, float(y0), float(t0))
    out = []
    for cell_idx, d, psi in choices:
        iy, it = divmod(int(cell_idx), spec.n_theta)
        z = Percept(float(d), float(psi))
        out.append({"state": list(s), "cell": [iy, it], "percept": list(z)})
        s = dynamics_step(s, controller(z, p), p)
    out.append({"state": list(s)})
    return out
