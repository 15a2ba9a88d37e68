"""Search for the nearest invariant-breaking percept around an abstraction center.

Two independent routes bound the same quantity

    r* = min ||z - (A m*(x) + b)||  over x in the cell, z in the percept box,
         subject to: tracking error grows after one closed-loop step.

* :func:`falsify` samples states and rays around the center and returns a
  concrete violating point, i.e. an upper bound.
* :func:`branch_and_bound` runs an interval search over 4D boxes
  (y, theta, d, psi) and returns a certified lower bound.  With a fixed
  ``radius`` it instead proves (or refutes) that the open ball of that radius
  holds no violating percept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .interval import Violation, enclose_arrays
from .models import error_increase


class SolverBudget(RuntimeError):
    pass


@dataclass
class Witness:
    y: float
    theta: float
    d: float
    psi: float
    dist: float

    def as_dict(self):
        return {"y": self.y, "theta": self.theta, "d": self.d, "psi": self.psi,
                "dist": self.dist}


@dataclass
class SearchResult:
    lower: float
    upper: float
    witness: Optional[Witness] = None
    nodes: int = 0
    stuck: int = 0
    exhausted: bool = False
    status: str = "done"  # induction mode: "pass" | "counterexample" | "inconclusive"
    evaluations: int = 0


def centers(y, theta, A, b):
    """A @ m*(x) + b for arrays of states (m*(x) = (-y, -theta))."""
    c0 = A[0, 0] * -y + A[0, 1] * -theta + b[0]
    c1 = A[1, 0] * -y + A[1, 1] * -theta + b[1]
    return c0, c1


def distance(dz0, dz1, norm):
    if norm == "linf":
        return np.maximum(np.abs(dz0), np.abs(dz1))
    return np.hypot(dz0, dz1)


def violating(y, theta, d, psi, cfg):
    """Scalar-pipeline test, vectorized: strict error increase with the percept inside the search box."""
    box = cfg.search_box
    inside = (d >= box[0, 0]) & (d <= box[0, 1]) & (psi >= box[1, 0]) & (psi <= box[1, 1])
    return inside & (error_increase(y, theta, d, psi, cfg.params, cfg.error_fn) > 0)


# falsifier -----------------------------------------------------------------

def _unit_dirs(phi, norm):
    u0, u1 = np.cos(phi), np.sin(phi)
    if norm == "linf":
        s = np.maximum(np.abs(u0), np.abs(u1))
        u0, u1 = u0 / s, u1 / s
    return u0, u1


def _radii(cfg, n):
    box = cfg.search_box
    rmax = float(np.hypot(box[0, 1] - box[0, 0], box[1, 1] - box[1, 0]))
    return np.concatenate([[0.0], np.geomspace(1e-6, rmax, n - 1)])


def _first_hit(y, th, phi, map_, cfg, radii, rounds=5, m=64):
    """Smallest violating radius along rays (y, th, phi); inf where a ray never violates.

    Inputs are 1D arrays of equal length.  After the coarse scan over
    ``radii`` the bracket around the first hit is subdivided ``rounds`` times
    into ``m`` parts.  Returns (radius, d, psi) per ray.
    """
    A, b = map_.A, map_.b
    c0, c1 = centers(y, th, A, b)
    u0, u1 = _unit_dirs(phi, cfg.norm)
    Y, T = y[:, None], th[:, None]
    C0, C1, U0, U1 = c0[:, None], c1[:, None], u0[:, None], u1[:, None]

    def first(R):
        hit = violating(Y, T, C0 + R * U0, C1 + R * U1, cfg)
        return hit.any(axis=1), hit.argmax(axis=1)

    any_hit, k = first(radii[None, :])
    hi = radii[k]
    lo = np.where(k > 0, radii[np.maximum(k - 1, 0)], 0.0)
    # only brackets that could beat the best coarse hit are refined; the rest
    # keep their (still violating) coarse radius
    best = hi[any_hit].min() if any_hit.any() else np.inf
    sel = np.nonzero(any_hit & (lo <= best))[0]
    frac = np.arange(1, m + 1) / m
    Y, T, C0, C1, U0, U1 = Y[sel], T[sel], C0[sel], C1[sel], U0[sel], U1[sel]
    slo, shi = lo[sel], hi[sel]
    rows = np.arange(sel.size)
    for _ in range(rounds if sel.size else 0):
        # shi stays violating; the last grid point equals shi
        pts = slo[:, None] + (shi - slo)[:, None] * frac[None, :]
        pts[:, -1] = shi
        _, j = first(pts)
        slo = np.where(j > 0, pts[rows, np.maximum(j - 1, 0)], slo)
        shi = pts[rows, j]
    hi = hi.copy()
    hi[sel] = shi
    r = np.where(any_hit, hi, np.inf)
    d = c0 + np.where(any_hit, hi, 0.0) * u0
    psi = c1 + np.where(any_hit, hi, 0.0) * u1
    return r, d, psi


def _cell_grid(cell_bounds, n):
    (ylo, yhi), (tlo, thi) = cell_bounds
    ys = np.linspace(ylo, yhi, n) if yhi > ylo else np.array([ylo])
    ts = np.linspace(tlo, thi, n) if thi > tlo else np.array([tlo])
    Y, T = np.meshgrid(ys, ts, indexing="ij")
    return Y.ravel(), T.ravel()


def falsify(cell_bounds, map_, cfg, n_dirs=24, n_radii=96, starts=2,
            chunk=200_000) -> Tuple[float, Optional[Witness], int]:
    """Upper bound on r* from a state grid x ray scan, then Nelder-Mead on the best rays.

    ``cell_bounds`` is ((y_lo, y_hi), (theta_lo, theta_hi)).  Returns
    ``(upper, witness, evaluations)``; upper is inf when nothing violating was found.
    """
    sc = cfg.solver
    (ylo, yhi), (tlo, thi) = cell_bounds
    Y, T = _cell_grid(cell_bounds, sc.falsifier_grid)
    evals = Y.size
    c0, c1 = centers(Y, T, map_.A, map_.b)
    at_center = violating(Y, T, c0, c1, cfg)
    if at_center.any():
        i = int(np.argmax(at_center))
        return 0.0, Witness(float(Y[i]), float(T[i]), float(c0[i]), float(c1[i]), 0.0), evals

    phis = np.linspace(0.0, 2 * math.pi, n_dirs, endpoint=False)
    radii = _radii(cfg, n_radii)
    sy = np.repeat(Y, n_dirs)
    st = np.repeat(T, n_dirs)
    sp = np.tile(phis, Y.size)
    best_r = np.full(sy.size, np.inf)
    best_d = np.zeros(sy.size)
    best_p = np.zeros(sy.size)
    step = max(1, chunk // n_radii)
    for s in range(0, sy.size, step):
        sl = slice(s, s + step)
        r, d, p = _first_hit(sy[sl], st[sl], sp[sl], map_, cfg, radii)
        best_r[sl], best_d[sl], best_p[sl] = r, d, p
    evals += sy.size * (n_radii + 5 * 64)

    order = np.argsort(best_r, kind="stable")
    upper = float(best_r[order[0]])
    witness = None
    if math.isfinite(upper):
        i = order[0]
        witness = Witness(float(sy[i]), float(st[i]), float(best_d[i]), float(best_p[i]), upper)
    if sc.nm_iters == 0 or not math.isfinite(upper) or upper == 0.0:
        return upper, witness, evals

    def clip_state(v):
        return (min(max(v[0], ylo), yhi), min(max(v[1], tlo), thi), v[2])

    def ray(v):
        y, t, ph = clip_state(v)
        r, d, p = _first_hit(np.array([y]), np.array([t]), np.array([ph]), map_, cfg, radii)
        return float(r[0]), float(d[0]), float(p[0]), y, t

    count = [0]

    def objective(v):
        count[0] += 1
        r = ray(v)[0]
        return r if math.isfinite(r) else 1e6

    scale = np.array([max(yhi - ylo, 1e-9) * 0.25, max(thi - tlo, 1e-9) * 0.25, 0.25])
    seen = set()
    for i in order[:starts * 4]:
        if len(seen) >= starts or not math.isfinite(best_r[i]):
            break
        key = (round(float(sy[i]), 12), round(float(st[i]), 12))
        if key in seen:
            continue
        seen.add(key)
        x0 = np.array([sy[i], st[i], sp[i]])
        simplex = np.vstack([x0, x0 + np.diag(scale)])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxiter": sc.nm_iters, "initial_simplex": simplex,
                                "xatol": 1e-9, "fatol": 1e-12})
        r, d, p, y, t = ray(res.x)
        if r < upper:
            upper = r
            witness = Witness(y, t, d, p, r)
    evals += count[0] * (n_radii + 5 * 64)
    return upper, witness, evals


# branch and bound ----------------------------------------------------------

def root_box(cell_bounds, cfg):
    (ylo, yhi), (tlo, thi) = cell_bounds
    box = cfg.search_box
    lo = np.array([[ylo, tlo, box[0, 0], box[1, 0]]])
    hi = np.array([[yhi, thi, box[0, 1], box[1, 1]]])
    return lo, hi


def _candidates(lo, hi, map_, cfg):
    """Closest point to the center inside each box's percept range, taken at the box's state midpoint."""
    y = 0.5 * (lo[:, 0] + hi[:, 0])
    t = 0.5 * (lo[:, 1] + hi[:, 1])
    c0, c1 = centers(y, t, map_.A, map_.b)
    d = np.clip(c0, lo[:, 2], hi[:, 2])
    p = np.clip(c1, lo[:, 3], hi[:, 3])
    return y, t, d, p, distance(d - c0, p - c1, cfg.norm)


def branch_and_bound(cell_bounds, map_, cfg, upper=math.inf, witness=None,
                     radius=None) -> SearchResult:
    """Interval branch-and-bound over the cell x percept box.

    Minimization mode (``radius is None``): returns a certified ``lower`` and
    the (possibly improved) incumbent ``upper``.  Boxes that provably keep the
    error decreasing are pruned; the closure "next >= current" is used, so the
    bound never over-certifies.

    Ball mode (``radius`` given): searches for a violating percept at distance
    strictly below ``radius``; ``status`` is "pass", "counterexample" (with a
    replayable witness) or "inconclusive".
    """
    sc = cfg.solver
    A, b = map_.A, map_.b
    ball = radius is not None
    thr = float(radius) if ball else float(upper)
    floor = sc.min_box_width

    lo, hi = root_box(cell_bounds, cfg)
    dlo, _, st = enclose_arrays(lo, hi, A, b, cfg.params, cfg.error_fn, cfg.norm)
    nodes = 1
    keep = (st != Violation.NEVER) & (dlo < thr)
    lo, hi, dlo, st = lo[keep], hi[keep], dlo[keep], st[keep]
    root_lower = max(0.0, float(dlo.min())) if dlo.size else math.inf
    stuck_min = math.inf
    stuck = 0
    exhausted = False

    while dlo.size:
        m = float(dlo.min())
        if not ball and math.isfinite(thr) and m >= (1.0 - sc.gap_tol) * thr:
            break
        if nodes >= sc.max_nodes:
            exhausted = True
            break
        if dlo.size > sc.batch:
            sel = np.argpartition(dlo, sc.batch)[:sc.batch]
            rest = np.ones(dlo.size, bool)
            rest[sel] = False
        else:
            sel = np.arange(dlo.size)
            rest = np.zeros(dlo.size, bool)
        blo, bhi, bst = lo[sel], hi[sel], st[sel]
        lo, hi, dlo, st = lo[rest], hi[rest], dlo[rest], st[rest]

        cy, ct, cd, cp, cdist = _candidates(blo, bhi, map_, cfg)
        good = violating(cy, ct, cd, cp, cfg) & (cdist < thr)
        if good.any():
            j = int(np.argmin(np.where(good, cdist, np.inf)))
            witness = Witness(float(cy[j]), float(ct[j]), float(cd[j]), float(cp[j]),
                              float(cdist[j]))
            if ball:
                return SearchResult(0.0, witness.dist, witness, nodes, stuck, False,
                                    "counterexample")
            thr = witness.dist
            survive = dlo < thr
            lo, hi, dlo, st = lo[survive], hi[survive], dlo[survive], st[survive]

        w = bhi - blo
        at_floor = (w <= floor).all(axis=1)
        if at_floor.any():
            stuck += int(at_floor.sum())
            sel_dlo = enclose_arrays(blo[at_floor], bhi[at_floor], A, b, cfg.params,
                                     cfg.error_fn, cfg.norm)[0]
            stuck_min = min(stuck_min, float(sel_dlo.min()))
            blo, bhi, w = blo[~at_floor], bhi[~at_floor], w[~at_floor]
        if blo.shape[0] == 0:
            continue
        axis = np.argmax(np.where(w > floor, w, -1.0), axis=1)
        rows = np.arange(blo.shape[0])
        mid = 0.5 * (blo[rows, axis] + bhi[rows, axis])
        left_hi = bhi.copy()
        left_hi[rows, axis] = mid
        right_lo = blo.copy()
        right_lo[rows, axis] = mid
        clo = np.vstack([blo, right_lo])
        chi = np.vstack([left_hi, bhi])
        cdlo, _, cst = enclose_arrays(clo, chi, A, b, cfg.params, cfg.error_fn, cfg.norm)
        nodes += clo.shape[0]
        keep = (cst != Violation.NEVER) & (cdlo < thr)
        lo = np.vstack([lo, clo[keep]])
        hi = np.vstack([hi, chi[keep]])
        dlo = np.concatenate([dlo, cdlo[keep]])
        st = np.concatenate([st, cst[keep]])

    pending_min = float(dlo.min()) if dlo.size else math.inf
    if ball:
        status = "inconclusive" if (exhausted or stuck) else "pass"
        return SearchResult(min(pending_min, stuck_min), thr, None, nodes, stuck, exhausted,
                            status)
    lower = max(0.0, min(pending_min, stuck_min, thr))
    if exhausted and lower <= root_lower and thr > lower:
        raise SolverBudget(f"node budget {sc.max_nodes} exhausted without improving the "
                           f"root bound {root_lower:.3g}")
    return SearchResult(lower, thr, witness, nodes, stuck, exhausted, "done")


def min_distance(cell_bounds, map_, cfg) -> SearchResult:
    upper, witness, evals = falsify(cell_bounds, map_, cfg)
    if upper == 0.0:
        return SearchResult(0.0, 0.0, witness, 0, 0, False, "done", evals)
    res = branch_and_bound(cell_bounds, map_, cfg, upper=upper, witness=witness)
    res.evaluations = evals
    return res
