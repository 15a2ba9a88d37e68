"""Interval arithmetic with outward rounding.

An :class:`Interval` holds ``lo``/``hi`` as floats or as numpy arrays of the
same shape; in the array case every operation acts element-wise, which is how
the branch-and-bound search evaluates thousands of boxes per call.  Each
elementary result is widened by one ulp on both sides.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .models import ErrorFn, VehicleKind

_HALF_PI = math.pi / 2
_TWO_PI = 2 * math.pi


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        if hi is None:
            hi = lo
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.ndim == 0:
            lo, hi = float(lo), float(hi)
        self.lo = lo
        self.hi = hi

    @classmethod
    def checked(cls, lo, hi):
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
        return cls(lo, hi)

    @classmethod
    def _widened(cls, lo, hi):
        return cls(_down(lo), _up(hi))

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __eq__(self, other):
        if not isinstance(other, Interval):
            return NotImplemented
        return bool(np.all(self.lo == other.lo) and np.all(self.hi == other.hi))

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x):
        return (self.lo <= x) & (x <= self.hi)

    def __iter__(self):
        yield self.lo
        yield self.hi

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = _as_interval(other)
        return Interval._widened(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        other = _as_interval(other)
        return Interval._widened(self.lo - other.hi, self.hi - other.lo)

    def __rsub__(self, other):
        return _as_interval(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            c = float(other)
            if c >= 0:
                return Interval._widened(self.lo * c, self.hi * c)
            return Interval._widened(self.hi * c, self.lo * c)
        other = _as_interval(other)
        p = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return Interval._widened(np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3])),
                                 np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3])))

    __rmul__ = __mul__


def _as_interval(v):
    if isinstance(v, Interval):
        return v
    return Interval(v, v)


def iv_add(a: Interval, b: Interval) -> Interval:
    return a + b


def iv_sub(a: Interval, b: Interval) -> Interval:
    return a - b


def iv_mul(a: Interval, b: Interval) -> Interval:
    return a * b


def iv_neg(a: Interval) -> Interval:
    return -a


def iv_abs(a: Interval) -> Interval:
    lo = np.where(a.lo >= 0, a.lo, np.where(a.hi <= 0, -a.hi, 0.0))
    hi = np.maximum(np.abs(a.lo), np.abs(a.hi))
    return Interval(lo, hi)


def iv_sqr(a: Interval) -> Interval:
    m = iv_abs(a)
    return Interval._widened(m.lo * m.lo, m.hi * m.hi)


def iv_sqrt(a: Interval) -> Interval:
    return Interval._widened(np.sqrt(np.maximum(a.lo, 0.0)), np.sqrt(np.maximum(a.hi, 0.0)))


def _contains_point(lo, hi, phase):
    """True where some phase + 2k*pi lies in [lo, hi]."""
    k = np.ceil((lo - phase) / _TWO_PI)
    return phase + k * _TWO_PI <= hi


def iv_sin(a: Interval) -> Interval:
    lo, hi = np.asarray(a.lo), np.asarray(a.hi)
    s_lo, s_hi = np.sin(lo), np.sin(hi)
    rlo = np.minimum(s_lo, s_hi)
    rhi = np.maximum(s_lo, s_hi)
    wide = (hi - lo) >= _TWO_PI
    rhi = np.where(wide | _contains_point(lo, hi, _HALF_PI), 1.0, _up(rhi))
    rlo = np.where(wide | _contains_point(lo, hi, -_HALF_PI), -1.0, _down(rlo))
    return Interval(np.clip(rlo, -1.0, 1.0), np.clip(rhi, -1.0, 1.0))


def iv_cos(a: Interval) -> Interval:
    lo, hi = np.asarray(a.lo), np.asarray(a.hi)
    c_lo, c_hi = np.cos(lo), np.cos(hi)
    rlo = np.minimum(c_lo, c_hi)
    rhi = np.maximum(c_lo, c_hi)
    wide = (hi - lo) >= _TWO_PI
    rhi = np.where(wide | _contains_point(lo, hi, 0.0), 1.0, _up(rhi))
    rlo = np.where(wide | _contains_point(lo, hi, math.pi), -1.0, _down(rlo))
    return Interval(np.clip(rlo, -1.0, 1.0), np.clip(rhi, -1.0, 1.0))


def iv_arctan2(num: Interval, den: float) -> Interval:
    """Enclosure of atan2(num, den) for a positive constant denominator (monotone in num)."""
    if not den > 0:
        raise ValueError("denominator must be a positive constant")
    return Interval._widened(np.arctan2(num.lo, den), np.arctan2(num.hi, den))


def iv_clip(a: Interval, limit: float) -> Interval:
    return Interval(np.clip(a.lo, -limit, limit), np.clip(a.hi, -limit, limit))


def iv_hull(parts: Sequence[Interval]) -> Interval:
    return Interval(min(p.lo for p in parts), max(p.hi for p in parts))


class Box:
    """Ordered list of intervals; axis meaning is fixed by the caller."""

    def __init__(self, dims: Sequence[Interval]):
        if len(dims) == 0:
            raise ValueError("a box needs at least one dimension")
        self.dims = [Interval.checked(float(d.lo), float(d.hi)) for d in dims]

    @classmethod
    def from_bounds(cls, bounds):
        return cls([Interval(lo, hi) for lo, hi in bounds])

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __repr__(self):
        return f"Box({[(d.lo, d.hi) for d in self.dims]})"

    @property
    def lo(self):
        return np.array([d.lo for d in self.dims])

    @property
    def hi(self):
        return np.array([d.hi for d in self.dims])

    def split(self, axis=None):
        w = self.hi - self.lo
        axis = int(np.argmax(w)) if axis is None else axis
        m = self.dims[axis].mid
        left = list(self.dims)
        right = list(self.dims)
        left[axis] = Interval(self.dims[axis].lo, m)
        right[axis] = Interval(m, self.dims[axis].hi)
        return Box(left), Box(right)


# closed-loop enclosure -------------------------------------------------------

class Violation(enum.IntEnum):
    NEVER = 0
    MAYBE = 1
    ALWAYS = 2


def enclose_error(v: ErrorFn, d: Interval, psi: Interval, p) -> Interval:
    if v is ErrorFn.V1:
        return iv_abs(psi + iv_arctan2(d * p.gain, p.v_f))
    if v is ErrorFn.V2:
        return iv_abs(d)
    return iv_sqrt(iv_sqr(d) + iv_sqr(psi))


def enclose_control(d: Interval, psi: Interval, p) -> Interval:
    raw = psi + iv_arctan2(d * p.gain, p.v_f)
    if p.kind is VehicleKind.BICYCLE:
        return iv_clip(raw, p.sat_limit)
    return iv_clip(Interval._widened(raw.lo / p.dt, raw.hi / p.dt), p.sat_limit)


def enclose_step(y: Interval, theta: Interval, u: Interval, p):
    if p.kind is VehicleKind.BICYCLE:
        y1 = y + iv_sin(theta + u) * (p.v_f * p.dt)
        th1 = theta + iv_sin(u) * (p.v_f * p.dt / p.wheel_base)
    else:
        y1 = y + iv_sin(theta) * (p.v_f * p.dt)
        th1 = theta + u * p.dt
    return y1, th1


def enclose_center(y: Interval, theta: Interval, A, b):
    """Enclosure of A @ (-y, -theta) + b, each state variable used once per row."""
    A = np.asarray(A, dtype=float)
    c0 = y * (-A[0, 0]) + theta * (-A[0, 1]) + float(b[0])
    c1 = y * (-A[1, 0]) + theta * (-A[1, 1]) + float(b[1])
    return c0, c1


def enclose_arrays(lo, hi, A, b, params, error_fn, norm="l2"):
    """Batch enclosure over boxes given as (N, 4) arrays ordered (y, theta, d, psi).

    Returns ``(dist_lo, dist_hi, status)`` where status holds :class:`Violation`
    codes for the closed "next error >= current error" condition.
    """
    y = Interval(lo[:, 0], hi[:, 0])
    th = Interval(lo[:, 1], hi[:, 1])
    d = Interval(lo[:, 2], hi[:, 2])
    psi = Interval(lo[:, 3], hi[:, 3])

    c0, c1 = enclose_center(y, th, A, b)
    e0 = iv_abs(d - c0)
    e1 = iv_abs(psi - c1)
    if norm == "linf":
        dist = Interval(np.maximum(e0.lo, e1.lo), np.maximum(e0.hi, e1.hi))
    else:
        dist = iv_sqrt(iv_sqr(e0) + iv_sqr(e1))

    u = enclose_control(d, psi, params)
    y1, th1 = enclose_step(y, th, u, params)
    v0 = enclose_error(error_fn, -y, -th, params)
    v1 = enclose_error(error_fn, -y1, -th1, params)
    diff = v1 - v0
    status = np.where(diff.hi < 0, Violation.NEVER,
                      np.where(diff.lo > 0, Violation.ALWAYS, Violation.MAYBE)).astype(np.int8)
    return np.asarray(dist.lo), np.asarray(dist.hi), status


def enclose_next_error(cell_box: Box, abst_center, cfg):
    """Enclose the distance objective and classify the invariant violation on a 4D box.

    ``cell_box`` is ordered (y, theta, d, psi); ``abst_center`` is an affine map
    with attributes ``A`` and ``b``.  Returns ``(dist, violates)``.
    """
    if len(cell_box) != 4:
        raise ValueError("expected a 4D box (y, theta, d, psi)")
    lo = cell_box.lo[None, :]
    hi = cell_box.hi[None, :]
    dlo, dhi, st = enclose_arrays(lo, hi, abst_center.A, abst_center.b, cfg.params,
                                  cfg.error_fn, cfg.norm)
    return Interval(float(dlo[0]), float(dhi[0])), Violation(int(st[0]))
