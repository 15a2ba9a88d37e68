"""Vehicle dynamics, Stanley controllers, ground-truth percepts and tracking errors.

Every function here accepts plain floats or numpy arrays of matching shape,
so the same code path serves scalar evaluation and vectorized sampling.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


class VehicleKind(str, enum.Enum):
    BICYCLE = "bicycle"
    SKID_STEER = "skid_steer"


class ErrorFn(str, enum.Enum):
    V1 = "V1"  # |psi + atan(K d / v_f)|
    V2 = "V2"  # |d|
    V3 = "V3"  # ||(d, psi)||


class Combiner(str, enum.Enum):
    AND = "and"
    OR = "or"


class State(NamedTuple):
    x: float
    y: float
    theta: float


class Percept(NamedTuple):
    d: float
    psi: float


class Control(NamedTuple):
    value: float


@dataclass(frozen=True)
class VehicleParams:
    v_f: float
    dt: float
    sat_limit: float
    gain: float
    kind: VehicleKind = VehicleKind.BICYCLE
    wheel_base: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", VehicleKind(self.kind))
        for name in ("v_f", "dt", "sat_limit", "gain"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and positive, got {val!r}")
        if self.kind is VehicleKind.BICYCLE:
            if self.wheel_base is None or not (math.isfinite(self.wheel_base) and self.wheel_base > 0):
                raise ValueError("bicycle model needs a positive wheel_base")


@dataclass(frozen=True)
class UnsafeSet:
    y_limit: float
    theta_limit: Optional[float] = None
    combiner: Combiner = Combiner.AND

    def __post_init__(self):
        object.__setattr__(self, "combiner", Combiner(self.combiner))
        if not self.y_limit > 0:
            raise ValueError("y_limit must be positive")
        if self.theta_limit is not None and not self.theta_limit > 0:
            raise ValueError("theta_limit must be positive when given")


GEM_PARAMS = VehicleParams(v_f=2.8, wheel_base=1.75, dt=0.1, sat_limit=0.61, gain=0.45,
                           kind=VehicleKind.BICYCLE)
AGBOT_PARAMS = VehicleParams(v_f=1.0, dt=0.05, sat_limit=0.5, gain=0.1,
                             kind=VehicleKind.SKID_STEER)


def _check_finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


def stanley_raw(d, psi, p: VehicleParams):
    """Unclamped Stanley steering term psi + atan(K d / v_f)."""
    return psi + np.arctan2(p.gain * d, p.v_f)


def control_law(d, psi, p: VehicleParams):
    """Array form of :func:`controller`, no finiteness check."""
    raw = stanley_raw(d, psi, p)
    if p.kind is VehicleKind.BICYCLE:
        return np.clip(raw, -p.sat_limit, p.sat_limit)
    # |raw| < w_max*dt gives raw/dt, otherwise +-w_max: same as clamping raw/dt
    return np.clip(raw / p.dt, -p.sat_limit, p.sat_limit)


def controller(z: Percept, p: VehicleParams) -> Control:
    _check_finite(z.d, z.psi)
    return Control(float(control_law(z.d, z.psi, p)))


def step_arrays(x, y, theta, u, p: VehicleParams):
    """One discrete step of the kinematic model; returns (x', y', theta')."""
    if p.kind is VehicleKind.BICYCLE:
        heading = theta + u
        return (x + p.v_f * np.cos(heading) * p.dt,
                y + p.v_f * np.sin(heading) * p.dt,
                theta + p.v_f * np.sin(u) / p.wheel_base * p.dt)
    return (x + p.v_f * np.cos(theta) * p.dt,
            y + p.v_f * np.sin(theta) * p.dt,
            theta + u * p.dt)


def dynamics_step(s: State, u: Control, p: VehicleParams) -> State:
    _check_finite(s.x, s.y, s.theta, u.value)
    if abs(u.value) > p.sat_limit:
        raise ValueError(f"control {u.value} exceeds saturation limit {p.sat_limit}")
    return State(*(float(v) for v in step_arrays(s.x, s.y, s.theta, u.value, p)))


def ground_truth_arrays(y, theta):
    # straight lane along the x-axis: d = -y, psi = -theta
    return -y, -theta


def ground_truth_percept(s: State) -> Percept:
    d, psi = ground_truth_arrays(s.y, s.theta)
    return Percept(float(d), float(psi))


def error_arrays(v: ErrorFn, d, psi, p: VehicleParams):
    v = ErrorFn(v)
    if v is ErrorFn.V1:
        return np.abs(stanley_raw(d, psi, p))
    if v is ErrorFn.V2:
        return np.abs(d)
    return np.hypot(d, psi)


def tracking_error(v: ErrorFn, z: Percept, p: VehicleParams) -> float:
    _check_finite(z.d, z.psi)
    return float(error_arrays(v, z.d, z.psi, p))


def unsafe_arrays(y, theta, u: UnsafeSet):
    out_y = np.abs(y) > u.y_limit
    if u.theta_limit is None:
        return out_y
    out_t = np.abs(theta) > u.theta_limit
    if u.combiner is Combiner.AND:
        return out_y & out_t
    return out_y | out_t


def in_unsafe(s: State, u: UnsafeSet) -> bool:
    return bool(unsafe_arrays(s.y, s.theta, u))


def error_increase(y, theta, d, psi, p: VehicleParams, v: ErrorFn):
    """Tracking-error change over one closed-loop step when the controller sees (d, psi).

    Positive values mean the invariant "error is non-increasing" is broken.
    """
    u = control_law(d, psi, p)
    _, y1, th1 = step_arrays(0.0, y, theta, u, p)
    d0, psi0 = ground_truth_arrays(y, theta)
    d1, psi1 = ground_truth_arrays(y1, th1)
    return error_arrays(v, d1, psi1, p) - error_arrays(v, d0, psi0, p)
