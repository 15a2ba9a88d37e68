import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from percabs.models import (AGBOT_PARAMS, GEM_PARAMS, Combiner, Control, ErrorFn, Percept, State,
                            UnsafeSet, VehicleKind, VehicleParams, controller, dynamics_step,
                            error_increase, ground_truth_percept, in_unsafe, stanley_raw,
                            tracking_error)

finite = st.floats(-50, 50, allow_nan=False)


# dynamics ------------------------------------------------------------------

def test_gem_straight_step():
    s = dynamics_step(State(0, 0, 0), Control(0.0), GEM_PARAMS)
    assert s == pytest.approx((0.28, 0.0, 0.0), abs=1e-15)


def test_gem_heading_update_matches_scalar_formula():
    s = dynamics_step(State(0, 0, 0), Control(0.61), GEM_PARAMS)
    assert s.theta == pytest.approx(2.8 * math.sin(0.61) / 1.75 * 0.1, abs=1e-15)
    assert s.theta == pytest.approx(0.091665, abs=2e-5)
    assert s.x == pytest.approx(0.28 * math.cos(0.61))
    assert s.y == pytest.approx(0.28 * math.sin(0.61))


def test_agbot_step():
    s = dynamics_step(State(0, 0, 0), Control(0.5), AGBOT_PARAMS)
    assert s == pytest.approx((0.05, 0.0, 0.025), abs=1e-15)


def test_step_rejects_bad_input():
    with pytest.raises(ValueError):
        dynamics_step(State(0, math.nan, 0), Control(0.0), GEM_PARAMS)
    with pytest.raises(ValueError):
        dynamics_step(State(0, 0, 0), Control(0.7), GEM_PARAMS)


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(v_f=0.0, dt=0.1, sat_limit=0.6, gain=0.4, wheel_base=1.0)
    with pytest.raises(ValueError):
        VehicleParams(v_f=1.0, dt=0.1, sat_limit=0.6, gain=0.4, kind=VehicleKind.BICYCLE)
    VehicleParams(v_f=1.0, dt=0.1, sat_limit=0.6, gain=0.4, kind="skid_steer")


@given(finite, finite, st.floats(-1, 1), st.floats(-0.61, 0.61))
def test_step_deterministic_and_finite(x, y, th, u):
    a = dynamics_step(State(x, y, th), Control(u), GEM_PARAMS)
    b = dynamics_step(State(x, y, th), Control(u), GEM_PARAMS)
    assert a == b and all(math.isfinite(v) for v in a)


# controller ----------------------------------------------------------------

@pytest.mark.parametrize("z, expected", [
    ((0.0, 0.0), 0.0),
    ((10.0, 0.0), 0.61),
    ((-10.0, 0.0), -0.61),
    ((1.0, 0.1), 0.1 + math.atan(0.45 / 2.8)),
])
def test_gem_controller_examples(z, expected):
    assert controller(Percept(*z), GEM_PARAMS).value == pytest.approx(expected, abs=1e-12)


def test_gem_controller_reference_value():
    assert controller(Percept(1.0, 0.1), GEM_PARAMS).value == pytest.approx(0.25934, abs=2e-5)


def test_agbot_controller_three_cases():
    p = AGBOT_PARAMS
    small = controller(Percept(0.0, 0.01), p).value
    assert small == pytest.approx(0.01 / p.dt)
    assert controller(Percept(0.0, 0.2), p).value == p.sat_limit
    assert controller(Percept(0.0, -0.2), p).value == -p.sat_limit


@given(finite, finite)
def test_controller_clamped(d, psi):
    for p in (GEM_PARAMS, AGBOT_PARAMS):
        assert abs(controller(Percept(d, psi), p).value) <= p.sat_limit


@given(st.floats(-3, 3), st.floats(-0.3, 0.3))
def test_unclamped_law_is_odd(d, psi):
    p = GEM_PARAMS
    a = controller(Percept(d, psi), p).value
    b = controller(Percept(-d, -psi), p).value
    if abs(a) < p.sat_limit and abs(b) < p.sat_limit:
        assert a == pytest.approx(-b, abs=1e-15)


# percepts and errors -------------------------------------------------------

@pytest.mark.parametrize("s, z", [
    ((0, 0, 0), (0, 0)),
    ((0, 0.5, 0.1), (-0.5, -0.1)),
    ((5, -1.2, -0.2), (1.2, 0.2)),
])
def test_ground_truth_percept(s, z):
    assert ground_truth_percept(State(*s)) == Percept(*z)


def test_tracking_error_examples():
    zero = Percept(0.0, 0.0)
    for v in ErrorFn:
        assert tracking_error(v, zero, GEM_PARAMS) == 0.0
    assert tracking_error(ErrorFn.V1, Percept(1.0, 0.0), GEM_PARAMS) == pytest.approx(0.15934, abs=2e-5)
    assert tracking_error(ErrorFn.V2, Percept(-0.3, 0.2), GEM_PARAMS) == 0.3
    assert tracking_error(ErrorFn.V3, Percept(0.3, 0.4), GEM_PARAMS) == pytest.approx(0.5)


@given(st.floats(-5, 5))
def test_v1_vanishes_on_equilibrium_curve(d):
    psi = -math.atan(GEM_PARAMS.gain * d / GEM_PARAMS.v_f)
    assert tracking_error(ErrorFn.V1, Percept(d, psi), GEM_PARAMS) <= 1e-15


@given(finite, finite)
def test_tracking_error_nonnegative_and_zero_set(d, psi):
    p = GEM_PARAMS
    z = Percept(d, psi)
    for v in ErrorFn:
        assert tracking_error(v, z, p) >= 0
    assert (tracking_error(ErrorFn.V2, z, p) == 0) == (d == 0)
    assert (tracking_error(ErrorFn.V3, z, p) == 0) == (d == 0 and psi == 0)
    assert tracking_error(ErrorFn.V1, z, p) == pytest.approx(abs(stanley_raw(d, psi, p)))


def test_unsafe_sets():
    gem = UnsafeSet(2.0)
    assert not in_unsafe(State(0, 0, 0), gem)
    assert in_unsafe(State(0, 2.1, 0), gem)
    assert not in_unsafe(State(0, 2.0, 0), gem)
    ag = UnsafeSet(0.228, math.pi / 6, Combiner.AND)
    assert in_unsafe(State(0, 0.3, 0.6), ag)
    assert not in_unsafe(State(0, 0.3, 0.0), ag)
    assert in_unsafe(State(0, 0.3, 0.0), UnsafeSet(0.228, math.pi / 6, Combiner.OR))


def test_error_increase_examples():
    p = GEM_PARAMS
    # truth percept well inside the decreasing region
    assert error_increase(1.0, 0.0, -1.0, 0.0, p, ErrorFn.V1) < 0
    # an exaggerated percept pointing away from the lane center makes it grow
    assert error_increase(1.0, 0.0, 3.0, 0.6, p, ErrorFn.V1) > 0
    # exaggerating toward the center saturates the steering but still helps in one step
    assert error_increase(1.0, 0.0, -3.0, -0.6, p, ErrorFn.V1) < 0
    # exact equilibrium: no change at all
    assert error_increase(0.0, 0.0, 0.0, 0.0, p, ErrorFn.V1) == 0


# ODE consistency -------------------------------------------------------------

def _ode_rate(d, p):
    return -p.gain * d / math.sqrt(1 + (p.gain * d / p.v_f) ** 2)


@pytest.mark.parametrize("d", np.linspace(-1, 1, 21))
@pytest.mark.parametrize("theta", np.linspace(-math.pi / 12, math.pi / 12, 7))
def test_cross_track_rate_matches_ode(d, theta):
    """One-step difference of d against the continuous rate, psi = -theta, unsaturated."""
    p = GEM_PARAMS
    z = Percept(d, -theta)
    u = controller(z, p)
    assert abs(stanley_raw(d, -theta, p)) < p.sat_limit
    s1 = dynamics_step(State(0.0, -d, theta), u, p)
    fd = (-s1.y - d) / p.dt
    ode = _ode_rate(d, p)
    assert abs(fd - ode) <= 5 * p.dt * abs(ode) + 1e-12


def test_cross_track_rate_against_integrated_ode():
    """Integrate the continuous closed loop over one period and compare with the step."""
    p = GEM_PARAMS

    def rhs(_, s):
        y, th = s
        delta = float(np.clip(-th + math.atan2(p.gain * -y, p.v_f), -p.sat_limit, p.sat_limit))
        return [p.v_f * math.sin(th + delta), p.v_f * math.sin(delta) / p.wheel_base]

    for d in np.linspace(-1, 1, 9):
        for th in (-0.2, 0.0, 0.2):
            sol = solve_ivp(rhs, (0, p.dt), [-d, th], rtol=1e-10, atol=1e-12)
            cont = (-sol.y[0, -1] - d) / p.dt
            s1 = dynamics_step(State(0.0, -d, th), controller(Percept(d, -th), p), p)
            disc = (-s1.y - d) / p.dt
            assert abs(cont - disc) <= 5 * p.dt * max(abs(cont), 1e-3)
