import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mtll import (ExtendedKalmanFilter, PhaseLockedLoop, TimeGrid, TrackerState, ekf_step,
                  make_linear_model, make_phase_model, pll_step, simulate_pair)
from mtll.errors import DivergenceError, InvalidParameterError
from mtll.trackers import stationary_pll_gain
from oracles import kalman_bucy_euler


def riccati_fixed_point(a, c, eps, sigma, rho):
    r2 = (eps * rho) ** 2
    return r2 / c ** 2 * (a + math.sqrt(a * a + c * c * sigma * sigma / (rho * rho)))


def test_ekf_equals_kalman_bucy_recursion():
    a, c, eps = -1.0, 1.0, 0.3
    model = make_linear_model(a, c, eps, 1.0, 1.0)
    grid = TimeGrid(0.01, 1000)
    dy = simulate_pair(model, grid, 0.2, seed=4).dy
    ref, _ = kalman_bucy_euler(dy, a, c, eps, 1.0, 1.0, 0.01, x0=0.2, P0=0.05)
    got = ExtendedKalmanFilter(model, dt=0.01, x0=0.2, P0=0.05).fit().transform(dy)
    assert np.max(np.abs(got - ref)) <= 1e-12
    state = TrackerState(0.2, 0.05)
    for k, d in enumerate(dy):
        state = ekf_step(state, model, d, 0.01, k * 0.01)
        assert abs(state.xhat - ref[k + 1]) <= 1e-12


def test_ekf_variance_reaches_riccati_value():
    a, c, eps, sigma, rho = -1.0, 1.0, 0.3, 1.0, 1.0
    model = make_linear_model(a, c, eps, sigma, rho)
    Pstar = riccati_fixed_point(a, c, eps, sigma, rho)
    q, r2 = (eps * sigma) ** 2, (eps * rho) ** 2
    ode = solve_ivp(lambda t, P: 2 * a * P + q - (P * c) ** 2 / r2, (0, 30), [0.0],
                    rtol=1e-12, atol=1e-14)
    assert ode.y[0, -1] == pytest.approx(Pstar, rel=1e-9)
    state = TrackerState(0.0, 0.0)
    for _ in range(100):
        state = ekf_step(state, model, 0.0, 0.05)
    assert state.P == pytest.approx(Pstar, rel=1e-4)


def test_ekf_examples():
    model, _ = make_phase_model(0.3, 1, 1, drift=0.2)
    s = ekf_step(TrackerState(np.pi / 2, 1.0), model, 0.7, 0.01)
    assert s.xhat == pytest.approx(np.pi / 2 + 0.01 * 0.2, abs=1e-15)
    flat, _ = make_phase_model(0.3, 1, 1)
    s = ekf_step(TrackerState(0.4, 0.3), flat, 0.01 * math.sin(0.4), 0.01)
    assert s.xhat == 0.4
    assert s.P >= 0


def test_ekf_divergence_and_validation():
    model, _ = make_phase_model(0.3, 1, 1)
    with pytest.raises(DivergenceError):
        ekf_step(TrackerState(0.0, 1e200), model, 0.0, 0.01)
    with pytest.raises(InvalidParameterError):
        ExtendedKalmanFilter(model, dt=0.01, P0=-1.0).fit()


def test_pll_examples():
    model, _ = make_phase_model(0.3, 1, 1, drift=0.5)
    assert pll_step(TrackerState(1.0, gain=0.0), model, 0.3, 0.01).xhat == 1.0 + 0.01 * 0.5
    flat, _ = make_phase_model(0.3, 1, 1)
    assert pll_step(TrackerState(0.0, gain=1.0), flat, 0.0, 0.01).xhat == 0.0
    assert stationary_pll_gain(make_phase_model(0.3, 2.0, 0.5)[0]) == 4.0
    assert PhaseLockedLoop(model, dt=0.01).fit().gain_ == 1.0


def test_pll_with_kalman_gain_matches_converged_ekf():
    a, c, eps = -1.0, 1.0, 0.3
    model = make_linear_model(a, c, eps, 1.0, 1.0)
    Pstar = riccati_fixed_point(a, c, eps, 1.0, 1.0)
    K = Pstar * c / (eps ** 2)
    dy = simulate_pair(model, TimeGrid(0.01, 1000), 0.0, seed=9).dy
    ekf = ExtendedKalmanFilter(model, dt=0.01, P0=Pstar).fit().transform(dy)
    pll = PhaseLockedLoop(model, dt=0.01, gain=K).fit().transform(dy)
    assert np.max(np.abs(ekf - pll)) <= 1e-10


def test_pll_equivariance_under_full_turn():
    model, _ = make_phase_model(0.3, 1, 1)
    grid = TimeGrid(1e-3, 5000)
    a = simulate_pair(model, grid, 0.0, seed=2)
    b = simulate_pair(model, grid, 2 * np.pi, seed=2)
    xa = PhaseLockedLoop(model, dt=1e-3, x0=0.0).fit().transform(a.dy)
    xb = PhaseLockedLoop(model, dt=1e-3, x0=2 * np.pi).fit().transform(b.dy)
    innov_a = a.dy - 1e-3 * np.sin(xa[:-1])
    innov_b = b.dy - 1e-3 * np.sin(xb[:-1])
    np.testing.assert_allclose(innov_a, innov_b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("cls", [ExtendedKalmanFilter, PhaseLockedLoop])
def test_compiled_route_is_bit_identical(cls):
    model, _ = make_phase_model(0.3, 1, 1, drift=0.1)
    plain = replace(model, compiled=None)
    dy = simulate_pair(model, TimeGrid(1e-3, 3000), 0.0, seed=1).dy
    a = cls(model, dt=1e-3).fit().transform(dy)
    b = cls(plain, dt=1e-3).fit().transform(dy)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("cls", [ExtendedKalmanFilter, PhaseLockedLoop])
def test_stream_matches_transform(cls):
    from mtll import simulate_error_pair
    model, _ = make_phase_model(0.4, 1, 1)
    grid = TimeGrid(0.01, 300)
    f = cls(model, dt=0.01).fit()
    err = simulate_error_pair(model, grid, 0.0, f.stream(), seed=3)
    np.testing.assert_array_equal(err.xhat, f.transform(err.dy))


def test_tracker_estimator_params():
    model, _ = make_phase_model(0.4, 1, 1)
    f = PhaseLockedLoop(model, dt=0.01, gain=0.5)
    assert f.get_params()["gain"] == 0.5
    assert f.fit_transform(np.zeros(4)).shape == (5,)
