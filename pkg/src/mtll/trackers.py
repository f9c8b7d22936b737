"""Extended Kalman filter and first-order phase-locked loop baselines."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as _k
from .base import CausalFilter
from .errors import DivergenceError, InvalidParameterError


@dataclass(frozen=True)
class TrackerState:
    xhat: float
    P: Optional[float] = None
    gain: Optional[float] = None


def ekf_step(state, model, dy, dt, t=0.0):
    """One continuous-discrete Euler step of the extended Kalman filter."""
    x, P = state.xhat, state.P
    r2 = model.obs_noise ** 2
    hp = model.dh(x, t)
    nu = dy - dt * model.h(x, t)
    g = P * hp / r2
    x_new = x + dt * model.m(x, t) + g * nu
    P_new = P + dt * (2.0 * model.dm(x, t) * P + model.state_noise ** 2 - P * P * hp * hp / r2)
    if not (np.isfinite(P_new) and np.isfinite(x_new)):
        raise DivergenceError(f"EKF diverged at t={t}")
    return TrackerState(float(x_new), float(max(P_new, 0.0)))


def pll_step(state, model, dy, dt, t=0.0):
    """First-order loop: ``xhat += dt*m(xhat) + K*(dy - dt*h(xhat))``."""
    x = state.xhat
    return TrackerState(float(x + dt * model.m(x, t) + state.gain * (dy - dt * model.h(x, t))),
                        gain=state.gain)


def stationary_pll_gain(model):
    """``sigma / rho``: the stationary EKF gain of the phase model where ``cos(xhat) = 1``."""
    return model.sigma / model.rho


class _Rows:
    __slots__ = ("x", "P")

    def __init__(self, x, P=None):
        self.x = x
        self.P = P


class ExtendedKalmanFilter(CausalFilter):
    """Scalar EKF with the error variance ODE stepped by explicit Euler."""

    def __init__(self, model=None, dt=1e-3, x0=0.0, P0=0.0):
        self.model = model
        self.dt = dt
        self.x0 = x0
        self.P0 = P0

    def _setup(self):
        if self.model is None or self.model.meas_deriv is None:
            raise InvalidParameterError("the EKF needs a model with meas_deriv")
        if not self.P0 >= 0:
            raise InvalidParameterError(f"P0 must be nonnegative, got {self.P0}")

    def _batch_init(self, n_rows):
        return _Rows(np.full(n_rows, float(self.x0)), np.full(n_rows, float(self.P0)))

    def _batch_take(self, state, keep):
        state.x = state.x[keep]
        state.P = state.P[keep]

    def _batch_current(self, state):
        return state.x

    def _batch_advance(self, state, dys, i0):
        model, dt = self.model, self.dt
        r2 = model.obs_noise ** 2
        q = model.state_noise ** 2
        x, P = state.x, state.P
        out = np.empty(dys.shape)
        jit = model.compiled
        if jit is not None:
            x, P = x.copy(), P.copy()
            bad = _k.ekf_chunk(x, P, np.ascontiguousarray(dys, dtype=float), dt, i0, q, r2,
                               jit.drift, jit.meas, jit.drift_deriv, jit.meas_deriv,
                               jit.param_array, out)
            if bad >= 0:
                raise DivergenceError(f"EKF diverged at step {i0 + bad}")
            state.x, state.P = x, P
            return out
        for c in range(dys.shape[0]):
            t = (i0 + c) * dt
            hp = model.dh(x, t)
            nu = dys[c] - dt * model.h(x, t)
            g = P * hp / r2
            x_new = x + dt * model.m(x, t) + g * nu
            P = P + dt * (2.0 * model.dm(x, t) * P + q - P * P * hp * hp / r2)
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(x_new))):
                raise DivergenceError(f"EKF diverged at step {i0 + c}")
            P = np.maximum(P, 0.0)
            x = x_new
            out[c] = x
        state.x, state.P = x, P
        return out


class PhaseLockedLoop(CausalFilter):
    """First-order loop with constant gain (default ``sigma / rho``)."""

    def __init__(self, model=None, dt=1e-3, x0=0.0, gain=None):
        self.model = model
        self.dt = dt
        self.x0 = x0
        self.gain = gain

    def _setup(self):
        if self.model is None:
            raise InvalidParameterError("the PLL needs a model")
        self.gain_ = stationary_pll_gain(self.model) if self.gain is None else float(self.gain)

    def _batch_init(self, n_rows):
        return _Rows(np.full(n_rows, float(self.x0)))

    def _batch_take(self, state, keep):
        state.x = state.x[keep]

    def _batch_current(self, state):
        return state.x

    def _batch_advance(self, state, dys, i0):
        model, dt, K = self.model, self.dt, self.gain_
        x = state.x
        out = np.empty(dys.shape)
        jit = model.compiled
        if jit is not None:
            x = x.copy()
            _k.pll_chunk(x, np.ascontiguousarray(dys, dtype=float), dt, i0, K, jit.drift,
                         jit.meas, jit.param_array, out)
            state.x = x
            return out
        for c in range(dys.shape[0]):
            t = (i0 + c) * dt
            x = x + dt * model.m(x, t) + K * (dys[c] - dt * model.h(x, t))
            out[c] = x
        state.x = x
        return out
