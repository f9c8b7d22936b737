"""Compiled inner loops for models that ship numba versions of their functions.

Each kernel repeats the arithmetic of its pure-Python counterpart
operation for operation, so both routes produce the same bits.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def truth_chunk(x, z, dt, sq, sn, so, i0, m, h, p, xs, dys):
    C, R = dys.shape
    for c in range(C):
        t = (i0 + c) * dt
        for r in range(R):
            xi = x[r]
            mi = m(xi, t, p)
            hi = h(xi, t, p)
            dys[c, r] = dt * hi + so * (sq * z[c, r, 1])
            xi = xi + dt * mi + sn * (sq * z[c, r, 0])
            x[r] = xi
            xs[c, r] = xi


@njit(cache=True)
def pll_chunk(x, dys, dt, i0, K, m, h, p, out):
    C, R = dys.shape
    for c in range(C):
        t = (i0 + c) * dt
        for r in range(R):
            xi = x[r]
            xi = xi + dt * m(xi, t, p) + K * (dys[c, r] - dt * h(xi, t, p))
            x[r] = xi
            out[c, r] = xi


@njit(cache=True)
def ekf_chunk(x, P, dys, dt, i0, q, r2, m, h, dm, dh, p, out):
    """Returns the first failing step offset, or -1."""
    C, R = dys.shape
    for c in range(C):
        t = (i0 + c) * dt
        for r in range(R):
            xi = x[r]
            Pi = P[r]
            hp = dh(xi, t, p)
            nu = dys[c, r] - dt * h(xi, t, p)
            g = Pi * hp / r2
            x_new = xi + dt * m(xi, t, p) + g * nu
            P_new = Pi + dt * (2.0 * dm(xi, t, p) * Pi + q - Pi * Pi * hp * hp / r2)
            if not (np.isfinite(P_new) and np.isfinite(x_new)):
                return c
            if P_new < 0.0:
                P_new = 0.0
            x[r] = x_new
            P[r] = P_new
            out[c, r] = x_new
    return -1


@njit(cache=True)
def phase_drift(x, t, p):
    return p[0]


@njit(cache=True)
def phase_meas(x, t, p):
    return np.sin(x)


@njit(cache=True)
def zero_deriv(x, t, p):
    return 0.0


@njit(cache=True)
def phase_meas_deriv(x, t, p):
    return np.cos(x)


@njit(cache=True)
def linear_drift(x, t, p):
    return p[0] * x


@njit(cache=True)
def linear_meas(x, t, p):
    return p[1] * x


@njit(cache=True)
def linear_drift_deriv(x, t, p):
    return p[0]


@njit(cache=True)
def linear_meas_deriv(x, t, p):
    return p[1]
