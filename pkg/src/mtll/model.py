"""Diffusion/observation models and lock domains.

A model describes

    dx = drift(x, t) dt + eps * sigma * dw
    dy = meas(x, t) dt + eps * rho * dnu

with callables that accept scalars or numpy arrays.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as _k
from .errors import InvalidParameterError

Func = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class CompiledFunctions:
    """numba versions ``f(x, t, params)`` of a model's scalar functions.

    Optional; when present, campaigns and trackers run compiled loops.  They
    must agree exactly with the Python callables of the same model.
    """

    drift: object
    meas: object
    drift_deriv: object
    meas_deriv: object
    params: tuple = ()

    @property
    def param_array(self):
        return np.array(self.params, dtype=float) if self.params else np.zeros(1)


def _positive(name, value):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} must be positive, got {value!r}")
    return value


@dataclass(frozen=True)
class LockDomain:
    """Open interval ``(lo, hi)`` of tolerated estimation errors."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidParameterError(f"lock domain needs lo < hi, got ({self.lo}, {self.hi})")
        if not (self.lo < 0.0 < self.hi):
            raise InvalidParameterError("the initial error 0 must lie inside the lock domain")

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, e):
        e = np.asarray(e)
        return (e > self.lo) & (e < self.hi)


@dataclass(frozen=True)
class DiffusionModel:
    """Scalar diffusion observed through a noisy channel.

    ``period`` is set when drift and measurement are periodic in the state
    with that period; lattice filters use it to wrap the state grid.
    ``drift_deriv`` is optional; trackers fall back to a centred difference.
    """

    drift: Func
    meas: Func
    sigma: float
    rho: float
    eps: float
    meas_deriv: Optional[Func] = None
    drift_deriv: Optional[Func] = None
    period: Optional[float] = None
    autonomous: bool = True
    name: str = field(default="custom", compare=False)
    compiled: Optional[CompiledFunctions] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for attr in ("sigma", "rho", "eps"):
            object.__setattr__(self, attr, _positive(attr, getattr(self, attr)))
        if self.period is not None:
            object.__setattr__(self, "period", _positive("period", self.period))

    @property
    def state_noise(self):
        """eps * sigma, the diffusion scale of the state."""
        return self.eps * self.sigma

    @property
    def obs_noise(self):
        """eps * rho, the diffusion scale of the observation."""
        return self.eps * self.rho

    def m(self, x, t=0.0):
        return self.drift(x, t)

    def h(self, x, t=0.0):
        return self.meas(x, t)

    def dh(self, x, t=0.0):
        if self.meas_deriv is None:
            raise InvalidParameterError(f"model {self.name!r} has no measurement derivative")
        return self.meas_deriv(x, t)

    def dm(self, x, t=0.0, delta=1e-5):
        if self.drift_deriv is not None:
            return self.drift_deriv(x, t)
        return (self.drift(x + delta, t) - self.drift(x - delta, t)) / (2.0 * delta)

    def check_finite(self, domain, n_samples=257, margin=1.0):
        """Sample drift and meas on an interval enclosing ``domain``."""
        pad = margin * domain.width
        xs = np.linspace(domain.lo - pad, domain.hi + pad, n_samples)
        for label, fn in (("drift", self.drift), ("meas", self.meas)):
            vals = np.asarray(fn(xs, 0.0), dtype=float) * np.ones_like(xs)
            if not np.all(np.isfinite(vals)):
                bad = xs[~np.isfinite(vals)][0]
                raise InvalidParameterError(f"{label} is not finite at x={bad:.6g}")


def make_phase_model(eps, sigma, rho, drift=0.0):
    """Phase observed through ``sin``; Brownian phase unless ``drift`` is set.

    Returns the model and the lock domain ``(-pi, pi)``.
    """
    eps, sigma, rho = (_positive(n, v) for n, v in (("eps", eps), ("sigma", sigma), ("rho", rho)))
    beta = float(drift)
    if not np.isfinite(beta):
        raise InvalidParameterError(f"drift must be finite, got {drift!r}")

    def m(x, t=0.0):
        return beta + 0.0 * np.asarray(x, dtype=float)

    def dm(x, t=0.0):
        return 0.0 * np.asarray(x, dtype=float)

    def h(x, t=0.0):
        return np.sin(x)

    def dh(x, t=0.0):
        return np.cos(x)

    jit = CompiledFunctions(_k.phase_drift, _k.phase_meas, _k.zero_deriv,
                            _k.phase_meas_deriv, (beta,))
    model = DiffusionModel(m, h, sigma, rho, eps, meas_deriv=dh, drift_deriv=dm,
                           period=2.0 * np.pi, name="phase", compiled=jit)
    return model, LockDomain(-np.pi, np.pi)


def make_linear_model(a, c, eps, sigma, rho):
    """Linear drift ``a*x`` observed as ``c*x``."""
    a, c = float(a), float(c)

    def m(x, t=0.0):
        return a * np.asarray(x, dtype=float)

    def dm(x, t=0.0):
        return a + 0.0 * np.asarray(x, dtype=float)

    def h(x, t=0.0):
        return c * np.asarray(x, dtype=float)

    def dh(x, t=0.0):
        return c + 0.0 * np.asarray(x, dtype=float)

    jit = CompiledFunctions(_k.linear_drift, _k.linear_meas, _k.linear_drift_deriv,
                            _k.linear_meas_deriv, (a, c))
    return DiffusionModel(m, h, sigma, rho, eps, meas_deriv=dh, drift_deriv=dm, name="linear",
                          compiled=jit)
