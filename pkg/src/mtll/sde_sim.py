"""Seedable Euler-Maruyama simulation of state/observation pairs."""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_count, check_positive
from .errors import CausalityViolationError, NumericalOverflowError
from .rng import STREAM_TRUTH, keyed_normals


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*dt`` for ``i = 0..n_steps``."""

    dt: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "dt", check_positive(self.dt, "dt"))
        object.__setattr__(self, "n_steps", check_count(self.n_steps, "n_steps"))

    @classmethod
    def from_horizon(cls, dt, T):
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"horizon T={T} is not a positive multiple of dt={dt}")
        return cls(dt, n)

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class SamplePath:
    """State values on the grid plus the observation increments between nodes.

    For error-coordinate paths ``x`` holds the error and ``xhat`` the
    estimate that produced it.
    """

    grid: TimeGrid
    x: np.ndarray
    dy: np.ndarray
    xhat: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.grid.n_steps
        if self.x.shape != (n + 1,) or self.dy.shape != (n,):
            raise ValueError(f"path lengths {self.x.shape}, {self.dy.shape} do not match N={n}")

    @property
    def y(self):
        """Cumulative observation with y(0) = 0."""
        return np.concatenate(([0.0], np.cumsum(self.dy)))


def path_noise(seed, n_steps, trajectory=0, stream=STREAM_TRUTH):
    """Unit normals driving a trajectory: shape (n_steps, 2)."""
    return keyed_normals(seed, stream, trajectory, np.arange(n_steps))


def _overflow(i, what):
    return NumericalOverflowError(f"non-finite {what} at step {i}", step=i)


def _euler(model, grid, x0, z):
    dt = grid.dt
    sq = np.sqrt(dt)
    sn, so = model.state_noise, model.obs_noise
    n = grid.n_steps
    x = np.empty(n + 1)
    dy = np.empty(n)
    x[0] = x0
    xi = float(x0)
    for i in range(n):
        t = i * dt
        mi = model.m(xi, t)
        hi = model.h(xi, t)
        if not (np.isfinite(mi) and np.isfinite(hi)):
            raise _overflow(i, "drift/measurement")
        dy[i] = dt * hi + so * (sq * z[i, 1])
        xi = xi + dt * mi + sn * (sq * z[i, 0])
        if not np.isfinite(xi):
            raise _overflow(i, "state")
        x[i + 1] = xi
    return SamplePath(grid, x, dy)


def simulate_pair(model, grid, x0, seed, trajectory=0):
    """Simulate ``(x, dy)`` by the Euler scheme with keyed Gaussian increments.

    The output depends only on ``(model, grid, x0, seed, trajectory)``.
    """
    return _euler(model, grid, x0, path_noise(seed, grid.n_steps, trajectory))


def zero_noise_pair(model, grid, x0):
    """Deterministic Euler integration with both noise increments set to zero."""
    return _euler(model, grid, x0, np.zeros((grid.n_steps, 2)))


class CausalView:
    """Read-only window onto the observation increments seen so far."""

    def __init__(self, buffer, available):
        self._buf = buffer
        self._n = available

    def __len__(self):
        return self._n

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            start, stop, step = idx.indices(len(self._buf))
            if idx.stop is not None and stop > self._n:
                raise CausalityViolationError(
                    f"requested dy[{start}:{stop}] but only {self._n} increments are available")
            stop = min(stop, self._n)
            return self._buf[start:stop:step].copy()
        i = int(idx)
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise CausalityViolationError(
                f"requested dy[{idx}] but only {self._n} increments are available")
        return float(self._buf[i])

    def to_array(self):
        return self._buf[: self._n].copy()


def xhat_from_path(xhat_path):
    """Wrap a precomputed estimate path as an estimate stream."""
    xhat_path = np.asarray(xhat_path, dtype=float)

    def stream(i, view):
        return xhat_path[i]

    return stream


def simulate_error_pair(model, grid, e0, xhat_fn, seed, trajectory=0):
    """Simulate the error coordinate ``e = x - xhat`` for a causal estimator.

    ``xhat_fn(i, view)`` must return the estimate at ``t_i`` and may only read
    ``view[0..i-1]``; reading further raises ``CausalityViolationError``.
    """
    z = path_noise(seed, grid.n_steps, trajectory)
    dt = grid.dt
    sq = np.sqrt(dt)
    sn, so = model.state_noise, model.obs_noise
    n = grid.n_steps
    e = np.empty(n + 1)
    xh = np.empty(n + 1)
    dy = np.empty(n)
    e[0] = e0
    xh[0] = float(xhat_fn(0, CausalView(dy, 0)))
    for i in range(n):
        t = i * dt
        xi = xh[i] + e[i]
        mi = model.m(xi, t)
        hi = model.h(xi, t)
        if not (np.isfinite(mi) and np.isfinite(hi)):
            raise _overflow(i, "drift/measurement")
        dy[i] = dt * hi + so * (sq * z[i, 1])
        xh[i + 1] = float(xhat_fn(i + 1, CausalView(dy, i + 1)))
        e[i + 1] = (xi + dt * mi + sn * (sq * z[i, 0])) - xh[i + 1]
        if not np.isfinite(e[i + 1]):
            raise _overflow(i, "error state")
    return SamplePath(grid, e, dy, xhat=xh)


def write_path_csv(path, sample):
    """Write columns ``t, x, dy``; the last row has an empty ``dy``."""
    t = sample.grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "dy"])
        for i in range(len(t)):
            dy = repr(float(sample.dy[i])) if i < len(sample.dy) else ""
            w.writerow([repr(float(t[i])), repr(float(sample.x[i])), dy])


def read_path_csv(path):
    """Inverse of :func:`write_path_csv`; returns ``(grid, x, dy)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    x = np.array([float(r["x"]) for r in rows]) if rows and rows[0].get("x") not in (None, "") else None
    dy = np.array([float(r["dy"]) for r in rows if r.get("dy") not in (None, "")])
    if len(t) < 2:
        raise ValueError(f"{path}: need at least two rows")
    grid = TimeGrid(float(t[1] - t[0]), len(dy))
    return grid, x, dy
