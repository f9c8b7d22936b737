"""Error paths, first exits from the lock domain, and censoring."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ExitInfo:
    """First grid exit of an error path, censored at the horizon."""

    exited: bool
    tau_index: Optional[int]
    tau: float


def error_path(x_path, xhat_path):
    x = np.asarray(x_path, dtype=float)
    xh = np.asarray(xhat_path, dtype=float)
    if x.shape != xh.shape:
        raise InvalidArgumentError(f"length mismatch: {x.shape} vs {xh.shape}")
    return x - xh


def first_exit(e_path, domain, grid):
    """First index with ``e <= lo`` or ``e >= hi``; touching the boundary is an exit."""
    e = np.asarray(e_path, dtype=float)
    if e.shape != (grid.n_steps + 1,):
        raise InvalidArgumentError(f"error path has {e.shape[0]} entries, expected {grid.n_steps + 1}")
    out = np.flatnonzero((e <= domain.lo) | (e >= domain.hi))
    if out.size == 0:
        return ExitInfo(False, None, grid.T)
    i = int(out[0])
    return ExitInfo(True, i, i * grid.dt)


def exit_indices(e, lo, hi, n_steps):
    """Vectorised first exits for the rows of ``e``; ``n_steps + 1`` marks no exit."""
    hit = (e <= lo) | (e >= hi)
    any_hit = hit.any(axis=-1)
    idx = np.argmax(hit, axis=-1)
    return np.where(any_hit, idx, n_steps + 1)
