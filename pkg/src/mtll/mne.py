"""Causal minimum-noise-energy filter by dynamic programming on a state lattice.

The filter keeps, for every lattice cell, the least noise energy

    sum_k (dx_k - dt*m)**2 / (sigma**2 dt) + (dy_k - dt*h)**2 / (rho**2 dt)

over all lattice paths from the initial state that end in that cell.  The
causal estimate at step ``k`` is the cell with least energy; backtracing
from the final minimum gives the noncausal minimising path.  The common
factor ``1/eps**2`` is dropped since it changes no minimiser.
"""

import csv
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numba import njit
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_increments, check_positive
from .base import CausalFilter
from .errors import InvalidParameterError, NoFeasiblePathError


def transition_cost(x_prev, x_next, dy, dt, model, t=0.0):
    """Noise energy of one lattice transition, drift and measurement taken at ``x_prev``."""
    a = x_next - x_prev - dt * model.m(x_prev, t)
    b = dy - dt * model.h(x_prev, t)
    return a ** 2 / (model.sigma ** 2 * dt) + b ** 2 / (model.rho ** 2 * dt)


@njit(cache=True)
def _dp_run(V, nbr, trans, hdt, dys, r2dt, normalize, est, bp, offset):
    R, G = V.shape
    S = nbr.shape[1]
    keep_bp = bp.shape[0] > 0
    row = np.empty(G)
    obs = np.empty(G)
    inf = np.inf
    for c in range(dys.shape[0]):
        for r in range(R):
            dy = dys[c, r]
            for j in range(G):
                b = dy - hdt[j]
                obs[j] = b * b / r2dt
            for i in range(G):
                best = inf
                arg = -1
                for s in range(S):
                    j = nbr[i, s]
                    if j < 0:
                        continue
                    vj = V[r, j]
                    if vj == inf:
                        continue
                    cost = vj + (trans[i, s] + obs[j])
                    if cost < best or (cost == best and j < arg):
                        best = cost
                        arg = j
                row[i] = best
                if keep_bp:
                    bp[c, r, i] = arg
            top = inf
            k = -1
            for i in range(G):
                V[r, i] = row[i]
                if row[i] < top:
                    top = row[i]
                    k = i
            est[c, r] = k
            if normalize and k >= 0:
                offset[r] += top
                for i in range(G):
                    V[r, i] -= top


@dataclass
class EnergyLattice:
    """State grid with the running minimum noise energy of paths ending in each cell.

    ``offset`` accumulates whatever was subtracted to keep ``V`` bounded, so
    the true cost-to-come is ``V + offset``.
    """

    xs: np.ndarray
    V: np.ndarray
    band: int
    periodic: bool = False
    k: int = 0
    offset: float = 0.0
    backpointers: Optional[List[np.ndarray]] = None

    @property
    def G(self):
        return self.xs.size

    @property
    def dx(self):
        return self.xs[1] - self.xs[0] if self.xs.size > 1 else 0.0

    @property
    def span(self):
        """Period of the wrapped grid, or the window length."""
        return self.G * self.dx if self.periodic else self.xs[-1] - self.xs[0]

    @property
    def costs(self):
        return self.V + self.offset


def default_band(model, dt, dx, xs, t=0.0):
    """Smallest band ``W`` with ``W*dx >= max|m|*dt + 6*eps*sigma*sqrt(dt)``."""
    if dx <= 0:
        return 0
    m_max = float(np.max(np.abs(np.asarray(model.m(xs, t), dtype=float) * np.ones_like(xs))))
    reach = m_max * dt + 6.0 * model.state_noise * math.sqrt(dt)
    return max(1, math.ceil(reach / dx - 1e-9))


def make_lattice(model, dt, x0=0.0, n_cells=None, x_lo=None, x_hi=None, band=None,
                 periodic=None, prior_var=None, keep_backpointers=False):
    """Build the lattice and its initial energies.

    Periodic models get a wrapped grid of one period centred on ``x0``
    (default 128 cells); otherwise the window defaults to
    ``[x0 - 2*pi, x0 + 2*pi]`` with 257 cells.  The initial energy is 0 at
    the cell nearest ``x0`` and infinite elsewhere, or ``(x - x0)**2 /
    prior_var`` when a prior variance is given.
    """
    dt = check_positive(dt, "dt")
    x0 = float(x0)
    if periodic is None:
        periodic = model.period is not None and x_lo is None and x_hi is None
    if periodic:
        if model.period is None:
            raise InvalidParameterError("a wrapped lattice needs a periodic model")
        G = check_count(128 if n_cells is None else n_cells, "n_cells", minimum=2)
        dx = model.period / G
        xs = x0 + (np.arange(G) - G // 2) * dx
        i0 = G // 2
    else:
        G = check_count(257 if n_cells is None else n_cells, "n_cells", minimum=1)
        lo = x0 - 2 * np.pi if x_lo is None else float(x_lo)
        hi = x0 + 2 * np.pi if x_hi is None else float(x_hi)
        if G > 1 and not lo < hi:
            raise InvalidParameterError(f"lattice window needs x_lo < x_hi, got [{lo}, {hi}]")
        xs = np.linspace(lo, hi, G) if G > 1 else np.array([x0])
        dx = xs[1] - xs[0] if G > 1 else 0.0
        i0 = int(np.argmin(np.abs(xs - x0)))
    if band is None or band == "auto":
        band = default_band(model, dt, dx, xs)
    band = check_count(band, "band", minimum=0)
    band = min(band, (G - 1) // 2 if periodic else G - 1)
    if prior_var is None:
        V = np.full(G, np.inf)
        V[i0] = 0.0
    else:
        prior_var = check_positive(prior_var, "prior_var")
        V = (xs - x0) ** 2 / prior_var
    return EnergyLattice(xs, V, band, bool(periodic),
                         backpointers=[] if keep_backpointers else None)


def _tables(lattice, model, dt, t):
    """Predecessor indices, state-transition costs and ``dt*h`` on the lattice.

    ``trans[i, s]`` is the state part of the cost of moving from
    ``nbr[i, s]`` to cell ``i``; missing neighbours are marked ``-1``.
    """
    xs = lattice.xs
    G, W = xs.size, lattice.band
    mdt = dt * (np.asarray(model.m(xs, t), dtype=float) * np.ones_like(xs))
    hdt = dt * (np.asarray(model.h(xs, t), dtype=float) * np.ones_like(xs))
    d = np.arange(-W, W + 1)
    i = np.arange(G)[:, None]
    j = i - d[None, :]
    if lattice.periodic:
        j = j % G
        disp = np.broadcast_to(d * lattice.dx, j.shape)
    else:
        ok = (j >= 0) & (j < G)
        j = np.where(ok, j, -1)
        disp = xs[i] - xs[np.where(ok, j, 0)]
    a = disp - mdt[np.maximum(j, 0)]
    trans = a * a / (model.sigma ** 2 * dt)
    return np.ascontiguousarray(j, dtype=np.int64), np.ascontiguousarray(trans), hdt


def viterbi_step(lattice, dy_k, dt, model, t=0.0, normalize=False):
    """Advance the lattice by one observation increment (in place).

    ``t`` is the time at the start of the step, where drift and measurement
    are evaluated.  Ties between predecessors go to the smaller index.
    Unreachable cells stay at ``+inf``.
    """
    nbr, trans, hdt = _tables(lattice, model, dt, t)
    V = lattice.V[None, :].copy()
    est = np.empty((1, 1), dtype=np.int64)
    keep = lattice.backpointers is not None
    bp = np.empty((1, 1, lattice.G) if keep else (0, 1, lattice.G), dtype=np.int64)
    offset = np.zeros(1)
    _dp_run(V, nbr, trans, hdt, np.array([[float(dy_k)]]), model.rho ** 2 * dt, normalize,
            est, bp, offset)
    lattice.V = V[0]
    lattice.offset += offset[0]
    lattice.k += 1
    if keep:
        lattice.backpointers.append(bp[0, 0].copy())
    return lattice


def _lift(prev_index, new_index, G):
    """Signed index step to the lift of ``new_index`` nearest to ``prev_index``."""
    return (new_index - prev_index + G // 2) % G - G // 2


def causal_estimate(lattice, near=None):
    """State of the least-energy cell (smallest index among ties).

    On a wrapped lattice, ``near`` selects the lift closest to a previous
    estimate.
    """
    V = lattice.V
    i = int(np.argmin(V))
    if not np.isfinite(V[i]):
        raise NoFeasiblePathError(f"no feasible lattice path at step {lattice.k}")
    x = float(lattice.xs[i])
    if lattice.periodic and near is not None:
        x += lattice.span * round((near - x) / lattice.span)
    return x


def smooth_path(lattice):
    """Backtrace the least-energy path from the final step to the start."""
    if lattice.backpointers is None:
        raise InvalidParameterError("lattice was built without keep_backpointers=True")
    V = lattice.V
    i = int(np.argmin(V))
    if not np.isfinite(V[i]):
        raise NoFeasiblePathError(f"no feasible lattice path at step {lattice.k}")
    idx = np.empty(len(lattice.backpointers) + 1, dtype=np.int64)
    idx[-1] = i
    for k in range(len(lattice.backpointers) - 1, -1, -1):
        i = int(lattice.backpointers[k][i])
        idx[k] = i
    if not lattice.periodic:
        return lattice.xs[idx]
    steps = _lift(idx[:-1], idx[1:], lattice.G)
    lifted = idx[0] + np.concatenate(([0], np.cumsum(steps)))
    return _unwrapped(lattice, lifted)


def _unwrapped(lattice, lifted):
    """Positions of lifted cell indices on a wrapped lattice, exact at the centre cell."""
    c = lattice.G // 2
    return lattice.xs[c] + (lifted - c) * lattice.dx


def path_cost(path, dy, dt, model):
    """Accumulated transition cost of a state sequence (left to right)."""
    total = 0.0
    for k in range(len(dy)):
        total += transition_cost(path[k], path[k + 1], dy[k], dt, model, k * dt)
    return total


class _MNEState:
    __slots__ = ("V", "offset", "index", "lifted", "values")

    def __init__(self, V, index, lifted):
        self.V = V
        self.offset = np.zeros(V.shape[0])
        self.index = index
        self.lifted = lifted
        self.values = []


class MNEFilter(CausalFilter):
    """Causal minimum-noise-energy filter on a state lattice.

    Parameters
    ----------
    model : DiffusionModel
    dt : float
        Time step of the observation increments.
    x0 : float
        Known initial state.
    n_cells, x_lo, x_hi, band, periodic, prior_var
        Lattice geometry, see :func:`make_lattice`.
    lag : int
        Experimental.  With ``lag > 0`` the output at node ``k`` is the state at
        ``t_k`` on the least-energy path ending ``lag`` steps later (a fixed-lag
        smoother, not a causal estimate).
    keep_values : bool
        Record the energy table at every step in ``values_``.
    """

    def __init__(self, model=None, dt=1e-3, x0=0.0, n_cells=None, x_lo=None, x_hi=None,
                 band=None, periodic=None, prior_var=None, lag=0, keep_values=False):
        self.model = model
        self.dt = dt
        self.x0 = x0
        self.n_cells = n_cells
        self.x_lo = x_lo
        self.x_hi = x_hi
        self.band = band
        self.periodic = periodic
        self.prior_var = prior_var
        self.lag = lag
        self.keep_values = keep_values

    def _setup(self):
        if self.model is None:
            raise InvalidParameterError("MNEFilter needs a model")
        self.lag_ = check_count(self.lag, "lag", minimum=0)
        lat = make_lattice(self.model, self.dt, self.x0, self.n_cells, self.x_lo, self.x_hi,
                           self.band, self.periodic, self.prior_var)
        self.lattice_ = lat
        self.grid_ = lat.xs
        self.cell_width_ = lat.dx
        self.band_ = lat.band
        self.periodic_ = lat.periodic
        if self.model.autonomous:
            self._tab = _tables(lat, self.model, self.dt, 0.0)

    def _initial_estimate(self):
        lat = self.lattice_
        i = int(np.argmin(lat.V))
        return float(lat.xs[i])

    def _batch_init(self, n_rows):
        V0 = np.repeat(self.lattice_.V[None, :], n_rows, axis=0)
        i0 = int(np.argmin(self.lattice_.V))
        return _MNEState(V0, np.full(n_rows, i0, dtype=np.int64), np.full(n_rows, i0, dtype=np.int64))

    def _batch_take(self, state, keep):
        state.V = state.V[keep]
        state.offset = state.offset[keep]
        state.index = state.index[keep]
        state.lifted = state.lifted[keep]

    def _batch_current(self, state):
        return self._positions(state.lifted)

    def _positions(self, lifted):
        lat = self.lattice_
        if lat.periodic:
            return _unwrapped(lat, lifted)
        return lat.xs[lifted]

    def _run(self, state, dys, i0, bp):
        lat = self.lattice_
        C, R = dys.shape
        est = np.empty((C, R), dtype=np.int64)
        r2dt = self.model.rho ** 2 * self.dt
        if self.model.autonomous:
            nbr, trans, hdt = self._tab
            _dp_run(state.V, nbr, trans, hdt, dys, r2dt, True, est, bp, state.offset)
        else:
            for c in range(C):
                nbr, trans, hdt = _tables(lat, self.model, self.dt, (i0 + c) * self.dt)
                _dp_run(state.V, nbr, trans, hdt, dys[c:c + 1], r2dt, True, est[c:c + 1],
                        bp[c:c + 1] if bp.shape[0] else bp, state.offset)
        if np.any(est < 0):
            c = int(np.argwhere(est < 0)[0, 0])
            raise NoFeasiblePathError(f"no feasible lattice path at step {i0 + c + 1}")
        return est

    def _batch_advance(self, state, dys, i0):
        dys = np.ascontiguousarray(dys, dtype=float)
        C, R = dys.shape
        no_bp = np.empty((0, R, self.lattice_.G), dtype=np.int64)
        if self.keep_values:
            out = np.empty((C, R), dtype=np.int64)
            for c in range(C):
                out[c] = self._run(state, dys[c:c + 1], i0 + c, no_bp)[0]
                state.values.append(state.V + state.offset[:, None])
            est = out
        else:
            est = self._run(state, dys, i0, no_bp)
        if self.lattice_.periodic:
            prev = np.concatenate((state.index[None, :], est[:-1]), axis=0)
            lifted = state.lifted[None, :] + np.cumsum(_lift(prev, est, self.lattice_.G), axis=0)
        else:
            lifted = est
        state.index = est[-1].copy()
        state.lifted = lifted[-1].copy()
        return self._positions(lifted)

    def transform(self, X):
        check_is_fitted(self, "is_fitted_")
        dy = check_increments(X)
        if self.lag_:
            return self._fixed_lag(dy)
        state = self._batch_init(1)
        est = self._batch_advance(state, dy[:, None], 0)[:, 0]
        if self.keep_values:
            self.values_ = np.vstack([self.lattice_.V[None, :]] + [v[:1] for v in state.values])
        return np.concatenate(([self._initial_estimate()], est))

    def _fixed_lag(self, dy):
        lat = self.lattice_
        N = dy.shape[0]
        state = self._batch_init(1)
        bp = np.empty((N, 1, lat.G), dtype=np.int64)
        est = self._run(state, np.ascontiguousarray(dy[:, None]), 0, bp)[:, 0]
        idx = np.empty(N + 1, dtype=np.int64)
        idx[0] = int(np.argmin(lat.V))
        for k in range(1, N + 1):
            end = min(k + self.lag_, N)
            i = int(est[end - 1])
            for s in range(end, k, -1):
                i = int(bp[s - 1, 0, i])
            idx[k] = i
        if lat.periodic:
            lifted = idx[0] + np.concatenate(([0], np.cumsum(_lift(idx[:-1], idx[1:], lat.G))))
            return _unwrapped(lat, lifted)
        return lat.xs[idx]


def run_mne_filter(model, grid, dy_obs, x0=0.0, **lattice_config):
    """Causal estimates ``xhat(t_0..t_N)``; estimate ``k`` reads only ``dy[0..k-1]``."""
    dy_obs = check_increments(dy_obs, grid.n_steps, "dy_obs")
    f = MNEFilter(model, dt=grid.dt, x0=x0, **lattice_config).fit()
    return f.transform(dy_obs)


def write_lattice_csv(path, xs, values, every=1):
    """Columns ``k, x_i, V`` for the recorded energy tables."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x_i", "V"])
        for k in range(0, len(values), every):
            for x, v in zip(xs, np.ravel(values[k])):
                w.writerow([k, repr(float(x)), repr(float(v))])
