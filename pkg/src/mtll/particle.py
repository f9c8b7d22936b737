"""Importance-weighted particle ensembles for conditional lock statistics.

Particles follow the prior error dynamics and carry the log-likelihood of
the observed increments.  No resampling is done: the conditional mean time
to lose lock is a self-normalised importance-sampling average.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_count, check_increments
from .errors import DegenerateEnsembleError, InvalidArgumentError, NumericalOverflowError
from .lock import ExitInfo
from .rng import STREAM_PARTICLES, keyed_normals


def log_lik_increment(H_val, dy, dt, eps, rho):
    """``(H*dy - H**2*dt/2) / (eps*rho)**2``, the per-step log weight."""
    return (H_val * dy - 0.5 * H_val * H_val * dt) / (eps * eps * rho * rho)


def _logsumexp(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf
    top = np.max(a)
    if not np.isfinite(top):
        return top
    return top + np.log(np.sum(np.exp(a - top)))


@dataclass
class ParticleEnsemble:
    """Result of propagating ``n`` prior particles against one observation record.

    ``log_weights`` are frozen at each particle's exit (or at the horizon);
    ``log_weights_full`` keep accumulating along the continued prior path.
    The ``log_*`` curves hold, per grid node, the log-sums that survival
    curves are built from.  Full paths are kept only on request.
    """

    grid: object
    tau_index: np.ndarray
    exited: np.ndarray
    log_weights: np.ndarray
    log_weights_full: np.ndarray
    e_final: np.ndarray
    log_alive: np.ndarray
    log_total_frozen: np.ndarray
    log_total_full: np.ndarray
    log_sq_frozen: np.ndarray
    e_paths: Optional[np.ndarray] = None
    log_weight_paths: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.tau_index.shape[0]

    @property
    def taus(self):
        """Exit times censored at the horizon (``tau ^ T``)."""
        return self.tau_index * self.grid.dt

    def exit_info(self, j):
        if self.exited[j]:
            return ExitInfo(True, int(self.tau_index[j]), float(self.taus[j]))
        return ExitInfo(False, None, self.grid.T)

    def effective_sample_size(self):
        """``(sum w)**2 / sum w**2`` of the frozen weights at each node."""
        return np.exp(2.0 * self.log_total_frozen - self.log_sq_frozen)


def propagate_ensemble(model, domain, grid, n, dy_obs, xhat_path, seed, e0=0.0,
                       keep_paths=False):
    """Propagate ``n`` prior error particles and weight them by ``dy_obs``.

    Particle ``j`` draws its state noise from the keyed stream
    ``(seed, particles, j, step)``, independent of ``n``.
    """
    n = check_count(n, "n")
    N = grid.n_steps
    dy_obs = check_increments(dy_obs, N, "dy_obs")
    xhat = np.asarray(xhat_path, dtype=float)
    if xhat.shape != (N + 1,):
        raise InvalidArgumentError(f"xhat_path has shape {xhat.shape}, expected ({N + 1},)")
    dt = grid.dt
    sq = np.sqrt(dt)
    sn = model.state_noise
    scale = 1.0 / (model.eps * model.eps * model.rho * model.rho)
    ids = np.arange(n)

    e = np.full(n, float(e0))
    ell = np.zeros(n)
    ell_full = np.zeros(n)
    alive = domain.contains(e)
    tau = np.where(alive, N, 0)

    log_alive = np.empty(N + 1)
    log_tot = np.empty(N + 1)
    log_full = np.empty(N + 1)
    log_sq = np.empty(N + 1)
    if keep_paths:
        e_paths = np.empty((n, N + 1))
        l_paths = np.empty((n, N + 1))
        e_paths[:, 0] = e
        l_paths[:, 0] = 0.0

    def record(i):
        log_alive[i] = _logsumexp(ell[alive])
        log_tot[i] = _logsumexp(ell)
        log_full[i] = _logsumexp(ell_full)
        log_sq[i] = _logsumexp(2.0 * ell)

    record(0)
    for i in range(N):
        t = i * dt
        x = xhat[i] + e
        H = model.h(x, t)
        M = model.m(x, t) - (xhat[i + 1] - xhat[i]) / dt
        inc = (H * dy_obs[i] - 0.5 * H * H * dt) * scale
        ell_full += inc
        ell[alive] += inc[alive]
        z = keyed_normals(seed, STREAM_PARTICLES, ids, i)[:, 0]
        e = e + dt * M + sn * (sq * z)
        if not np.all(np.isfinite(e)):
            raise NumericalOverflowError(f"non-finite particle state at step {i}", step=i)
        left = alive & ~domain.contains(e)
        tau[left] = i + 1
        alive &= ~left
        record(i + 1)
        if keep_paths:
            e_paths[:, i + 1] = e
            l_paths[:, i + 1] = ell

    return ParticleEnsemble(
        grid=grid,
        tau_index=tau,
        exited=~alive,
        log_weights=ell,
        log_weights_full=ell_full,
        e_final=e,
        log_alive=log_alive,
        log_total_frozen=log_tot,
        log_total_full=log_full,
        log_sq_frozen=log_sq,
        e_paths=e_paths if keep_paths else None,
        log_weight_paths=l_paths if keep_paths else None,
    )


def _normalised(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise DegenerateEnsembleError("empty ensemble")
    w = np.exp(lw - np.max(lw))
    if not np.any(w > 0) or not np.all(np.isfinite(w)):
        raise DegenerateEnsembleError("all particle weights vanished")
    return w


def weighted_mtll(taus, log_weights):
    """Self-normalised weighted mean of exit times.

    Weights are pooled per distinct exit time and every sum is correctly
    rounded (``math.fsum``), so the result does not depend on particle order.
    """
    taus = np.asarray(taus, dtype=float)
    w = _normalised(log_weights)
    if taus.shape != w.shape:
        raise InvalidArgumentError("taus and log_weights differ in length")
    levels, inv = np.unique(taus, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(levels.size + 1))
    mass = [math.fsum(w[order[a:b]]) for a, b in zip(bounds[:-1], bounds[1:])]
    num = math.fsum(float(t) * m for t, m in zip(levels, mass))
    return num / math.fsum(mass)


def weighted_mtll_stderr(taus, log_weights):
    """Delta-method standard error of :func:`weighted_mtll`."""
    taus = np.asarray(taus, dtype=float)
    w = _normalised(log_weights)
    w = w / np.sum(w)
    mu = np.sum(w * taus)
    return float(np.sqrt(np.sum(w * w * (taus - mu) ** 2)))


def conditional_mtll(ens, T=None):
    """Conditional mean time to lose lock given the ensemble's observations."""
    if ens.n == 0:
        raise DegenerateEnsembleError("empty ensemble")
    if T is None or T == ens.grid.T:
        return weighted_mtll(ens.taus, ens.log_weights)
    if ens.log_weight_paths is None:
        raise InvalidArgumentError("a horizon shorter than the grid needs keep_paths=True")
    k = int(round(T / ens.grid.dt))
    if not 0 < k <= ens.grid.n_steps:
        raise InvalidArgumentError(f"horizon {T} outside (0, {ens.grid.T}]")
    idx = np.minimum(ens.tau_index, k)
    lw = ens.log_weight_paths[np.arange(ens.n), idx]
    return weighted_mtll(idx * ens.grid.dt, lw)


def conditional_mtll_stderr(ens):
    return weighted_mtll_stderr(ens.taus, ens.log_weights)


def survival_curve(ens, mode="frozen"):
    """Conditional survival ``S(t_i)`` for ``mode`` in {"frozen", "full"}."""
    if mode == "frozen":
        den = ens.log_total_frozen
    elif mode == "full":
        den = ens.log_total_full
    else:
        raise InvalidArgumentError(f"unknown weighting mode {mode!r}")
    if not np.all(np.isfinite(den)):
        raise DegenerateEnsembleError("survival denominator vanished")
    return np.exp(ens.log_alive - den)


def mtll_from_survival(S, grid):
    """Trapezoidal integral of a survival curve over ``[0, T]``."""
    S = np.asarray(S, dtype=float)
    if S.shape != (grid.n_steps + 1,):
        raise InvalidArgumentError(f"survival curve has {S.shape[0]} nodes, expected {grid.n_steps + 1}")
    return float(np.trapezoid(S, dx=grid.dt))


def write_survival_csv(path, ens):
    """Columns ``t, S_frozen, S_full, n_eff``."""
    t = ens.grid.times
    cols = (survival_curve(ens, "frozen"), survival_curve(ens, "full"), ens.effective_sample_size())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "S_frozen", "S_full", "n_eff"])
        for i in range(len(t)):
            w.writerow([repr(float(t[i]))] + [repr(float(c[i])) for c in cols])
