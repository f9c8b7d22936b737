"""Finite-difference Zakai solver with absorbing ends.

The field is the unnormalised conditional density of the error restricted
to paths that have not left the lock domain.  Each time step multiplies by
the likelihood factor of the observed increment (evaluated at the start of
the step, as in the particle weights) and then advances the Fokker-Planck
operator with a conservative upwind scheme.  A companion field on an
enlarged domain supplies the normaliser, so their mass ratio is the
conditional survival probability.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_count, check_increments
from .errors import ConfigurationError, InvalidArgumentError, InvalidInitializationError


@dataclass
class ZakaiField:
    """Grid function on ``G + 1`` nodes over ``[lo, hi]``, boundary nodes pinned to 0.

    Values are stored as ``phi * exp(log_scale)`` so long runs neither
    overflow nor underflow.
    """

    nodes: np.ndarray
    phi: np.ndarray
    log_scale: float = 0.0
    k: int = 0

    @property
    def de(self):
        return self.nodes[1] - self.nodes[0]

    @property
    def G(self):
        return self.nodes.size - 1

    @property
    def lo(self):
        return self.nodes[0]

    @property
    def hi(self):
        return self.nodes[-1]

    @property
    def mass(self):
        """Trapezoidal mass of the stored (scaled) values."""
        return float(np.trapezoid(self.phi, dx=self.de))

    @property
    def log_mass(self):
        m = self.mass
        return self.log_scale + (math.log(m) if m > 0 else -math.inf)

    def density(self):
        return self.phi * math.exp(self.log_scale)

    def energy(self, eps):
        """``-eps**2 * log(phi)``: the small-noise energy landscape (diagnostic)."""
        with np.errstate(divide="ignore"):
            return -(eps * eps) * (np.log(self.phi) + self.log_scale)


def init_field(domain, G, init=None, nodes=None, at=0.0):
    """Initial field; by default all mass in the cell containing ``at`` (0).

    ``init`` may be an array over the nodes or a callable of the node
    positions.  The result is scaled to unit trapezoidal mass.
    """
    G = check_count(G, "G", minimum=8)
    if nodes is None:
        nodes = np.linspace(domain.lo, domain.hi, G + 1)
    de = nodes[1] - nodes[0]
    if init is None:
        phi = np.zeros(G + 1)
        i0 = int(np.argmin(np.abs(nodes - at)))
        if i0 in (0, G):
            raise InvalidInitializationError("e = 0 falls on a boundary node")
        phi[i0] = 1.0 / de
    else:
        phi = np.asarray(init(nodes) if callable(init) else init, dtype=float) * np.ones(G + 1)
        if phi.shape != (G + 1,):
            raise InvalidInitializationError(f"init has shape {phi.shape}, expected ({G + 1},)")
        if np.any(phi < 0) or not np.all(np.isfinite(phi)):
            raise InvalidInitializationError("initial density must be finite and nonnegative")
        phi = phi.copy()
        phi[0] = phi[-1] = 0.0
        mass = np.trapezoid(phi, dx=de)
        if mass <= 0:
            raise InvalidInitializationError("initial density has zero mass")
        phi /= mass
    return ZakaiField(np.asarray(nodes, dtype=float), phi)


def _stable_substeps(field, model, M_max, dt):
    """Fewest sub-steps keeping the explicit scheme positive."""
    de = field.de
    diff = model.state_noise ** 2 * dt / de ** 2
    adv = M_max * dt / de
    return max(1, math.ceil(max(diff / 0.5, adv / 0.5) * (1 + 1e-12)))


def step_field(field, model, xhat_value, dxhat, dy, dt, t=0.0, substeps=1):
    """Advance ``field`` by one observation step of length ``dt`` (in place).

    The Fokker-Planck part is split into ``substeps`` explicit sub-steps; each
    must satisfy ``(eps*sigma)**2 * dt_sub / de**2 <= 1/2`` and
    ``max|M| * dt_sub / de <= 1/2``.
    """
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    substeps = check_count(substeps, "substeps")
    de = field.de
    e = field.nodes
    faces = 0.5 * (e[1:] + e[:-1])
    M = model.m(xhat_value + faces, t) - dxhat / dt
    M = np.asarray(M, dtype=float) * np.ones_like(faces)
    h_sub = dt / substeps
    D = 0.5 * model.state_noise ** 2
    if 2.0 * D * h_sub / de ** 2 > 0.5 or np.max(np.abs(M)) * h_sub / de > 0.5:
        need = _stable_substeps(field, model, float(np.max(np.abs(M))), dt)
        raise ConfigurationError(
            f"explicit step unstable for de={de:.4g}: use dt <= {dt / need:.4g} "
            f"(or substeps >= {need}, or fewer than G={field.G} cells)")

    H = np.asarray(model.h(xhat_value + e, t), dtype=float) * np.ones_like(e)
    expo = (H * dy - 0.5 * H * H * dt) / (model.eps ** 2 * model.rho ** 2)
    expo[0] = expo[-1] = -np.inf
    top = np.max(expo[1:-1])
    phi = field.phi * np.exp(expo - top)
    log_scale = field.log_scale + top

    Mp = np.maximum(M, 0.0)
    Mm = np.minimum(M, 0.0)
    r = h_sub / de
    for _ in range(substeps):
        flux = Mp * phi[:-1] + Mm * phi[1:] - D * (phi[1:] - phi[:-1]) / de
        phi[1:-1] -= r * (flux[1:] - flux[:-1])
        phi[0] = phi[-1] = 0.0
    np.maximum(phi, 0.0, out=phi)

    top = np.max(phi)
    if top > 0:
        phi /= top
        log_scale += math.log(top)
    field.phi = phi
    field.log_scale = log_scale
    field.k += 1
    return field


def survival_ratio(absorbed, free):
    """Conditional survival: mass of the absorbed field over the free field."""
    la, lf = absorbed.log_mass, free.log_mass
    if not np.isfinite(lf):
        raise InvalidArgumentError("free-space field has no mass")
    if not np.isfinite(la):
        return 0.0
    return math.exp(la - lf)


def free_domain_cells(domain, G, model, T):
    """Cells added on each side for the free-space companion field."""
    de = domain.width / G
    pad = 6.0 * model.state_noise * math.sqrt(T)
    return max(1, math.ceil(pad / de))


@dataclass
class ZakaiRun:
    times: np.ndarray
    survival: np.ndarray
    log_mass_abs: np.ndarray
    log_mass_free: np.ndarray
    absorbed: ZakaiField
    free: ZakaiField

    def mtll(self):
        return float(np.trapezoid(self.survival, dx=self.times[1] - self.times[0]))


def zakai_survival(model, domain, dy_obs, xhat_path, grid, G, e0=0.0):
    """Run the absorbed and free fields along one observation record."""
    N = grid.n_steps
    dy_obs = check_increments(dy_obs, N, "dy_obs")
    xhat = np.asarray(xhat_path, dtype=float)
    if xhat.shape != (N + 1,):
        raise InvalidArgumentError(f"xhat_path has shape {xhat.shape}, expected ({N + 1},)")
    if not domain.lo < e0 < domain.hi:
        raise InvalidInitializationError("initial error outside the lock domain")
    G = check_count(G, "G", minimum=8)
    de = domain.width / G
    pad = free_domain_cells(domain, G, model, grid.T)
    nodes_free = domain.lo + de * np.arange(-pad, G + 1 + pad)
    absorbed = init_field(domain, G, at=e0)
    free = init_field(domain, G + 2 * pad, nodes=nodes_free, at=e0)

    M_max = 0.0
    for i in range(N):
        for fld in (absorbed, free):
            fm = model.m(xhat[i] + fld.nodes, i * grid.dt)
            M_max = max(M_max, float(np.max(np.abs(fm - (xhat[i + 1] - xhat[i]) / grid.dt))))
    substeps = _stable_substeps(free, model, M_max, grid.dt)

    surv = np.empty(N + 1)
    la = np.empty(N + 1)
    lf = np.empty(N + 1)
    surv[0] = survival_ratio(absorbed, free)
    la[0], lf[0] = absorbed.log_mass, free.log_mass
    for i in range(N):
        for fld in (absorbed, free):
            step_field(fld, model, xhat[i], xhat[i + 1] - xhat[i], dy_obs[i], grid.dt,
                       t=i * grid.dt, substeps=substeps)
        surv[i + 1] = survival_ratio(absorbed, free)
        la[i + 1], lf[i + 1] = absorbed.log_mass, free.log_mass
    return ZakaiRun(grid.times, surv, la, lf, absorbed, free)


def mtll_oracle(model, domain, dy_obs, xhat_path, grid, G):
    """Deterministic conditional ``E[tau ^ T | y]`` from the Zakai survival curve."""
    return zakai_survival(model, domain, dy_obs, xhat_path, grid, G).mtll()


def write_zakai_csv(path, run):
    """Columns ``t, survival_ratio, mass_abs, mass_free``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "survival_ratio", "mass_abs", "mass_free"])
        for t, s, a, f in zip(run.times, run.survival, run.log_mass_abs, run.log_mass_free):
            w.writerow([repr(float(t)), repr(float(s)), repr(math.exp(a)), repr(math.exp(f))])
