"""Monte Carlo campaigns comparing the time to lose lock of causal filters.

Realizations are processed in fixed blocks; inside a block all
realizations advance side by side and drop out once every filter has lost
lock.  Block composition never depends on the worker count, so reports are
reproducible bit for bit.
"""

import configparser
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import stats

from . import __version__
from . import _kernels as _k
from .errors import CampaignError, ConfigurationError, InvalidArgumentError, MTLLError
from .mne import MNEFilter
from .model import LockDomain, make_linear_model, make_phase_model
from .particle import (conditional_mtll, conditional_mtll_stderr, propagate_ensemble,
                       write_survival_csv)
from .rng import STREAM_TRUTH, keyed_normals
from .sde_sim import TimeGrid, simulate_pair
from .trackers import ExtendedKalmanFilter, PhaseLockedLoop
from .zakai import write_zakai_csv, zakai_survival

CAUSAL_FILTERS = ("mne", "pll", "ekf")
TEST_HOOKS = ("oracle", "frozen")
REFERENCE = "particle-reference"


@dataclass
class ExperimentConfig:
    """Everything that determines a campaign; plain data so it pickles to workers."""

    model: str = "phase"
    eps: float = 0.3
    sigma: float = 1.0
    rho: float = 1.0
    drift: float = 0.0
    a: float = -1.0
    c: float = 1.0
    x0: float = 0.0
    dt: float = 1e-3
    T: float = 1000.0
    lo: Optional[float] = None
    hi: Optional[float] = None
    filters: List[str] = field(default_factory=lambda: ["mne", "pll", "ekf"])
    pll_gain: Optional[float] = None
    ekf_p0: float = 0.0
    n_cells: Optional[int] = None
    band: Optional[int] = None
    periodic: Optional[bool] = None
    x_lo: Optional[float] = None
    x_hi: Optional[float] = None
    realizations: int = 200
    seed: int = 1
    block_size: int = 25
    chunk: int = 2048
    reference_realizations: int = 0
    particles: int = 100000
    reference_horizon: float = 5.0
    zakai_cells: int = 400
    out: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in ("phase", "linear"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        for name in ("eps", "sigma", "rho", "dt", "T", "reference_horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive, got {v!r}")
        for name, lo in (("realizations", 1), ("block_size", 1), ("chunk", 1),
                         ("reference_realizations", 0), ("particles", 1), ("zakai_cells", 8)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigurationError(f"{name} must be an integer >= {lo}, got {v!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        unknown = [f for f in self.filters if f not in CAUSAL_FILTERS + TEST_HOOKS + (REFERENCE,)]
        if unknown or not self.causal_filters:
            raise ConfigurationError(f"bad filter list {self.filters!r}")
        try:
            self.grid
            self.build()
        except MTLLError as exc:
            raise ConfigurationError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    @property
    def causal_filters(self):
        return [f for f in self.filters if f != REFERENCE]

    @property
    def n_reference(self):
        if self.reference_realizations:
            return min(self.reference_realizations, self.realizations)
        return 1 if REFERENCE in self.filters else 0

    @property
    def grid(self):
        return TimeGrid.from_horizon(self.dt, self.T)

    def build(self):
        """The model and lock domain described by this config."""
        if self.model == "phase":
            model, domain = make_phase_model(self.eps, self.sigma, self.rho, drift=self.drift)
        else:
            model = make_linear_model(self.a, self.c, self.eps, self.sigma, self.rho)
            domain = LockDomain(-np.pi, np.pi)
        if self.lo is not None or self.hi is not None:
            domain = LockDomain(domain.lo if self.lo is None else self.lo,
                                domain.hi if self.hi is None else self.hi)
        model.check_finite(domain)
        return model, domain

    def make_filter(self, name, model):
        if name == "mne":
            f = MNEFilter(model, dt=self.dt, x0=self.x0, n_cells=self.n_cells, x_lo=self.x_lo,
                          x_hi=self.x_hi, band=self.band, periodic=self.periodic)
        elif name == "pll":
            f = PhaseLockedLoop(model, dt=self.dt, x0=self.x0, gain=self.pll_gain)
        elif name == "ekf":
            f = ExtendedKalmanFilter(model, dt=self.dt, x0=self.x0, P0=self.ekf_p0)
        else:
            raise ConfigurationError(f"{name!r} is not a causal filter")
        return f.fit()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


# section -> {key: (field, parser)}
def _opt(parse):
    def f(s):
        return None if s.strip().lower() in ("", "auto", "none") else parse(s)
    return f


def _bool(s):
    s = s.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _names(s):
    return [p.strip() for p in s.replace(",", " ").split() if p.strip()]


_SCHEMA = {
    "model": {"kind": ("model", str), "eps": ("eps", float), "sigma": ("sigma", float),
              "rho": ("rho", float), "drift": ("drift", float), "a": ("a", float),
              "c": ("c", float), "x0": ("x0", float)},
    "grid": {"dt": ("dt", float), "t": ("T", float)},
    "domain": {"lo": ("lo", _opt(float)), "hi": ("hi", _opt(float))},
    "filters": {"names": ("filters", _names), "pll_gain": ("pll_gain", _opt(float)),
                "ekf_p0": ("ekf_p0", float)},
    "lattice": {"n_cells": ("n_cells", _opt(int)), "band": ("band", _opt(int)),
                "periodic": ("periodic", _opt(_bool)), "x_lo": ("x_lo", _opt(float)),
                "x_hi": ("x_hi", _opt(float))},
    "campaign": {"realizations": ("realizations", int), "seed": ("seed", int),
                 "block_size": ("block_size", int), "chunk": ("chunk", int)},
    "reference": {"realizations": ("reference_realizations", int),
                  "particles": ("particles", int), "horizon": ("reference_horizon", float),
                  "zakai_cells": ("zakai_cells", int)},
    "output": {"dir": ("out", str)},
}


def parse_config(text, source="<config>"):
    """Parse the sectioned ``key = value`` format into an :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    values = {}
    for section in cp.sections():
        spec = _SCHEMA.get(section.lower())
        if spec is None:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in spec:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            name, parse = spec[key]
            try:
                values[name] = parse(raw)
            except ValueError as exc:
                raise ConfigurationError(f"{source}: [{section}] {key}: {exc}") from exc
    return ExperimentConfig.from_dict(values)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def _run_block(config, ids):
    """First-exit node of every filter for realizations ``ids`` (-1 = censored)."""
    model, domain = config.build()
    grid = config.grid
    N, dt = grid.n_steps, grid.dt
    sq = math.sqrt(dt)
    sn, so = model.state_noise, model.obs_noise
    names = config.causal_filters
    filters = {n: config.make_filter(n, model) for n in names if n in CAUSAL_FILTERS}
    states = {n: f._batch_init(len(ids)) for n, f in filters.items()}
    exits = {n: np.full(len(ids), -1, dtype=np.int64) for n in names}

    active = np.asarray(ids, dtype=np.int64)
    rows = np.arange(len(ids))
    x = np.full(len(ids), float(config.x0))
    i = 0
    while i < N and active.size:
        C = min(config.chunk, N - i)
        z = keyed_normals(config.seed, STREAM_TRUTH, active[None, :], np.arange(i, i + C)[:, None])
        xs = np.empty((C, active.size))
        dys = np.empty((C, active.size))
        jit = model.compiled
        if jit is not None:
            _k.truth_chunk(x, z, dt, sq, sn, so, i, jit.drift, jit.meas, jit.param_array, xs, dys)
        for c in range(C if jit is None else 0):
            t = (i + c) * dt
            mi = model.m(x, t)
            hi = model.h(x, t)
            dys[c] = dt * hi + so * (sq * z[c, :, 1])
            x = x + dt * mi + sn * (sq * z[c, :, 0])
            xs[c] = x
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(dys))):
            raise CampaignError(f"non-finite truth path in steps {i}..{i + C}")
        done = np.ones(active.size, dtype=bool)
        for n in names:
            if n == "oracle":
                est = xs
            elif n == "frozen":
                est = np.full_like(xs, config.x0)
            else:
                est = filters[n]._batch_advance(states[n], dys, i)
            e = xs - est
            hit = (e <= domain.lo) | (e >= domain.hi)
            first = np.argmax(hit, axis=0)
            new = (exits[n][rows] < 0) & hit.any(axis=0)
            exits[n][rows[new]] = i + 1 + first[new]
            done &= exits[n][rows] >= 0
        i += C
        if done.any():
            keep = ~done
            active, rows, x = active[keep], rows[keep], x[keep]
            for n, f in filters.items():
                f._batch_take(states[n], keep)
    return {n: exits[n].tolist() for n in names}


def _realization_seed(base, r):
    return int(np.random.SeedSequence([base, r]).generate_state(1, np.uint64)[0])


def _run_reference(config, r, out_dir=None):
    """Conditional lock statistics for realization ``r`` over the reference horizon."""
    model, domain = config.build()
    grid = TimeGrid.from_horizon(config.dt, min(config.reference_horizon, config.T))
    path = simulate_pair(model, grid, config.x0, config.seed, trajectory=r)
    records = []
    for name in config.causal_filters:
        if name == "oracle":
            xhat = path.x
        elif name == "frozen":
            xhat = np.full(grid.n_steps + 1, float(config.x0))
        else:
            xhat = config.make_filter(name, model).transform(path.dy)
        ens = propagate_ensemble(model, domain, grid, config.particles, path.dy, xhat,
                                 _realization_seed(config.seed, r))
        run = zakai_survival(model, domain, path.dy, xhat, grid, config.zakai_cells)
        records.append({
            "realization": r,
            "filter": name,
            "horizon": grid.T,
            "conditional_mtll": conditional_mtll(ens),
            "conditional_stderr": conditional_mtll_stderr(ens),
            "zakai_mtll": run.mtll(),
            "final_n_eff": float(ens.effective_sample_size()[-1]),
        })
        if out_dir is not None:
            write_survival_csv(Path(out_dir) / f"survival_r{r}_{name}.csv", ens)
            write_zakai_csv(Path(out_dir) / f"zakai_r{r}_{name}.csv", run)
    return records


def _summarise(exit_nodes, grid):
    N = grid.n_steps
    nodes = np.asarray(exit_nodes, dtype=np.int64)
    censored = nodes < 0
    taus = np.where(censored, N, nodes) * grid.dt
    R = taus.size
    return taus, {
        "mtll": float(np.mean(taus)),
        "stderr": float(np.std(taus, ddof=1) / math.sqrt(R)) if R > 1 else 0.0,
        "censored_fraction": float(np.mean(censored)),
        "n_realizations": R,
        "exit_times": [float(t) for t in taus],
    }


def paired_comparison(taus_a, taus_b):
    """Ratio of mean lock times and a one-sided paired t-test of ``a > b``."""
    a = np.asarray(taus_a, dtype=float)
    b = np.asarray(taus_b, dtype=float)
    ratio = float(np.mean(a) / np.mean(b))
    out = {
        "ratio": ratio,
        "gain_db": float(10.0 * math.log10(ratio)) if ratio > 0 else None,
        "mean_difference": float(np.mean(a - b)),
        "t_statistic": None,
        "p_value": None,
    }
    if a.size > 1 and np.any(a != b):
        res = stats.ttest_rel(a, b, alternative="greater")
        out["t_statistic"] = float(res.statistic)
        out["p_value"] = float(res.pvalue)
    return out


def _assemble(config, block_results, references):
    grid = config.grid
    names = config.causal_filters
    merged = {n: [] for n in names}
    for res in block_results:
        for n in names:
            merged[n].extend(res[n])
    filt, taus = {}, {}
    for n in names:
        taus[n], filt[n] = _summarise(merged[n], grid)
    comparisons = {}
    if "mne" in taus:
        for other in ("pll", "ekf"):
            if other in taus:
                comparisons[f"mne/{other}"] = paired_comparison(taus["mne"], taus[other])
    return {
        "schema": "mtll-report/1",
        "config": config.to_dict(),
        "horizon": grid.T,
        "filters": filt,
        "comparisons": comparisons,
        "reference": references,
    }


def _blocks(config):
    ids = np.arange(config.realizations)
    return [ids[k:k + config.block_size].tolist()
            for k in range(0, config.realizations, config.block_size)]


def run_mtll_experiment(config, workers=1, out_dir=None):
    """Run the campaign described by ``config`` and return the report dict.

    ``workers`` only changes speed.  On failure a partial report is written
    to ``out_dir`` (when given) and :class:`CampaignError` is raised.
    """
    started = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else (Path(config.out) if config.out else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    blocks = _blocks(config)
    results, failure = [], None
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if pool is None:
            futures = None
        else:
            futures = [pool.submit(_run_block, config, b) for b in blocks]
        for k, b in enumerate(blocks):
            try:
                res = futures[k].result() if futures else _run_block(config, b)
            except Exception as exc:  # recorded, then the campaign aborts
                rec = exc.record() if isinstance(exc, MTLLError) else {
                    "error": type(exc).__name__, "message": str(exc)}
                failure = {"realizations": b, **rec}
                break
            results.append(res)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)

    if failure is not None:
        partial = _assemble_partial(config, results, failure)
        path = None
        if out_dir is not None:
            path = out_dir / "partial_report.json"
            path.write_text(dumps_report(partial))
        raise CampaignError(f"realizations {failure['realizations'][0]}..{failure['realizations'][-1]} "
                            f"failed: {failure['message']}", partial_path=path)

    references = []
    for r in range(config.n_reference):
        references.extend(_run_reference(config, r, out_dir))
    report = _assemble(config, results, references)
    report["metadata"] = {
        "seed": config.seed,
        "version": __version__,
        "numpy": np.__version__,
        "timing": {"wall_time_s": time.perf_counter() - started, "workers": workers},
    }
    if out_dir is not None:
        (out_dir / "report.json").write_text(dumps_report(report))
    return report


def _assemble_partial(config, results, failure):
    done = len(results) * config.block_size
    sub = ExperimentConfig.from_dict({**config.to_dict(), "realizations": max(done, 1)})
    rep = _assemble(sub, results, []) if results else {"schema": "mtll-report/1",
                                                     "config": config.to_dict(), "filters": {}}
    rep["partial"] = True
    rep["failure"] = failure
    return rep


def dumps_report(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def strip_timing(report):
    """Copy of ``report`` without wall-clock metadata."""
    rep = json.loads(json.dumps(report))
    rep.get("metadata", {}).pop("timing", None)
    return rep


def compare_reports(reports):
    """Log-MTLL vs ``1/eps**2`` regression per filter, plus MNE/PLL and MNE/EKF ratios."""
    eps = [float(r["config"]["eps"]) for r in reports]
    if len(set(eps)) < 2:
        raise InvalidArgumentError("comparison needs reports at two or more noise levels")
    names = sorted(set.intersection(*(set(r["filters"]) for r in reports)))
    x = np.array([1.0 / e ** 2 for e in eps])
    slopes = {}
    for n in names:
        y = np.log([r["filters"][n]["mtll"] for r in reports])
        fit = stats.linregress(x, y)
        slopes[n] = {
            "slope": float(fit.slope),
            "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue ** 2),
            "points": [{"eps": e, "inv_eps2": float(xi), "mtll": r["filters"][n]["mtll"]}
                       for e, xi, r in zip(eps, x, reports)],
        }
    ratios = []
    for e, r in zip(eps, reports):
        row = {"eps": e}
        for other in ("pll", "ekf"):
            if "mne" in r["filters"] and other in r["filters"]:
                row[f"mne/{other}"] = r["filters"]["mne"]["mtll"] / r["filters"][other]["mtll"]
        ratios.append(row)
    return {"schema": "mtll-summary/1", "regression": slopes, "ratios": ratios}
