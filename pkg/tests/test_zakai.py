import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from mtll import (DiffusionModel, LockDomain, TimeGrid, conditional_mtll, init_field,
                  log_lik_increment, make_phase_model, mtll_oracle, propagate_ensemble,
                  simulate_pair, step_field, survival_ratio)
from mtll.errors import ConfigurationError, InvalidInitializationError
from mtll.particle import conditional_mtll_stderr
from mtll.zakai import write_zakai_csv, zakai_survival

PI = LockDomain(-np.pi, np.pi)


def flat_model(eps=0.5, h=0.0):
    zero = lambda x, t=0.0: 0.0 * np.asarray(x, dtype=float)  # noqa: E731
    meas = lambda x, t=0.0: h + 0.0 * np.asarray(x, dtype=float)  # noqa: E731
    return DiffusionModel(zero, meas, 1.0, 1.0, eps, meas_deriv=zero, drift_deriv=zero)


def test_init_delta():
    f = init_field(PI, 100)
    nz = np.flatnonzero(f.phi)
    assert nz.tolist() == [50] and f.nodes[50] == pytest.approx(0.0, abs=1e-15)
    assert f.mass == pytest.approx(1.0, abs=1e-14)


def test_init_uniform_and_errors():
    f = init_field(PI, 20, init=np.ones(21))
    assert f.phi[0] == f.phi[-1] == 0.0
    assert np.all(f.phi[1:-1] == f.phi[1])
    assert f.mass == pytest.approx(1.0)
    bad = np.ones(21)
    bad[4] = -1
    with pytest.raises(InvalidInitializationError):
        init_field(PI, 20, init=bad)
    with pytest.raises(InvalidInitializationError):
        init_field(PI, 20, init=np.zeros(21))
    with pytest.raises(ValueError):
        init_field(PI, 4)


def test_mass_conserved_away_from_boundary():
    model = flat_model()
    f = init_field(PI, 200, init=lambda e: np.where(np.abs(e) < 1.0, 1.0, 0.0))
    before = f.log_mass
    step_field(f, model, 0.0, 0.0, 0.0, 1e-3)
    assert abs(math.exp(f.log_mass - before) - 1.0) <= 1e-12


def test_constant_measurement_damps_uniformly():
    model = flat_model(eps=0.5, h=2.0)
    f = init_field(PI, 200, init=lambda e: np.exp(-e ** 2 / 0.1))
    before = f.log_mass
    dt = 1e-3
    step_field(f, model, 0.0, 0.0, 0.0, dt)
    expected = -0.5 * 4.0 * dt / 0.25
    assert f.log_mass - before == pytest.approx(expected, abs=1e-10)


def test_variance_growth_matches_heat_kernel():
    model = flat_model(eps=0.5)
    dom = LockDomain(-20.0, 20.0)
    f = init_field(dom, 800, init=lambda e: np.exp(-e ** 2 / (2 * 0.2)))

    def var(fl):
        p = fl.phi / fl.phi.sum()
        mu = np.sum(p * fl.nodes)
        return np.sum(p * (fl.nodes - mu) ** 2)

    dt = 0.01
    for _ in range(5):
        v0 = var(f)
        step_field(f, model, 0.0, 0.0, 0.0, dt, substeps=4)
        assert var(f) - v0 == pytest.approx(model.state_noise ** 2 * dt, rel=1e-9)


def test_stability_violation_reports_dt():
    model = flat_model(eps=1.0)
    f = init_field(PI, 400)
    with pytest.raises(ConfigurationError, match="dt <="):
        step_field(f, model, 0.0, 0.0, 0.0, 0.1)


def test_survival_ratio_trivial_cases():
    model, _ = make_phase_model(0.5, 1, 1)
    a, b = init_field(PI, 64), init_field(PI, 64)
    assert survival_ratio(a, b) == 1.0
    dys = np.random.default_rng(1).normal(0, 0.05, 30)
    for dy in dys:
        step_field(a, model, 0.0, 0.0, dy, 0.01, substeps=2)
        step_field(b, model, 0.0, 0.0, dy, 0.01, substeps=2)
    assert abs(survival_ratio(a, b) - 1.0) <= 1e-12


@pytest.fixture(scope="module")
def phase_zakai():
    model, dom = make_phase_model(0.5, 1, 1)
    grid = TimeGrid(0.01, 300)
    path = simulate_pair(model, grid, 0.0, seed=3)
    return model, dom, grid, path, zakai_survival(model, dom, path.dy, np.zeros(301), grid, 200)


def test_field_invariants(phase_zakai):
    run = phase_zakai[-1]
    for fl in (run.absorbed, run.free):
        assert np.all(fl.phi >= 0)
        assert fl.phi[0] == 0.0 and fl.phi[-1] == 0.0
    S = run.survival
    assert S[0] == 1.0 and np.all((S >= 0) & (S <= 1 + 1e-9))
    assert 0 < run.mtll() <= phase_zakai[2].T


def test_energy_diagnostic(phase_zakai):
    run = phase_zakai[-1]
    psi = run.absorbed.energy(0.5)
    inside = run.absorbed.phi > 0
    assert np.all(np.isfinite(psi[inside]))


def test_pure_fpe_mass_non_increasing():
    model = flat_model(eps=0.8)
    f = init_field(PI, 100)
    masses = []
    for _ in range(200):
        step_field(f, model, 0.0, 0.0, 0.3, 0.01, substeps=4)
        masses.append(f.log_mass)
    assert np.all(np.diff(masses) <= 1e-14)


def test_wide_domain_never_loses_lock():
    model, _ = make_phase_model(0.2, 1, 1)
    grid = TimeGrid(0.01, 100)
    path = simulate_pair(model, grid, 0.0, seed=0)
    T = mtll_oracle(model, LockDomain(-30, 30), path.dy, np.zeros(101), grid, 400)
    assert T == pytest.approx(grid.T, rel=1e-12)


def test_pure_fpe_matches_monte_carlo():
    model = flat_model(eps=0.5)
    grid = TimeGrid(0.01, 500)
    dy = np.zeros(500)
    ens = propagate_ensemble(model, PI, grid, 20_000, dy, np.zeros(501), seed=4)
    z = mtll_oracle(model, PI, dy, np.zeros(501), grid, 200)
    assert abs(conditional_mtll(ens) - z) <= 3 * conditional_mtll_stderr(ens) + 2 * grid.dt


def test_self_convergence():
    model, dom = make_phase_model(0.5, 1, 1, drift=1.0)  # drift makes the upwinding matter
    grid = TimeGrid(0.01, 300)
    path = simulate_pair(model, grid, 0.0, seed=3)
    vals = [mtll_oracle(model, dom, path.dy, np.zeros(301), grid, G) for G in (50, 100, 200)]
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    # at least first order in de: each halving should at least halve the change
    assert d2 <= 0.5 * d1


def test_csv(tmp_path, phase_zakai):
    write_zakai_csv(tmp_path / "z.csv", phase_zakai[-1])
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert lines[0] == "t,survival_ratio,mass_abs,mass_free"
    assert len(lines) == 302


def test_discrete_duality_three_steps():
    """Brute-force sum over lattice paths vs the FD survival ratio (reported, loose bound)."""
    model, _ = make_phase_model(1.0, 1.0, 1.0)
    dt = 0.8
    dy = [0.3, -0.2, 0.5]
    G = 8
    pad = 16
    de = PI.width / G
    nodes = PI.lo + de * np.arange(-pad, G + 1 + pad)
    inner = np.abs(nodes) < np.pi - 1e-12
    start = int(np.argmin(np.abs(nodes)))
    sd = model.state_noise * math.sqrt(dt)

    def total(allowed):
        acc_free = acc_abs = 0.0
        for idx in itertools.product(range(len(nodes)), repeat=3):
            path = [start, *idx]
            w = 1.0
            for k in range(3):
                e0, e1 = nodes[path[k]], nodes[path[k + 1]]
                w *= math.exp(log_lik_increment(model.h(e0), dy[k], dt, 1.0, 1.0))
                w *= norm.pdf(e1, e0, sd) * de
            acc_free += w
            if all(allowed[i] for i in idx):
                acc_abs += w
        return acc_abs / acc_free

    brute = total(inner)
    grid = TimeGrid(dt, 3)
    fd = zakai_survival(model, PI, np.array(dy), np.zeros(4), grid, G).survival[-1]
    print(f"duality: brute-force {brute:.4f}  finite-difference {fd:.4f}")
    assert abs(brute - fd) < 0.05
