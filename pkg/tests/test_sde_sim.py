import math

import numpy as np
import pytest

from mtll import (TimeGrid, make_linear_model, make_phase_model, simulate_error_pair,
                  simulate_pair, zero_noise_pair)
from mtll.errors import CausalityViolationError, NumericalOverflowError
from mtll.rng import STREAM_TRUTH, keyed_normals
from mtll.sde_sim import path_noise, read_path_csv, write_path_csv, xhat_from_path


def euler_ensemble(model, grid, x0, seed, n):
    """Vectorised copy of the Euler recursion over trajectories 0..n-1."""
    dt, sq = grid.dt, math.sqrt(grid.dt)
    x = np.full(n, float(x0))
    ids = np.arange(n)
    for i in range(grid.n_steps):
        z = keyed_normals(seed, STREAM_TRUTH, ids, i)
        x = x + dt * model.m(x) + model.state_noise * (sq * z[:, 0])
    return x


def test_time_grid():
    g = TimeGrid.from_horizon(0.01, 5.0)
    assert g.n_steps == 500 and g.T == pytest.approx(5.0)
    assert g.times[-1] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        TimeGrid.from_horizon(0.3, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.1, 0)


def test_zero_noise_examples():
    p = zero_noise_pair(make_linear_model(0, 1, 1, 1, 1), TimeGrid(0.1, 20), 1.7)
    np.testing.assert_array_equal(p.x, 1.7)
    p = zero_noise_pair(make_linear_model(-1, 1, 1, 1, 1), TimeGrid(0.1, 10), 1.0)
    assert p.x[1] == pytest.approx(0.9, abs=1e-15)
    p = zero_noise_pair(make_phase_model(0.3, 1, 1)[0], TimeGrid(0.1, 10), 0.0)
    np.testing.assert_array_equal(p.dy, 0.0)
    p = zero_noise_pair(make_linear_model(0, 1, 1, 1, 1), TimeGrid(0.5, 2), 2.0)
    assert p.dy[0] == 1.0


def test_simulate_pair_shapes_and_determinism():
    model, _ = make_phase_model(0.3, 1, 1)
    grid = TimeGrid(0.01, 200)
    a = simulate_pair(model, grid, 0.0, seed=5)
    b = simulate_pair(model, grid, 0.0, seed=5)
    assert a.x.shape == (201,) and a.dy.shape == (200,)
    assert np.all(np.isfinite(a.x)) and np.all(np.isfinite(a.dy))
    assert a.x.tobytes() == b.x.tobytes() and a.dy.tobytes() == b.dy.tobytes()
    assert not np.array_equal(a.dy, simulate_pair(model, grid, 0.0, seed=6).dy)
    np.testing.assert_allclose(a.y[1:], np.cumsum(a.dy))


def test_simulate_pair_recursion():
    model = make_linear_model(-0.5, 2.0, 0.3, 1.5, 0.7)
    grid = TimeGrid(0.02, 30)
    p = simulate_pair(model, grid, 0.4, seed=3, trajectory=2)
    z = path_noise(3, 30, trajectory=2)
    sq = math.sqrt(grid.dt)
    for i in range(30):
        assert p.x[i + 1] == pytest.approx(p.x[i] + grid.dt * (-0.5 * p.x[i]) + 0.45 * sq * z[i, 0], abs=1e-14)
        assert p.dy[i] == pytest.approx(grid.dt * 2.0 * p.x[i] + 0.21 * sq * z[i, 1], abs=1e-14)


def test_ensemble_helper_matches_simulate_pair(ou):
    grid = TimeGrid(0.01, 100)
    xs = euler_ensemble(ou, grid, 1.0, seed=9, n=4)
    for r in range(4):
        assert xs[r] == simulate_pair(ou, grid, 1.0, seed=9, trajectory=r).x[-1]


def test_ou_mean(ou):
    n = 100_000
    grid = TimeGrid(0.01, 100)
    x = euler_ensemble(ou, grid, 1.0, seed=21, n=n)
    se = x.std(ddof=1) / math.sqrt(n)
    assert abs(x.mean() - math.exp(-1.0)) <= 3 * se


def test_weak_convergence(ou):
    n = 100_000
    errs, ses = [], []
    for k, dt in enumerate((0.1, 0.05, 0.025)):
        x = euler_ensemble(ou, TimeGrid.from_horizon(dt, 1.0), 3.0, seed=100 + k, n=n)
        errs.append(abs(x.mean() - 3.0 * math.exp(-1.0)))
        ses.append(x.std(ddof=1) / math.sqrt(n))
    for k in range(2):
        assert errs[k + 1] < errs[k] + 3 * math.hypot(ses[k], ses[k + 1])
    assert errs[2] < errs[0]


def test_gaussian_increment_variance():
    dt = 0.004
    dw = math.sqrt(dt) * keyed_normals(4, STREAM_TRUTH, 0, np.arange(100_000))
    for ch in range(2):
        assert abs(dw[:, ch].var() / dt - 1.0) < 0.02


def test_overflow_names_step():
    from mtll import DiffusionModel
    model = DiffusionModel(lambda x, t: x ** 3, lambda x, t: x, 1, 1, 1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalOverflowError) as exc:
            zero_noise_pair(model, TimeGrid(1.0, 50), 2.0)
    assert exc.value.step is not None and "step" in str(exc.value)


def test_error_pair_with_zero_estimate_is_simulate_pair():
    model, _ = make_phase_model(0.5, 1, 1)
    grid = TimeGrid(0.01, 300)
    e = simulate_error_pair(model, grid, 0.0, lambda i, view: 0.0, seed=12)
    p = simulate_pair(model, grid, 0.0, seed=12)
    np.testing.assert_array_equal(e.x, p.x)
    np.testing.assert_array_equal(e.dy, p.dy)


def test_error_pair_oracle_estimate_is_zero():
    model, _ = make_phase_model(0.5, 1, 1)
    grid = TimeGrid(0.01, 300)
    p = simulate_pair(model, grid, 0.2, seed=4)
    e = simulate_error_pair(model, grid, 0.0, xhat_from_path(p.x), seed=4)
    np.testing.assert_array_equal(e.x, 0.0)
    np.testing.assert_array_equal(e.dy, p.dy)


def test_error_pair_vanishing_noise():
    model, _ = make_phase_model(1e-300, 1, 1)
    grid = TimeGrid(0.1, 20)
    e = simulate_error_pair(model, grid, 1.0, lambda i, view: 0.0, seed=1)
    np.testing.assert_array_equal(e.x, 1.0)
    np.testing.assert_array_equal(e.dy, 0.1 * math.sin(1.0))


def test_causality_enforced():
    model, _ = make_phase_model(0.5, 1, 1)
    grid = TimeGrid(0.01, 10)

    def peeking(i, view):
        return view[i]  # dy[i] is not yet observed at t_i

    with pytest.raises(CausalityViolationError):
        simulate_error_pair(model, grid, 0.0, peeking, seed=0)

    def slicing(i, view):
        return float(np.sum(view[0:i + 1]))

    with pytest.raises(CausalityViolationError):
        simulate_error_pair(model, grid, 0.0, slicing, seed=0)

    seen = []

    def honest(i, view):
        seen.append(len(view))
        return float(np.sum(view[:i]))

    simulate_error_pair(model, grid, 0.0, honest, seed=0)
    assert seen == list(range(11))


def test_csv_round_trip(tmp_path):
    model, _ = make_phase_model(0.3, 1, 1)
    p = simulate_pair(model, TimeGrid(0.01, 50), 0.0, seed=2)
    write_path_csv(tmp_path / "p.csv", p)
    grid, x, dy = read_path_csv(tmp_path / "p.csv")
    assert grid.n_steps == 50 and grid.dt == pytest.approx(0.01)
    np.testing.assert_array_equal(x, p.x)
    np.testing.assert_array_equal(dy, p.dy)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,x,dy"
