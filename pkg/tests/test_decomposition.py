import math

import numpy as np
import pytest

from nabla_bsde import (
    LsmcEngine,
    PathEnsemble,
    QuadratureEngine,
    TimeScale,
    decompose,
    orthogonality_check,
    partition,
    sample_bm,
)
from nabla_bsde.stochastic import MartingalePath, stochastic_integral


def b2_minus_t(w):
    return w[:, 0] ** 2 - 5.0


@pytest.fixture(scope="module")
def example_dec(example_grid):
    ens = sample_bm(example_grid, 1, 100_000, 77)
    eng = QuadratureEngine(example_grid)
    return decompose(example_grid, b2_minus_t, eng, ens), ens, eng


def test_identity_terminal_has_no_orthogonal_part(example_grid):
    ens = sample_bm(example_grid, 1, 1000, 1)
    dec = decompose(example_grid, lambda w: w[:, 0], QuadratureEngine(example_grid), ens)
    assert np.max(np.abs(dec.Z_states - 1.0)) < 1e-10
    assert np.max(np.abs(dec.N.values)) < 1e-10


def test_example_integrand_over_gap(example_dec, example_grid):
    dec, ens, eng = example_dec
    i = example_grid.index_of(3.0)
    assert np.max(np.abs(dec.Z_states[i - 1, :, 0] - 2.0 * eng.nodes)) < 1e-8
    W = ens.W[:, :, 0]
    dN = dec.N.increments[:, i - 1]
    assert np.max(np.abs(dN - ((W[:, i] - W[:, i - 1]) ** 2 - 2.0))) < 1e-8


def test_structural_invariants(example_dec):
    dec, _, _ = example_dec
    assert np.all(dec.N.values[:, 0] == 0.0)
    assert np.max(np.abs(dec.M.values - dec.I.values - dec.N.values)) <= 1e-12
    assert abs(dec.M0) < 1e-10
    assert np.max(dec.diagnostics["cross_residual"]) < 1e-8
    assert np.max(dec.diagnostics["mean_residual"]) < 1e-8


def test_orthogonality_on_example(example_dec):
    dec, ens, _ = example_dec
    W = ens.W[:, :-1, 0]
    rows = orthogonality_check(dec, {"1": 1.0, "W": W, "W2": W**2}, ens)
    assert [r.name for r in rows] == ["1", "W", "W2"]
    for r in rows:
        assert abs(r.estimate) <= 3 * r.se
        assert r.profile.shape == (dec.grid.n_points,)


def test_orthogonality_power_against_corrupted_integrand(example_dec, example_grid):
    dec, ens, _ = example_dec
    corrupted = dec.N - stochastic_integral(example_grid, 1.0, ens)
    (row,) = orthogonality_check(dec, {"1": 1.0}, ens, N=corrupted)
    assert row.estimate < 0 and row.z > 3
    assert row.estimate == pytest.approx(-5.0, rel=0.05)


def test_zero_orthogonal_part_gives_exact_zero(example_dec, example_grid):
    dec, ens, _ = example_dec
    zero = MartingalePath(example_grid, np.zeros((ens.n_paths, example_grid.n_points)))
    for r in orthogonality_check(dec, {"1": 1.0, "W": ens.W[:, :-1, 0]}, ens, N=zero):
        assert r.estimate == 0.0 and r.z == 0.0


def test_three_point_toy_has_orthogonal_part():
    grid = partition(TimeScale.isolated([0.0, 0.5]), 1.0)
    x = np.array([-1.0, 0.0, 0.0, 1.0])  # values -1, 0, 1 with weights 1/4, 1/2, 1/4
    ens = PathEnsemble.from_increments(grid, x[:, None])
    f = {-1.0: 0.3, 0.0: -1.0, 1.0: 2.0}
    terminal = lambda w: np.array([f[v] for v in w[:, 0]])
    # brute-force L2 projection over the four equally likely outcomes
    vals = terminal(x[:, None])
    z_oracle = np.mean(vals * x) / np.mean(x**2)
    n_oracle = vals - vals.mean() - z_oracle * x
    dec = decompose(grid, terminal, LsmcEngine(ens), ens)
    assert dec.Z[:, 0, 0] == pytest.approx(np.full(4, z_oracle), abs=1e-12)
    assert dec.N.terminal == pytest.approx(n_oracle, abs=1e-12)
    assert np.max(np.abs(dec.N.terminal)) > 0.1
    assert np.mean(dec.N.terminal * x) == pytest.approx(0.0, abs=1e-12)


def test_three_point_square_terminal():
    grid = partition(TimeScale.isolated([0.0, 0.5]), 1.0)
    x = np.array([-1.0, 0.0, 0.0, 1.0])
    ens = PathEnsemble.from_increments(grid, x[:, None])
    dec = decompose(grid, lambda w: w[:, 0] ** 2 - 0.5, LsmcEngine(ens), ens)
    assert np.allclose(dec.Z, 0.0, atol=1e-12)
    assert np.allclose(dec.N.terminal, x**2 - 0.5)


def test_uniqueness_across_engine_settings():
    g = partition(TimeScale.parse("0..1, 2, 2.5"), 0.125)
    term = lambda w: np.sin(w[:, 0]) + 0.3 * w[:, 0] ** 3
    a = decompose(g, term, QuadratureEngine(g))
    b = decompose(g, term, QuadratureEngine(g, gh_nodes=48, mesh_nodes=601, mesh_half_width=7.0))
    ea, eb = QuadratureEngine(g), QuadratureEngine(g, gh_nodes=48, mesh_nodes=601, mesh_half_width=7.0)
    x = np.linspace(-2.0, 2.0, 41)
    for i in range(g.n_steps):
        za = ea.interpolate(a.Z_states[i, :, 0], x)
        zb = eb.interpolate(b.Z_states[i, :, 0], x)
        assert np.max(np.abs(za - zb)) < 1e-6


def test_lsmc_decomposition_agrees_statistically(example_grid):
    ens = sample_bm(example_grid, 1, 50_000, 12)
    dec = decompose(example_grid, b2_minus_t, LsmcEngine(ens), ens)
    i = example_grid.index_of(3.0)
    W = ens.W[:, :, 0]
    err = dec.Z[:, i - 1, 0] - 2.0 * W[:, i - 1]
    assert math.sqrt(np.mean(err**2)) < 0.1
    # W_T^2 has standard deviation 5 sqrt(2)
    assert abs(dec.M0) < 4 * 5 * math.sqrt(2) / math.sqrt(50_000)


def test_lsmc_needs_own_ensemble(example_grid):
    a = sample_bm(example_grid, 1, 500, 1)
    b = sample_bm(example_grid, 1, 500, 2)
    with pytest.raises(ValueError):
        decompose(example_grid, b2_minus_t, LsmcEngine(a), b)
