import math

import numpy as np
import pytest

from nabla_bsde import EngineConfig, LsmcEngine, QuadratureEngine, TimeScale, partition, sample_bm
from nabla_bsde.condexp import RegressionBasis, SpatialMesh, gauss_hermite, lsmc_condexp, quadrature_condexp


def test_gauss_hermite_moments():
    x, w = gauss_hermite(64)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.dot(w, x**2) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(w, x**4) == pytest.approx(3.0, abs=1e-11)


def test_quadrature_condexp_polynomials():
    mesh = SpatialMesh.uniform(6.0, 801, lambda w: w**2)
    out = quadrature_condexp(mesh, 0.5)
    assert np.max(np.abs(out.values - (mesh.nodes**2 + 0.5))) < 1e-10
    cross = quadrature_condexp(mesh, 0.5, power=1)
    assert np.max(np.abs(cross.values - 2 * mesh.nodes * 0.5)) < 1e-10
    same = quadrature_condexp(mesh, 0.0)
    assert np.array_equal(same.values, mesh.values)


def test_pchip_preserves_positivity():
    mesh = SpatialMesh.uniform(4.0, 81, lambda w: np.maximum(w, 0.0))
    out = quadrature_condexp(mesh, 1.0, interp="pchip")
    assert np.all(out.values >= 0.0)
    with pytest.raises(ValueError):
        quadrature_condexp(mesh, 1.0, interp="cubic")
    with pytest.raises(ValueError):
        quadrature_condexp(mesh, -1.0)


def test_mesh_validation():
    with pytest.raises(ValueError):
        SpatialMesh(np.array([0.0, 0.0]), np.zeros(2))


def test_engine_expect_and_cross_exact_on_quadratics(example_grid):
    eng = QuadratureEngine(example_grid)
    i = example_grid.index_of(3.0)
    w = eng.nodes
    vals = w**2 - 3.0
    assert np.max(np.abs(eng.expect(i, vals) - (w**2 - 1.0))) < 1e-10
    assert np.max(np.abs(eng.cross(i, vals)[:, 0] - 4.0 * w)) < 1e-9
    assert np.max(np.abs(eng.expect(i, lambda x: x[:, 0] ** 2) - (w**2 + 2.0))) < 1e-10


def test_tower_property_in_interior():
    g = partition(TimeScale.interval(1.0), 0.25)
    eng = QuadratureEngine(g)
    w = eng.nodes
    vals = w**4
    two_step = eng.expect(3, eng.expect(4, vals))
    direct = w**4 + 6 * w**2 * 0.5 + 3 * 0.25
    inner = np.abs(w) <= 1.5
    assert np.max(np.abs(two_step - direct)[inner]) < 1e-10


def test_engine_mean_std_origin(example_grid):
    eng = QuadratureEngine(example_grid)
    n = example_grid.n_steps
    assert eng.mean(n, eng.nodes**2) == pytest.approx(5.0, abs=1e-10)
    assert eng.std(n, eng.nodes) == pytest.approx(math.sqrt(5.0), abs=1e-10)
    assert eng.at_origin(eng.nodes**2 + 1) == 1.0
    assert eng.mean(0, eng.nodes + 2.0) == pytest.approx(2.0)


def test_engine_argument_checks(example_grid):
    with pytest.raises(ValueError):
        QuadratureEngine(example_grid, mesh_nodes=800)
    with pytest.raises(ValueError):
        QuadratureEngine(example_grid, interp="linear")


def test_regression_basis_size():
    b = RegressionBasis(3)
    for d in (1, 2, 3):
        assert len(b.exponents(d)) == b.size(d) == math.comb(3 + d, d)
    f = b.features(np.array([[1.0, 2.0]]))
    assert f.shape == (1, 10)


def test_lsmc_recovers_quadratic(example_grid):
    ens = sample_bm(example_grid, 1, 20_000, 3)
    i = example_grid.index_of(3.0)
    W = ens.W[:, :, 0]
    est = lsmc_condexp(ens, i - 1, W[:, i] ** 2)
    # regression noise only: the projection is exact in the basis
    err = est - (W[:, i - 1] ** 2 + 2.0)
    assert np.sqrt(np.mean(err**2)) < 0.1
    assert np.allclose(lsmc_condexp(ens, 0, W[:, 1]), W[:, 1].mean())


def test_lsmc_refuses_small_ensembles(example_grid):
    ens = sample_bm(example_grid, 3, 10, 0)
    with pytest.raises(ValueError):
        lsmc_condexp(ens, 1, np.zeros(10))
    with pytest.raises(ValueError):
        LsmcEngine(ens)


def test_lsmc_engine_interface(example_grid):
    ens = sample_bm(example_grid, 2, 50_000, 1)
    eng = LsmcEngine(ens)
    i = example_grid.index_of(3.0)
    y = ens.W[:, i, 0] * ens.W[:, i, 1]
    z = eng.cross(i, y)
    assert z.shape == (50_000, 2)
    err = z[:, 0] - 2.0 * ens.W[:, i - 1, 1]
    assert np.sqrt(np.mean(err**2)) < 0.2
    assert eng.mean(i, y) == pytest.approx(y.mean())


def test_engine_config_build(example_grid):
    assert isinstance(EngineConfig().build(example_grid), QuadratureEngine)
    with pytest.raises(ValueError):
        EngineConfig(engine="lsmc").build(example_grid)
    with pytest.raises(ValueError):
        EngineConfig(engine="tree").build(example_grid)
