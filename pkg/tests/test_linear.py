import math

import numpy as np
import pytest

from nabla_bsde import Driver, QuadratureEngine, TerminalCondition, TimeScale, partition, sample_bm, solve_backward
from nabla_bsde.linear import (
    GAMMAS,
    LinearData,
    StepFunction,
    comparison_check,
    density,
    gaussian_linear_y0,
    girsanov_shift,
    linear_solve_closed_form,
    linear_table,
)


@pytest.fixture(scope="module")
def example_paths(example_grid):
    return sample_bm(example_grid, 1, 20_000, 5)


def test_step_function_is_left_open():
    f = StepFunction((1.0, 3.0), (0.5, -2.0, 1.0))
    assert f.bound == 2.0
    assert f(1.0) == 0.5
    assert f(1.0 + 1e-12) == -2.0
    assert f(3.0) == -2.0
    assert f(4.0) == 1.0
    with pytest.raises(ValueError):
        StepFunction((1.0,), (0.0,))
    with pytest.raises(ValueError):
        StepFunction((2.0, 1.0), (0.0, 0.0, 0.0))


def test_gamma_variants(example_grid):
    a = -0.3
    paths = {g: LinearData(a=a, gamma=g).gamma_path(example_grid) for g in GAMMAS}
    i1 = example_grid.index_of(1.0)
    for g in GAMMAS:
        assert paths[g][i1] == pytest.approx(math.exp(a), rel=1e-14)
    assert paths["exponential"][-1] == pytest.approx(math.exp(a * 5))
    assert paths["timescale"][-1] == pytest.approx(math.exp(a) * (1 + 2 * a) * (1 + a) ** 2)
    assert paths["implicit"][-1] == pytest.approx(math.exp(a) / ((1 - 2 * a) * (1 - a) ** 2))
    with pytest.raises(ValueError):
        LinearData(gamma="other")
    with pytest.raises(ValueError):
        LinearData(a=-0.5, gamma="timescale").gamma_path(example_grid)


def test_constant_discount_closed_form(example_grid, example_paths):
    cf = linear_solve_closed_form(example_grid, LinearData(a=0.7, xi=TerminalCondition.constant(1.0)), example_paths)
    assert cf.y0 == pytest.approx(math.exp(0.7 * 5), rel=1e-12)
    assert np.all(cf.se < 1e-10)


def test_implicit_gamma_matches_backward_sweep(example_grid, example_paths, example_engine):
    data = LinearData(a=-0.4, c=0.6, xi=TerminalCondition.constant(2.0), gamma="implicit")
    cf = linear_solve_closed_form(example_grid, data, example_paths)
    sol = solve_backward(example_grid, data.driver(), data.xi, example_engine)
    # deterministic data: both reproduce the implicit recursion over the gap steps
    gaps = ~example_grid.dense_refinement
    y = 2.0
    for nu, dense in zip(example_grid.nu[::-1], example_grid.dense_refinement[::-1]):
        if dense:
            break
        y = (y + 0.6 * nu) / (1 + 0.4 * nu)
    assert gaps.sum() == 3
    assert cf.mean[example_grid.index_of(1.0)] == pytest.approx(y, rel=1e-12)
    assert sol.Y[example_grid.index_of(1.0)][0] == pytest.approx(y, rel=1e-12)


def test_flow_term():
    g = partition(TimeScale.interval(2.0), 0.25)
    ens = sample_bm(g, 1, 100, 0)
    cf = linear_solve_closed_form(g, LinearData(c=1.5, xi=TerminalCondition.constant(0.0)), ens)
    assert cf.mean == pytest.approx(1.5 * (2.0 - g.points), abs=1e-12)


def test_gaussian_reference_on_interval():
    a, b, c = 0.5, 0.4, 0.3
    g = partition(TimeScale.interval(1.0), 1 / 64)
    ens = sample_bm(g, 1, 40_000, 9)
    cf = linear_solve_closed_form(g, LinearData(a, b, c, TerminalCondition.square()), ens)
    ref = gaussian_linear_y0(a, b, c, 1.0)
    assert abs(cf.y0 - ref) <= 4 * cf.se[0] + 0.01
    assert np.all(cf.positive)


def test_gaussian_reference_formula():
    assert gaussian_linear_y0(0.0, 0.0, 0.0, 2.0) == pytest.approx(2.0)
    assert gaussian_linear_y0(0.0, 1.0, 0.0, 2.0, xi="identity") == pytest.approx(2.0)
    assert gaussian_linear_y0(0.0, 0.0, 1.0, 2.0, xi="identity") == pytest.approx(2.0)
    assert gaussian_linear_y0(1.0, 0.0, 1.0, 1.0, xi="identity") == pytest.approx(math.e - 1)


def test_density_flags_nonpositive_paths():
    g = partition(TimeScale.parse("0..1, 3"), 0.25)
    ens = sample_bm(g, 1, 5000, 2)
    E = density(g, 1.0, ens)
    assert not np.all(E.positive)
    assert E.warnings


def test_girsanov_removes_drift(example_grid):
    ens = sample_bm(example_grid, 1, 40_000, 11)
    rep = girsanov_shift(example_grid, 0.3, ens)
    assert rep.within(4.0)
    assert abs(rep.weight_mean - 1.0) <= 4 * rep.weight_se
    assert rep.mean[-1] == pytest.approx(-0.3 * 5, abs=4 * rep.mean_se[-1])
    assert abs(rep.mean[-1]) > 10 * rep.mean_se[-1]


def test_comparison_pass(example_grid, example_engine):
    d = Driver.builtin("sin", 0.4)
    rep = comparison_check(example_grid, (d.shifted(1.0), TerminalCondition.square()),
                           (d, TerminalCondition.constant(0.0)), example_engine)
    assert rep.status == "pass"
    assert rep.min_diff[-1] >= 0
    assert all(ok for _, _, ok in rep.rows())


def test_comparison_refuses_violated_hypotheses(example_grid, example_engine):
    d = Driver.zero()
    rep = comparison_check(example_grid, (d, TerminalCondition.constant(0.0)),
                           (d, TerminalCondition.square()), example_engine)
    assert rep.status == "refused" and "xi1" in rep.reason
    rep = comparison_check(example_grid, (Driver.constant(-1.0), TerminalCondition.square()),
                           (d, TerminalCondition.square()), example_engine)
    assert rep.status == "refused" and "g1" in rep.reason


def test_comparison_can_fail_for_z_drivers_across_wide_gap():
    # 1 + b dW is not positive over a gap with b^2 nu > 1
    g = partition(TimeScale.parse("0..1, 3"), 0.25)
    eng = QuadratureEngine(g)
    d = Driver.linear(0.0, 1.0, 0.0)
    rep = comparison_check(g, (d, TerminalCondition.square()), (d, TerminalCondition.constant(0.0)), eng)
    assert rep.status == "fail"
    assert rep.min_diff[g.index_of(1.0)] == pytest.approx(-2.0, abs=1e-6)


def test_linear_table(example_grid, example_paths):
    cf = linear_solve_closed_form(example_grid, LinearData(c=1.0, xi=TerminalCondition.constant(0.0)), example_paths)
    rows = linear_table(example_grid, cf, cf.mean + 0.5)
    assert len(rows) == example_grid.n_points
    assert all(r[3] == pytest.approx(0.5) for r in rows)
