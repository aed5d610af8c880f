import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nabla_bsde import (
    AdmissibilityError,
    DomainError,
    GridScale,
    TimeScale,
    TimeScaleParseError,
    nabla_integral,
    partition,
)

from conftest import points_of, timescales


def test_jump_operators_on_example(example_ts):
    ts = example_ts
    assert ts.sigma(0.5) == 0.5
    assert ts.sigma(1.0) == 3.0
    assert ts.sigma(5.0) == 5.0
    assert ts.rho(3.0) == 1.0
    assert ts.rho(0.0) == 0.0
    assert ts.rho(0.5) == 0.5
    assert ts.nu(3.0) == 2.0
    assert ts.nu(4.0) == 1.0
    assert ts.nu(0.7) == 0.0
    assert ts.mu(1.0) == 2.0
    assert ts.is_left_scattered(3.0) and not ts.is_left_scattered(1.0)
    assert ts.is_right_scattered(1.0) and not ts.is_right_scattered(0.5)


def test_points_outside_raise_domain_error(example_ts):
    for t in (2.0, -0.1, 5.5):
        with pytest.raises(DomainError):
            example_ts.sigma(t)
        with pytest.raises(DomainError):
            example_ts.nu(t)


@pytest.mark.parametrize("literal", ["3, 0..1", "1..2", "0..1, 1", "0, , 2", "0..x", "0"])
def test_bad_literals(literal):
    with pytest.raises(TimeScaleParseError):
        TimeScale.parse(literal)


def test_unsorted_literal_message():
    with pytest.raises(TimeScaleParseError, match="sorted"):
        TimeScale.parse("3, 0..1")


@given(timescales())
def test_literal_round_trip(ts):
    assert TimeScale.parse(ts.to_literal()) == ts


def test_nabla_measure_examples(example_ts):
    assert example_ts.nabla_measure(0, 5) == pytest.approx(5, abs=1e-12)
    assert example_ts.nabla_measure(1, 3) == pytest.approx(2, abs=1e-12)
    assert TimeScale.interval(1.0).nabla_measure(0, 1) == pytest.approx(1, abs=1e-12)


@given(timescales(), st.data())
def test_nabla_measure_of_initial_segment_is_t(ts, data):
    t = points_of(ts, data.draw)
    assert abs(ts.nabla_measure(0.0, t) - t) <= 1e-12


@given(timescales(), st.data())
def test_jump_operators_monotone(ts, data):
    a, b = sorted([points_of(ts, data.draw), points_of(ts, data.draw)])
    assert ts.sigma(a) <= ts.sigma(b)
    assert ts.rho(a) <= ts.rho(b)
    if ts.mu(a) > 0 and ts.nu(ts.sigma(a)) > 0:
        assert ts.rho(ts.sigma(a)) == a


def test_exp_beta_examples(example_ts):
    assert example_ts.exp_beta(1.3, 0.4, 0.4) == 1.0
    assert TimeScale.interval(1.0).exp_beta(0.7, 1.0) == pytest.approx(math.exp(0.7), rel=1e-14)
    for beta in (0.1, 1.0, 2.0):
        want = math.exp(beta) * (1 + 2 * beta) * (1 + beta) ** 2
        assert example_ts.exp_beta(beta, 5.0) == pytest.approx(want, rel=1e-14)
    assert abs(example_ts.exp_beta(1.0, 5.0) - 12 * math.e) <= 1e-12


def test_exp_beta_admissibility(example_ts):
    with pytest.raises(AdmissibilityError):
        example_ts.exp_beta(-0.5, 3.0)
    with pytest.raises(AdmissibilityError):
        example_ts.exp_beta(-1.0, 4.0, 3.0)


@given(timescales(), st.floats(-0.2, 3.0), st.data())
def test_exp_beta_semigroup(ts, beta, data):
    s, t0, t = sorted(points_of(ts, data.draw) for _ in range(3))
    try:
        lhs = ts.exp_beta(beta, t, t0) * ts.exp_beta(beta, t0, s)
        rhs = ts.exp_beta(beta, t, s)
    except AdmissibilityError:
        return
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(timescales(), st.floats(0.0, 3.0))
def test_exp_beta_recursion_on_scattered_points(ts, beta):
    for lo, _ in ts.segments[1:]:
        nu = ts.nu(lo)
        y, y_prev = ts.exp_beta(beta, lo), ts.exp_beta(beta, ts.rho(lo))
        assert y - y_prev == pytest.approx(beta * y_prev * nu, rel=1e-12, abs=1e-12)


def test_partition_examples(example_ts):
    g = partition(example_ts, 0.5)
    assert g.points.tolist() == [0, 0.5, 1, 3, 4, 5]
    assert g.dense_refinement.tolist() == [True, True, False, False, False]
    assert not g.too_coarse
    coarse = partition(example_ts, 10.0)
    assert coarse.points.tolist() == [0, 5]
    assert coarse.too_coarse
    with pytest.raises(ValueError):
        coarse.require_solvable()
    iso = partition(TimeScale.isolated([0, 1, 2, 3, 4]), 0.3)
    assert iso.points.tolist() == [0, 1, 2, 3, 4]


def test_partition_rejects_nonpositive_delta(example_ts):
    with pytest.raises(ValueError):
        partition(example_ts, 0.0)


@settings(max_examples=60)
@given(timescales(), st.floats(0.01, 1.0))
def test_partition_invariants(ts, delta):
    g = partition(ts, delta)
    pts = g.points
    assert pts[0] == 0 and pts[-1] == ts.horizon
    assert np.all(np.diff(pts) > 0)
    assert abs(g.nu.sum() - ts.horizon) < 1e-9
    for t_prev, t in zip(pts, pts[1:]):
        assert ts.rho(float(t)) - t_prev <= delta + 1e-12
    if delta < ts.min_gap:
        assert not g.too_coarse
        for e in ts.endpoints:
            g.index_of(e)
    again = partition(g.as_timescale(), delta)
    assert np.array_equal(again.points, pts)


def test_grid_flags(example_grid):
    assert example_grid.left_scattered.tolist() == [False, False, False, True, True, True]
    assert example_grid.right_scattered.tolist() == [False, False, True, True, True, False]


def test_grid_exp_beta_matches_time_scale(example_ts):
    g = partition(example_ts, 0.25)
    e = g.exp_beta(1.0)
    for t, v in zip(g.points, e):
        assert v == pytest.approx(example_ts.exp_beta(1.0, float(t)), rel=1e-13)


def test_nabla_integral_examples():
    g = partition(TimeScale.interval(2.0), 0.1)
    assert nabla_integral(g, lambda t: np.ones_like(t)) == pytest.approx(2.0, abs=1e-12)
    iso = partition(TimeScale.isolated([0, 1, 2]), 0.5)
    assert nabla_integral(iso, lambda t: t) == 3.0
    errs = []
    for delta in (1 / 16, 1 / 32, 1 / 64):
        errs.append(nabla_integral(partition(TimeScale.interval(1.0), delta), lambda t: t) - 0.5)
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=1e-6)
    assert errs[-1] == pytest.approx(1 / 128, rel=1e-9)


def test_nabla_integral_array_forms(example_grid):
    vals = np.arange(example_grid.n_points, dtype=float)
    a = nabla_integral(example_grid, vals)
    b = nabla_integral(example_grid, np.stack([vals, vals]))
    assert np.allclose(b, a)
    with pytest.raises(ValueError):
        nabla_integral(example_grid, np.ones(3))


def test_fine_partition_is_fast():
    g = partition(TimeScale.parse("0..1, 3, 4, 5"), 2.0**-18)
    assert g.n_points == 2**18 + 4
    assert isinstance(g, GridScale)
