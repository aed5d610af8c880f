import numpy as np
import pytest
from hypothesis import strategies as st

from nabla_bsde import QuadratureEngine, TimeScale, partition

EXAMPLE = "0..1, 3, 4, 5"


@pytest.fixture(scope="session")
def example_ts():
    return TimeScale.parse(EXAMPLE)


@pytest.fixture(scope="session")
def example_grid(example_ts):
    return partition(example_ts, 0.5)


@pytest.fixture(scope="session")
def example_engine(example_grid):
    return QuadratureEngine(example_grid)


@st.composite
def timescales(draw, max_segments=5):
    """Random finite unions of closed intervals and points starting at 0."""
    n = draw(st.integers(1, max_segments))
    segs = []
    lo = 0.0
    for k in range(n):
        length = draw(st.one_of(st.just(0.0), st.floats(0.05, 2.0)))
        if k == 0 and n == 1:
            length = max(length, 0.1)
        hi = lo + length
        segs.append((lo, hi))
        lo = hi + draw(st.floats(0.05, 2.0))
    return TimeScale(tuple(segs))


def points_of(ts, draw):
    j = draw(st.integers(0, len(ts.segments) - 1))
    lo, hi = ts.segments[j]
    return lo if hi == lo else draw(st.floats(lo, hi))


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
