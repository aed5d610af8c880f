"""Brownian motion on time scales and the stochastic nabla calculus built on it.

Paths are sampled on a :class:`~nabla_bsde.timescale.GridScale`.  Increments
across a gap carry the full real gap length as variance, so ``<W>_t = t``
holds on the whole time scale.

Random numbers come from counter-based Philox streams: the master seed is
the Philox key and each block of paths owns its own counter range.  The
ensemble is therefore a pure function of ``(grid, d, n_paths, seed)`` no
matter how many worker threads fill it.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .timescale import GridScale

logger = logging.getLogger(__name__)

BLOCK_PATHS = 4096
_SEED_LIMIT = 2**64


class PredictabilityError(ValueError):
    """An integrand looked at data from the step it integrates over."""


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Sampled Brownian paths ``W[path, point, dim]`` on a grid."""

    grid: GridScale
    W: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 3 or W.shape[1] != self.grid.n_points:
            raise ValueError(
                f"W must have shape (n_paths, {self.grid.n_points}, d), got {W.shape}"
            )
        if np.any(W[:, 0, :] != 0.0):
            raise ValueError("Brownian paths must start at 0")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def from_increments(cls, grid: GridScale, increments: np.ndarray, seed: int | None = None) -> "PathEnsemble":
        """Build paths from explicit increments of shape ``(n_paths, n_steps[, d])``."""
        inc = np.asarray(increments, dtype=float)
        if inc.ndim == 2:
            inc = inc[:, :, None]
        W = np.zeros((inc.shape[0], grid.n_points, inc.shape[2]))
        np.cumsum(inc, axis=1, out=W[:, 1:, :])
        return cls(grid, W, seed)

    @property
    def n_paths(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[2]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.W, axis=1)

    def at(self, t: float) -> np.ndarray:
        return self.W[:, self.grid.index_of(t), :]

    def to_csv_rows(self) -> Iterable[tuple[int, float, int, float]]:
        """Rows ``(path, t, dim, W)`` in path-major order."""
        pts = self.grid.points
        for p in range(self.n_paths):
            for i, t in enumerate(pts):
                for j in range(self.d):
                    yield p, float(t), j, float(self.W[p, i, j])


def _block_normals(seed: int, block: int, n: int, n_steps: int, d: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed, counter=[0, 0, block, 0])
    return np.random.Generator(bitgen).standard_normal((n, n_steps, d))


def sample_bm(grid: GridScale, d: int, n_paths: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Sample ``n_paths`` d-dimensional Brownian paths on ``grid``.

    Increments over step ``i`` are independent ``N(0, nu_i)`` in every
    dimension.  ``workers`` only changes wall time, never the result.
    """
    if d < 1 or n_paths < 1:
        raise ValueError("d and n_paths must be >= 1")
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    scale = np.sqrt(grid.nu)[None, :, None]
    W = np.zeros((n_paths, grid.n_points, d))
    n_blocks = math.ceil(n_paths / BLOCK_PATHS)

    def fill(block: int) -> None:
        lo = block * BLOCK_PATHS
        hi = min(lo + BLOCK_PATHS, n_paths)
        z = _block_normals(seed, block, hi - lo, grid.n_steps, d)
        np.cumsum(z * scale, axis=1, out=W[lo:hi, 1:, :])

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n_blocks)))
    else:
        for b in range(n_blocks):
            fill(b)
    return PathEnsemble(grid, W, seed)


@dataclass(frozen=True, eq=False)
class MartingalePath:
    """Per-path values of an adapted process on the grid.

    ``values`` has shape ``(n_paths, n_points)`` for scalar processes and
    ``(n_paths, n_points, k)`` for vector ones.
    """

    grid: GridScale
    values: np.ndarray
    warnings: tuple[str, ...] = ()
    positive: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape[1] != self.grid.n_points:
            raise ValueError(f"values must have {self.grid.n_points} columns, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def __add__(self, other: "MartingalePath") -> "MartingalePath":
        return MartingalePath(self.grid, self.values + other.values)

    def __sub__(self, other: "MartingalePath") -> "MartingalePath":
        return MartingalePath(self.grid, self.values - other.values)


def quadratic_variation(
    ensemble: PathEnsemble, t: float, path: int | None = None, dim: int = 0
) -> float | np.ndarray:
    """``[W^j]_t``: Lebesgue measure of the dense part of ``[0, t]`` plus squared gap increments.

    Returns one value per path unless ``path`` is given.
    """
    grid = ensemble.grid
    grid.require_solvable()
    ts = grid.timescale
    grid.index_of(t)
    W = ensemble.W[:, :, dim] if path is None else ensemble.W[path : path + 1, :, dim]
    qv = np.full(W.shape[0], ts._dense_length(0.0, t))
    for a, b in ts.gaps:
        if b <= t + 1e-12:
            qv += (W[:, grid.index_of(b)] - W[:, grid.index_of(a)]) ** 2
    return float(qv[0]) if path is not None else qv


def realized_variation(process: MartingalePath | np.ndarray) -> np.ndarray:
    """Running partition sum ``sum (M_{t_i} - M_{t_{i-1}})^2`` per path (scalar processes)."""
    v = process.values if isinstance(process, MartingalePath) else np.asarray(process)
    out = np.zeros_like(v, dtype=float)
    np.cumsum(np.diff(v, axis=1) ** 2, axis=1, out=out[:, 1:])
    return out


def predictable(ensemble: PathEnsemble, fn: Callable[[float, np.ndarray], np.ndarray]) -> np.ndarray:
    """Evaluate ``fn(t_{i-1}, W_{t_{i-1}})`` for every step: predictable by construction.

    ``fn`` receives the left time and the ``(n_paths, d)`` state and returns
    one value per path (shape ``(n_paths,)``, ``(n_paths, d)`` or ``(n_paths, k, d)``).
    """
    grid = ensemble.grid
    cols = []
    for i in range(grid.n_steps):
        c = np.asarray(fn(float(grid.points[i]), ensemble.W[:, i, :]), dtype=float)
        cols.append(np.broadcast_to(c, (ensemble.n_paths,) + c.shape[1:]))
    return np.stack(cols, axis=1)


def check_predictable(
    builder: Callable[[PathEnsemble], np.ndarray],
    ensemble: PathEnsemble,
    seed: int = 0,
    steps: Sequence[int] | None = None,
) -> None:
    """Raise :class:`PredictabilityError` if ``builder`` peeks at the future.

    For each split step ``s`` the increments from ``s`` onward are resampled;
    the integrand on steps ``<= s`` must not change.  This is a test harness
    (one rebuild per split), not something to run inside solvers.
    """
    grid = ensemble.grid
    base = np.asarray(builder(ensemble))
    rng = np.random.default_rng(seed)
    inc = ensemble.increments
    for s in (range(grid.n_steps) if steps is None else steps):
        fresh = inc.copy()
        fresh[:, s:, :] = rng.standard_normal(fresh[:, s:, :].shape) * np.sqrt(grid.nu[s:])[None, :, None]
        other = np.asarray(builder(PathEnsemble.from_increments(grid, fresh)))
        if not np.array_equal(other[:, : s + 1], base[:, : s + 1]):
            raise PredictabilityError(f"integrand on step {s} depends on increments from step {s} on")


def _as_integrand(X: np.ndarray | float, ensemble: PathEnsemble) -> tuple[np.ndarray, bool]:
    n, m, d = ensemble.n_paths, ensemble.grid.n_steps, ensemble.d
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        if d != 1:
            raise ValueError("scalar integrand needs d = 1")
        return np.full((n, m, 1, 1), float(X)), True
    if X.ndim == 2:
        if d != 1:
            raise ValueError("integrand of shape (n_paths, n_steps) needs d = 1")
        return X[:, :, None, None], True
    if X.ndim == 3:
        return X[:, :, None, :], True
    if X.ndim == 4:
        return X, X.shape[2] == 1
    raise ValueError(f"unsupported integrand shape {X.shape}")


def stochastic_integral(grid: GridScale, X: np.ndarray | float, ensemble: PathEnsemble) -> MartingalePath:
    """``I_t(X) = sum_{t_i <= t} X_{t_i} (W_{t_i} - W_{t_{i-1}})`` for predictable ``X``.

    ``X[path, i]`` is the integrand on step ``(t_i, t_{i+1}]`` and must only
    depend on information up to ``t_i``.  Shapes ``(n_paths, n_steps)``
    (d = 1), ``(n_paths, n_steps, d)`` or ``(n_paths, n_steps, k, d)``.
    """
    if grid is not ensemble.grid and not np.array_equal(grid.points, ensemble.grid.points):
        raise ValueError("ensemble was sampled on a different grid")
    X4, scalar = _as_integrand(X, ensemble)
    dI = np.einsum("pskd,psd->psk", X4, ensemble.increments)
    I = np.zeros((ensemble.n_paths, grid.n_points, dI.shape[2]))
    np.cumsum(dI, axis=1, out=I[:, 1:, :])
    return MartingalePath(grid, I[:, :, 0] if scalar else I)


def doleans_exponential(
    grid: GridScale, M: MartingalePath, bracket: np.ndarray | None = None
) -> MartingalePath:
    """Doleans exponential of a scalar martingale path, ``E_0 = 1``.

    Steps that cross a gap or an original isolated step multiply by
    ``1 + dM``.  Dense-refinement steps multiply by ``exp(dM - q/2)`` where
    ``q`` is ``bracket`` (predictable bracket increments, shape ``(n_steps,)``
    or ``(n_paths, n_steps)``) when given, else the realized ``dM**2``.
    """
    dM = M.increments
    if dM.ndim != 2:
        raise ValueError("doleans_exponential expects a scalar martingale")
    q = dM**2 if bracket is None else np.broadcast_to(np.asarray(bracket, dtype=float), dM.shape)
    dense = grid.dense_refinement[None, :]
    factors = np.where(dense, np.exp(dM - 0.5 * q), 1.0 + dM)
    warnings: list[str] = []
    scattered = factors[:, ~grid.dense_refinement]
    n_zero = int(np.count_nonzero(scattered == 0.0))
    if n_zero:
        warnings.append(f"degenerate density: {n_zero} scattered factors 1 + dM equal 0")
    positive = np.all(factors > 0.0, axis=1)
    if not positive.all():
        warnings.append(f"{int((~positive).sum())} paths have a nonpositive factor")
        logger.warning("doleans exponential: %s", "; ".join(warnings))
    E = np.ones((dM.shape[0], grid.n_points))
    np.cumprod(factors, axis=1, out=E[:, 1:])
    return MartingalePath(grid, E, tuple(warnings), positive)


# -- optional sampling ------------------------------------------------------

@dataclass(frozen=True)
class FirstHitting:
    """Stopping rule: first grid index where ``condition(t, history)`` holds, else the last index.

    ``condition`` receives the grid times (shape ``(n_points,)``) and the
    observed history ``(n_paths, n_points)`` and returns a boolean array of
    the same shape.  It must be pointwise in time (value at column ``i`` may
    only use columns ``<= i``).
    """

    condition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "first_hitting"

    def indices(self, times: np.ndarray, history: np.ndarray) -> np.ndarray:
        hit = np.asarray(self.condition(times, history), dtype=bool)
        hit[:, -1] = True
        return np.argmax(hit, axis=1)


def at_time(t: float) -> FirstHitting:
    return FirstHitting(lambda times, h: np.broadcast_to(times >= t - 1e-12, h.shape).copy(), f"t={t}")


def first_exit(level: float) -> FirstHitting:
    return FirstHitting(lambda times, h: np.abs(h) > level, f"|x|>{level}")


@dataclass(frozen=True)
class SamplingRow:
    event: str
    mean_s2: float
    mean_s1: float
    diff: float
    se: float

    @property
    def z(self) -> float:
        return self.diff / self.se if self.se > 0 else (0.0 if self.diff == 0 else math.inf)


def optional_sampling_check(
    M: MartingalePath,
    S1: FirstHitting,
    S2: FirstHitting,
    events: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]],
    observed: np.ndarray | None = None,
) -> list[SamplingRow]:
    """Compare ``mean(M_{S2} 1_A)`` with ``mean(M_{S1} 1_A)`` for each event ``A``.

    Stopping rules are evaluated on ``observed`` (default: ``M`` itself).
    Events receive the observed history with every column after ``S1``
    replaced by NaN, together with the ``S1`` indices, which makes them
    ``F_{S1}``-measurable by construction.
    """
    grid = M.grid
    hist = M.values if observed is None else np.asarray(observed, dtype=float)
    s1 = S1.indices(grid.points, hist)
    s2 = S2.indices(grid.points, hist)
    if np.any(s1 > s2):
        raise ValueError("stopping rules must satisfy S1 <= S2 on every path")
    rows = np.arange(M.values.shape[0])
    m1 = M.values[rows, s1]
    m2 = M.values[rows, s2]
    masked = np.where(np.arange(grid.n_points)[None, :] <= s1[:, None], hist, np.nan)
    out = []
    for name, event in events.items():
        a = np.asarray(event(masked, s1), dtype=bool)
        x2, x1 = m2 * a, m1 * a
        diff = x2 - x1
        n = len(diff)
        out.append(SamplingRow(name, float(x2.mean()), float(x1.mean()), float(diff.mean()),
                               float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0))
    return out
