"""Conditional expectation engines.

Two interchangeable engines compute ``E[f(W_{t_i}) | F_{t_{i-1}}]`` and the
cross moment ``E[f(W_{t_i}) dW_i | F_{t_{i-1}}]`` that every backward sweep
needs:

* :class:`QuadratureEngine` - deterministic, one-dimensional, Markovian.
  Values live on a fixed spatial mesh; the Gaussian convolution is done by
  Gauss-Hermite quadrature on top of a quintic spline interpolant, and the
  whole step is cached as a dense matrix per distinct step variance.
* :class:`LsmcEngine` - least-squares regression of per-path values on
  polynomials of the current Brownian state.  Works for any dimension.

Both expose the same small interface (``state``, ``expect``, ``cross``,
``mean``, ``std``) so the solvers never look at which one they got.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from scipy.interpolate import BSpline, PchipInterpolator, make_interp_spline

from .stochastic import PathEnsemble
from .timescale import GridScale

logger = logging.getLogger(__name__)

Values = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]

SPLINE_DEGREE = 5
EXTRAP_ORDER = 2
EDGE_WINDOW = 40


@dataclass(frozen=True, eq=False)
class SpatialMesh:
    """Values of ``w -> u(t, w)`` on sorted nodes."""

    nodes: np.ndarray
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.size == 0:
            raise ValueError("empty mesh")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def uniform(cls, half_width: float, n_nodes: int, fn: Callable[[np.ndarray], np.ndarray] | None = None,
                t: float = 0.0) -> "SpatialMesh":
        nodes = np.linspace(-half_width, half_width, n_nodes)
        values = np.zeros(n_nodes) if fn is None else np.asarray(fn(nodes), dtype=float)
        return cls(nodes, values, t)


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``x`` and weights ``w`` with ``E[f(Z)] ~ sum w f(x)`` for ``Z ~ N(0, 1)``."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * math.sqrt(2.0), w / math.sqrt(math.pi)


class _SplineInterpolator:
    """Linear map from node values to values at arbitrary points.

    Quintic not-a-knot spline inside the mesh.  Outside, a quadratic through
    the edge value fitted by least squares to the last ``EDGE_WINDOW`` nodes;
    spline derivatives at the edge are too noisy to extrapolate far.  Exact
    for polynomials of degree <= 2 everywhere and degree <= 5 inside the mesh.
    """

    def __init__(self, nodes: np.ndarray):
        self.nodes = nodes
        n = len(nodes)
        spl = make_interp_spline(nodes, np.eye(n), k=SPLINE_DEGREE)
        self.knots, self.coef = spl.t, spl.c
        k = min(EDGE_WINDOW, n - 1)
        self._edges = []
        for edge, window in ((0, np.arange(1, k + 1)), (n - 1, np.arange(n - 1 - k, n - 1))):
            h = nodes[window] - nodes[edge]
            V = np.stack([h**m for m in range(1, EXTRAP_ORDER + 1)], axis=1)
            P = np.zeros((EXTRAP_ORDER, n))
            P[:, window] = np.linalg.pinv(V)
            P[:, edge] -= P[:, window].sum(axis=1)
            e0 = np.zeros(n)
            e0[edge] = 1.0
            self._edges.append((nodes[edge], np.vstack([e0, P])))

    def matrix(self, x: np.ndarray) -> np.ndarray:
        """``R`` with ``interp(values)(x) == R @ values``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.nodes[0], self.nodes[-1]
        inside = (x >= lo) & (x <= hi)
        R = np.empty((len(x), len(self.nodes)))
        if inside.any():
            D = BSpline.design_matrix(x[inside], self.knots, SPLINE_DEGREE)
            R[inside] = D @ self.coef
        for (e, rows), mask in zip(self._edges, (x < lo, x > hi)):
            if mask.any():
                h = x[mask] - e
                powers = np.stack([h**m for m in range(EXTRAP_ORDER + 1)], axis=1)
                R[mask] = powers @ rows
        return R


@lru_cache(maxsize=8)
def _interpolator(nodes_key: tuple[float, float, int]) -> _SplineInterpolator:
    lo, hi, n = nodes_key
    return _SplineInterpolator(np.linspace(lo, hi, n))


def _pchip_eval(nodes: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Monotone cubic interpolation with linear extrapolation."""
    p = PchipInterpolator(nodes, values, extrapolate=False)
    out = p(x)
    dp = p.derivative()
    lo, hi = nodes[0], nodes[-1]
    left, right = x < lo, x > hi
    out[left] = values[0] + dp(lo) * (x[left] - lo)
    out[right] = values[-1] + dp(hi) * (x[right] - hi)
    return out


def quadrature_condexp(
    mesh_next: SpatialMesh,
    step_variance: float,
    gh_nodes: int = 64,
    interp: str = "spline",
    power: int = 0,
) -> SpatialMesh:
    """``w -> E[f(w + dW) dW**power]`` with ``dW ~ N(0, step_variance)``.

    ``f`` is the interpolant of ``mesh_next``.  ``interp="spline"`` is exact
    on low-degree polynomials; ``interp="pchip"`` is monotone with linear
    extrapolation and so preserves positivity.
    """
    if step_variance < 0:
        raise ValueError("step variance must be nonnegative")
    nodes, values = mesh_next.nodes, mesh_next.values
    if step_variance == 0:
        return SpatialMesh(nodes, values.copy() if power == 0 else np.zeros_like(values), mesh_next.t)
    x, w = gauss_hermite(gh_nodes)
    dx = math.sqrt(step_variance) * x
    q = (nodes[:, None] + dx[None, :]).ravel()
    if interp == "spline":
        f = _SplineInterpolator(nodes).matrix(q) @ values
    elif interp == "pchip":
        f = _pchip_eval(nodes, values, q)
    else:
        raise ValueError(f"unknown interpolation {interp!r}")
    out = f.reshape(len(nodes), gh_nodes) @ (w * dx**power)
    return SpatialMesh(nodes, out, mesh_next.t)


# -- regression -------------------------------------------------------------

@dataclass(frozen=True)
class RegressionBasis:
    """Monomials of total degree <= ``degree`` in the ``d`` state coordinates."""

    degree: int = 3

    def exponents(self, d: int) -> list[tuple[int, ...]]:
        out = []
        for deg in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(d), deg):
                e = [0] * d
                for j in combo:
                    e[j] += 1
                out.append(tuple(e))
        return out

    def size(self, d: int) -> int:
        return math.comb(self.degree + d, d)

    def features(self, W: np.ndarray, scale: float = 1.0) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        Ws = W / scale
        cols = [np.prod(Ws ** np.array(e)[None, :], axis=1) for e in self.exponents(W.shape[1])]
        return np.stack(cols, axis=1)


def _lstsq_fit(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1] and sv[0] > 0 and np.any(X[:, 1:] != 0):
        logger.debug("rank deficient regression design (%d of %d)", rank, X.shape[1])
    elif rank == X.shape[1] and sv[-1] > 0 and sv[0] / sv[-1] > 1e12:
        logger.warning("ill-conditioned regression design (cond %.3g)", sv[0] / sv[-1])
    return X @ coef


def lsmc_condexp(
    ensemble: PathEnsemble, t_index: int, target: np.ndarray, basis: RegressionBasis = RegressionBasis()
) -> np.ndarray:
    """Least-squares estimate of ``E[target | W_{t_index}]`` evaluated on every path.

    Singular designs (e.g. ``t_index = 0`` where every path sits at 0) get the
    minimum-norm solution, which reduces to the sample mean.
    """
    if not 0 <= t_index < ensemble.grid.n_points:
        raise IndexError(t_index)
    if ensemble.n_paths < basis.size(ensemble.d):
        raise ValueError(
            f"{ensemble.n_paths} paths cannot fit {basis.size(ensemble.d)} basis functions"
        )
    t = float(ensemble.grid.points[t_index])
    X = basis.features(ensemble.W[:, t_index, :], math.sqrt(t) if t > 0 else 1.0)
    return _lstsq_fit(X, np.asarray(target, dtype=float))


# -- engines ----------------------------------------------------------------

class QuadratureEngine:
    """Mesh + Gauss-Hermite engine for one-dimensional Markovian problems.

    States are the mesh nodes ``w``, identical at every grid time.
    """

    name = "quadrature"

    def __init__(
        self,
        grid: GridScale,
        gh_nodes: int = 64,
        mesh_nodes: int = 801,
        mesh_half_width: float = 6.0,
        interp: str = "spline",
    ):
        if interp not in ("spline", "pchip"):
            raise ValueError(f"unknown interpolation {interp!r}")
        if mesh_nodes % 2 == 0:
            raise ValueError("mesh_nodes must be odd so that w = 0 is a node")
        self.grid = grid
        self.d = 1
        self.gh_nodes = gh_nodes
        self.interp = interp
        half = mesh_half_width * math.sqrt(grid.horizon)
        self.nodes = np.linspace(-half, half, mesh_nodes)
        self.center = mesh_nodes // 2
        self._key = (float(self.nodes[0]), float(self.nodes[-1]), mesh_nodes)
        self._ops: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._gh = gauss_hermite(gh_nodes)

    @property
    def n_states(self) -> int:
        return len(self.nodes)

    def state(self, i: int) -> np.ndarray:
        return self.nodes[:, None]

    def _operators(self, v: float) -> tuple[np.ndarray, np.ndarray]:
        key = round(v, 14)
        if key not in self._ops:
            x, w = self._gh
            dx = math.sqrt(v) * x
            interp = _interpolator(self._key)
            E0 = np.zeros((self.n_states, self.n_states))
            E1 = np.zeros_like(E0)
            for xk, wk in zip(dx, w):
                R = interp.matrix(self.nodes + xk)
                E0 += wk * R
                E1 += (wk * xk) * R
            if len(self._ops) > 16:
                self._ops.clear()
            self._ops[key] = (E0, E1)
        return self._ops[key]

    def _sample(self, values: Values, centers: np.ndarray, v: float) -> tuple[np.ndarray, np.ndarray]:
        """Function values at ``centers + sqrt(v) x_k`` (rows: centers, cols: GH nodes)."""
        x, w = self._gh
        dx = math.sqrt(v) * x
        q = centers[:, None] + dx[None, :]
        if callable(values):
            f = np.asarray(values(q.reshape(-1, 1)), dtype=float)
        elif self.interp == "spline":
            f = _interpolator(self._key).matrix(q.ravel()) @ values
        else:
            f = _pchip_eval(self.nodes, values, q.ravel())
        return f.reshape(q.shape), dx

    def evaluate(self, fn: Callable[[np.ndarray], np.ndarray], i: int) -> np.ndarray:
        return np.asarray(fn(self.state(i)), dtype=float)

    def expect(self, i: int, values: Values) -> np.ndarray:
        v = float(self.grid.nu[i - 1])
        if callable(values) or self.interp == "pchip":
            f, _ = self._sample(values, self.nodes, v)
            return f @ self._gh[1]
        return self._operators(v)[0] @ values

    def cross(self, i: int, values: Values) -> np.ndarray:
        v = float(self.grid.nu[i - 1])
        if callable(values) or self.interp == "pchip":
            f, dx = self._sample(values, self.nodes, v)
            return (f @ (self._gh[1] * dx))[:, None]
        return (self._operators(v)[1] @ values)[:, None]

    def mean(self, i: int, values: Values) -> float:
        """Unconditional ``E[u(t_i, W_{t_i})]`` with ``W_{t_i} ~ N(0, t_i)``."""
        t = float(self.grid.points[i])
        if t == 0:
            f = values(self.nodes[self.center : self.center + 1, None]) if callable(values) else values[self.center : self.center + 1]
            return float(np.asarray(f).ravel()[0])
        f, _ = self._sample(values, np.zeros(1), t)
        return float(f[0] @ self._gh[1])

    def std(self, i: int, values: np.ndarray) -> float:
        m = self.mean(i, values)
        m2 = self.mean(i, np.asarray(values) ** 2)
        return math.sqrt(max(m2 - m * m, 0.0))

    def at_origin(self, values: np.ndarray) -> float:
        return float(np.asarray(values)[self.center])

    def interpolate(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if self.interp == "spline":
            return _interpolator(self._key).matrix(x) @ values
        return _pchip_eval(self.nodes, values, x)


class LsmcEngine:
    """Regression engine on a path ensemble; states are the paths."""

    name = "lsmc"

    def __init__(self, ensemble: PathEnsemble, basis_degree: int = 3):
        self.ensemble = ensemble
        self.grid = ensemble.grid
        self.d = ensemble.d
        self.basis = RegressionBasis(basis_degree)
        if ensemble.n_paths < self.basis.size(self.d):
            raise ValueError(
                f"{ensemble.n_paths} paths cannot fit {self.basis.size(self.d)} basis functions"
            )
        self._dW = ensemble.increments
        self._features: dict[int, np.ndarray] = {}

    @property
    def n_states(self) -> int:
        return self.ensemble.n_paths

    def state(self, i: int) -> np.ndarray:
        return self.ensemble.W[:, i, :]

    def evaluate(self, fn: Callable[[np.ndarray], np.ndarray], i: int) -> np.ndarray:
        return np.asarray(fn(self.state(i)), dtype=float)

    def _X(self, i: int) -> np.ndarray:
        if i not in self._features:
            t = float(self.grid.points[i])
            self._features[i] = self.basis.features(self.state(i), math.sqrt(t) if t > 0 else 1.0)
        return self._features[i]

    def _values(self, i: int, values: Values) -> np.ndarray:
        return self.evaluate(values, i) if callable(values) else np.asarray(values, dtype=float)

    def expect(self, i: int, values: Values) -> np.ndarray:
        return _lstsq_fit(self._X(i - 1), self._values(i, values))

    def cross(self, i: int, values: Values) -> np.ndarray:
        y = self._values(i, values)
        dW = self._dW[:, i - 1, :]
        return _lstsq_fit(self._X(i - 1), y[:, None] * dW)

    def mean(self, i: int, values: Values) -> float:
        return float(np.mean(self._values(i, values)))

    def std(self, i: int, values: Values) -> float:
        return float(np.std(self._values(i, values), ddof=1))

    def at_origin(self, values: np.ndarray) -> float:
        return float(np.mean(values))


@dataclass(frozen=True)
class EngineConfig:
    """Run-level engine selection (scenario keys ``engine``, ``gh_nodes``, ...)."""

    engine: str = "quadrature"
    gh_nodes: int = 64
    mesh_nodes: int = 801
    mesh_half_width: float = 6.0
    basis_degree: int = 3
    interp: str = "spline"

    def build(self, grid: GridScale, ensemble: PathEnsemble | None = None):
        if self.engine == "quadrature":
            return QuadratureEngine(grid, self.gh_nodes, self.mesh_nodes, self.mesh_half_width, self.interp)
        if self.engine == "lsmc":
            if ensemble is None:
                raise ValueError("the lsmc engine needs a path ensemble")
            return LsmcEngine(ensemble, self.basis_degree)
        raise ValueError(f"unknown engine {self.engine!r}")
