"""Backward stochastic dynamic equations on time scales.

The equation solved is

    Y_t = xi + int_t^T g(u, Y_{u-}, Z_u) nabla u - int_t^T Z_u nabla W_u - (N_T - N_t)

on the grid of a time scale.  Because ``Y_{u-} = Y_{rho(u)}`` at a
left-scattered ``u``, one grid step is the implicit backward difference

    Y_{i-1} = E[Y_i | F_{i-1}] + g(t_i, Y_{i-1}, Z_i) nu_i,   Z_i = E[Y_i dW_i | F_{i-1}] / nu_i.

Three solvers share that step convention: :func:`solve_backward` (implicit
sweep), :func:`free_driver_solve` (drivers free of ``(y, z)``, built from the
martingale decomposition) and :func:`picard_solve` (contraction iteration
in the beta-norm).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .condexp import LsmcEngine, Values
from .decomposition import decompose
from .timescale import GridScale

logger = logging.getLogger(__name__)

INNER_TOL = 1e-12
MAX_INNER = 500
PICARD_TOL = 1e-10
MAX_PICARD = 50


class StepSizeError(ValueError):
    """The grid is too coarse for the implicit step to be a contraction."""


class NumericalError(RuntimeError):
    """An iteration failed to converge."""


class PicardDivergenceError(NumericalError):
    pass


# -- data -------------------------------------------------------------------

def _znorm(z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(z) ** 2, axis=-1))


def _coef(x, t: float):
    return x(t) if callable(x) else np.asarray(x, dtype=float) if np.ndim(x) else float(x)


def _bound(x):
    if callable(x):
        try:
            return x.bound
        except AttributeError:
            raise ValueError("time-dependent coefficients must declare a bound") from None
    return np.abs(np.asarray(x, dtype=float)) if np.ndim(x) else abs(float(x))


_BUILTINS: dict[str, Callable[..., Callable]] = {
    "sin": lambda L, c=0.0: lambda t, y, z: L * np.sin(y) + c,
    "abs_z": lambda L, c=0.0: lambda t, y, z: L * _znorm(z) + c,
    "sin_abs_z": lambda L, c=0.0: lambda t, y, z: L * (np.sin(y) + _znorm(z)) + c,
    "tanh": lambda L, c=0.0: lambda t, y, z: L * np.tanh(y) + c,
    "relu": lambda L, c=0.0: lambda t, y, z: L * np.maximum(y, 0.0) + c,
    "cos_z": lambda L, c=0.0: lambda t, y, z: L * np.cos(np.sum(z, axis=-1) / math.sqrt(z.shape[-1])) + c,
}


@dataclass(frozen=True, eq=False)
class Driver:
    """Generator ``g(t, y, z)`` with declared Lipschitz constant ``L``.

    ``y`` has shape ``(n,)`` and ``z`` shape ``(n, d)``; the result is ``(n,)``.
    """

    kind: str
    params: Mapping[str, float]
    L: float
    fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t, y, np.asarray(z, dtype=float)), dtype=float), y.shape)

    def solve_implicit(self, t: float, m: np.ndarray, z: np.ndarray, nu: float) -> np.ndarray | None:
        """Exact root of ``y = m + g(t, y, z) nu`` when ``g`` is affine in ``y``, else ``None``."""
        if self.kind != "linear":
            return None
        p = self.params
        a, bv, c = _coef(p["a"], t), np.atleast_1d(_coef(p["b"], t)), _coef(p["c"], t)
        return (m + (z @ bv + c) * nu) / (1.0 - a * nu)

    def step_ok(self, nu: float) -> bool:
        """Whether the implicit step of length ``nu`` has a unique, computable solution."""
        if self.kind == "linear":
            a = self.params["a"]
            return (1.0 - a * nu > 0.0) if not callable(a) else _bound(a) * nu < 1.0
        return self.L * nu < 1.0

    @property
    def depends_on_solution(self) -> bool:
        return self.kind not in ("zero", "constant")

    @classmethod
    def zero(cls) -> "Driver":
        return cls("zero", {}, 0.0, lambda t, y, z: np.zeros_like(y))

    @classmethod
    def constant(cls, c: float) -> "Driver":
        return cls("constant", {"c": c}, 0.0, lambda t, y, z: np.full_like(y, c))

    @classmethod
    def linear(cls, a, b, c) -> "Driver":
        """``a y + b . z + c``; coefficients are numbers or bounded functions of ``t``.

        Functions of ``t`` must carry a ``bound`` attribute (see
        :class:`nabla_bsde.linear.StepFunction`).
        """
        L = max(_bound(a), float(np.linalg.norm(np.atleast_1d(_bound(b)))))
        return cls("linear", {"a": a, "b": b, "c": c}, L,
                   lambda t, y, z: _coef(a, t) * y + z @ np.atleast_1d(_coef(b, t)) + _coef(c, t))

    @classmethod
    def builtin(cls, name: str, L: float, c: float = 0.0) -> "Driver":
        try:
            make = _BUILTINS[name]
        except KeyError:
            raise ValueError(f"unknown driver {name!r}; choose from {sorted(_BUILTINS)}") from None
        return cls(name, {"L": L, "c": c}, L, make(L, c))

    @classmethod
    def custom(cls, fn: Callable, L: float, name: str = "custom") -> "Driver":
        return cls(name, {}, L, fn)

    def shifted(self, c: float) -> "Driver":
        """``g + c``."""
        return Driver(f"{self.kind}+{c}", dict(self.params), self.L,
                      lambda t, y, z, g=self.fn: g(t, y, z) + c)

    def check_lipschitz(self, d: int = 1, n: int = 2000, seed: int = 0, scale: float = 3.0) -> float:
        """Largest sampled ``|g(y,z) - g(y',z')| / (|y-y'| + |z-z'|)``; raises if above ``L``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1)
        y1, y2 = rng.normal(0, scale, n), rng.normal(0, scale, n)
        z1, z2 = rng.normal(0, scale, (n, d)), rng.normal(0, scale, (n, d))
        num = np.abs(self(t, y1, z1) - self(t, y2, z2))
        den = np.abs(y1 - y2) + _znorm(z1 - z2)
        ratio = float(np.max(num / den))
        if ratio > self.L * (1 + 1e-9) + 1e-12:
            raise ValueError(f"driver {self.kind} violates its Lipschitz constant: {ratio} > {self.L}")
        return ratio


@dataclass(frozen=True, eq=False)
class TerminalCondition:
    """``xi = Phi(W_T)``; ``Phi`` maps ``(n, d)`` states to ``(n,)``."""

    kind: str
    params: Mapping[str, float]
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        return np.broadcast_to(np.asarray(self.fn(w), dtype=float), (w.shape[0],))

    @classmethod
    def identity(cls) -> "TerminalCondition":
        return cls("identity", {}, lambda w: w[:, 0])

    @classmethod
    def square(cls) -> "TerminalCondition":
        return cls("square", {}, lambda w: np.sum(w**2, axis=1))

    @classmethod
    def call(cls, K: float) -> "TerminalCondition":
        return cls("call", {"K": K}, lambda w: np.maximum(w[:, 0] - K, 0.0))

    @classmethod
    def constant(cls, c: float) -> "TerminalCondition":
        return cls("constant", {"c": c}, lambda w: np.full(w.shape[0], float(c)))

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray], np.ndarray], name: str = "custom") -> "TerminalCondition":
        return cls(name, {}, fn)

    def shifted(self, c: float) -> "TerminalCondition":
        return TerminalCondition(f"{self.kind}+{c}", dict(self.params), lambda w, f=self.fn: f(w) + c)


# -- solution ---------------------------------------------------------------

@dataclass(eq=False)
class BsdeSolution:
    """``Y[i]`` on engine states at ``t_i``; ``Z[i-1]`` and ``n_var[i-1]`` on states at ``t_{i-1}``.

    ``n_var`` is the conditional variance ``E[dN_i^2 | F_{i-1}]``.
    ``N_increments`` holds per-path ``dN`` when the engine works on paths.
    """

    grid: GridScale
    engine: object
    Y: list[np.ndarray]
    Z: np.ndarray
    n_var: np.ndarray
    N_increments: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self) -> float:
        return self.engine.at_origin(self.Y[0])

    def table(self) -> list[dict[str, float]]:
        """Rows ``t, nu, Y_mean, Y_std, Z_mean, Z_std, N_var`` (step quantities sit at the step's right end)."""
        e = self.engine
        rows = []
        for i, t in enumerate(self.grid.points):
            row = {"t": float(t), "nu": float(self.grid.nu[i - 1]) if i else 0.0,
                   "Y_mean": e.mean(i, self.Y[i]), "Y_std": e.std(i, self.Y[i]) if i else 0.0}
            if i:
                z = self.Z[i - 1, :, 0]
                row.update(Z_mean=e.mean(i - 1, z), Z_std=e.std(i - 1, z) if i > 1 else 0.0,
                           N_var=e.mean(i - 1, self.n_var[i - 1]))
            else:
                row.update(Z_mean=0.0, Z_std=0.0, N_var=0.0)
            rows.append(row)
        return rows


def default_beta(L: float) -> float:
    return 8.0 * (1.0 + L * L)


def _check_steps(grid: GridScale, driver: Driver) -> None:
    grid.require_solvable()
    bad = [float(nu) for nu in np.unique(grid.nu) if not driver.step_ok(float(nu))]
    if bad:
        nu = max(bad)
        raise StepSizeError(
            f"L * nu = {driver.L * nu:.3g} >= 1 on a step of length {nu:.3g}; the implicit step needs "
            f"L * nu < 1. Refine delta (L = {driver.L}); steps that cross gaps of the time scale "
            "cannot be refined, so L must stay below 1 / (largest gap)."
        )


def _n_var(engine, i: int, nxt: Values, m: np.ndarray, z: np.ndarray, nu: float) -> np.ndarray:
    sq = (lambda w, f=nxt: np.asarray(f(w)) ** 2) if callable(nxt) else nxt**2
    return engine.expect(i, sq) - m**2 - np.sum(z**2, axis=1) * nu


def _implicit_step(driver: Driver, t: float, m: np.ndarray, z: np.ndarray, nu: float,
                   tol: float, max_inner: int) -> tuple[np.ndarray, int]:
    """Solve ``y = m + g(t, y, z) nu``; returns the root and the iteration count (0 if exact)."""
    exact = driver.solve_implicit(t, m, z, nu)
    if exact is not None:
        return exact, 0
    y = m.copy()
    for it in range(1, max_inner + 1):
        y_new = m + driver(t, y, z) * nu
        done = np.max(np.abs(y_new - y)) <= tol * max(1.0, float(np.max(np.abs(y_new))))
        y = y_new
        if done:
            return y, it
    raise NumericalError(f"inner iteration did not converge at t={t}")


def solve_backward(
    grid: GridScale,
    driver: Driver,
    terminal: TerminalCondition,
    engine,
    inner_tol: float = INNER_TOL,
    max_inner: int = MAX_INNER,
) -> BsdeSolution:
    """Implicit backward sweep; the implicit equation is solved by fixed-point iteration."""
    _check_steps(grid, driver)
    n = grid.n_steps
    Y: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    Y[n] = engine.evaluate(terminal, n)
    Z = np.empty((n, engine.n_states, engine.d))
    n_var = np.empty((n, engine.n_states))
    on_paths = isinstance(engine, LsmcEngine)
    dN = np.empty((engine.n_states, n)) if on_paths else None
    inner = np.zeros(n, dtype=int)
    nxt: Values = terminal
    for i in range(n, 0, -1):
        t, nu = float(grid.points[i]), float(grid.nu[i - 1])
        m = engine.expect(i, nxt)
        z = engine.cross(i, nxt) / nu
        y, inner[i - 1] = _implicit_step(driver, t, m, z, nu, inner_tol, max_inner)
        Z[i - 1] = z
        n_var[i - 1] = _n_var(engine, i, nxt, m, z, nu)
        if on_paths:
            dN[:, i - 1] = Y[i] - m - np.sum(z * engine._dW[:, i - 1, :], axis=1)
        Y[i - 1] = y
        nxt = y
    return BsdeSolution(grid, engine, Y, Z, n_var, dN,
                        {"solver": "backward", "inner_iterations": inner.tolist(), "engine": engine.name})


# -- (y, z)-free drivers ------------------------------------------------------

def _g0_steps(grid: GridScale, g0, n_states: int) -> np.ndarray:
    """Normalize ``g0`` to an array ``(n_steps, n_states)`` (value on step ``i`` at ``t_{i-1}`` states)."""
    if callable(g0):
        vals = np.array([np.broadcast_to(np.asarray(g0(float(t)), dtype=float), (n_states,))
                         for t in grid.points[1:]])
    else:
        vals = np.asarray(g0, dtype=float)
        if vals.ndim == 0:
            vals = np.full((grid.n_steps, n_states), float(vals))
        elif vals.ndim == 1:
            vals = np.repeat(vals[:, None], n_states, axis=1)
    if vals.shape != (grid.n_steps, n_states):
        raise ValueError(f"g0 must give {grid.n_steps} steps x {n_states} states, got {vals.shape}")
    return vals


def _deterministic(g0) -> bool:
    if callable(g0):
        return True
    arr = np.asarray(g0)
    return arr.ndim <= 1


def free_driver_solve(grid: GridScale, g0, terminal: TerminalCondition, engine) -> BsdeSolution:
    """Solve the equation with a driver ``g0`` that ignores ``(y, z)``.

    ``g0`` is a function of time, a per-step array ``(n_steps,)``, or a
    predictable state-dependent array ``(n_steps, n_states)`` (value on step
    ``i`` evaluated at the states of ``t_{i-1}``).

    Deterministic ``g0`` follows the construction literally: decompose
    ``M_t = E[xi + int_0^T g0 | F_t]`` and set ``Y_t = M_t - int_0^t g0``.
    State-dependent ``g0`` makes ``M_T`` path-dependent, so the same
    construction is carried out one step at a time:
    ``Y_{i-1} = E[Y_i | F_{i-1}] + g0_i nu_i``.
    """
    grid.require_solvable()
    n = grid.n_steps
    g = _g0_steps(grid, g0, engine.n_states)
    on_paths = isinstance(engine, LsmcEngine)
    dN = np.empty((engine.n_states, n)) if on_paths else None
    n_var = np.empty((n, engine.n_states))
    if _deterministic(g0):
        g_det = g[:, 0]
        cum = np.concatenate(([0.0], np.cumsum(g_det * grid.nu)))
        dec = decompose(grid, terminal.shifted(float(cum[-1])), engine)
        Y = [dec.M_states[i] - cum[i] for i in range(n + 1)]
        Z = dec.Z_states
        for i in range(n, 0, -1):
            m = Y[i - 1] - g_det[i - 1] * grid.nu[i - 1]
            nxt = terminal if i == n else Y[i]
            n_var[i - 1] = _n_var(engine, i, nxt, m, Z[i - 1], grid.nu[i - 1])
            if on_paths:
                dN[:, i - 1] = Y[i] - m - np.sum(Z[i - 1] * engine._dW[:, i - 1, :], axis=1)
        route = "decomposition"
    else:
        Y = [None] * (n + 1)  # type: ignore[list-item]
        Y[n] = engine.evaluate(terminal, n)
        Z = np.empty((n, engine.n_states, engine.d))
        nxt: Values = terminal
        for i in range(n, 0, -1):
            nu = float(grid.nu[i - 1])
            m = engine.expect(i, nxt)
            Z[i - 1] = engine.cross(i, nxt) / nu
            n_var[i - 1] = _n_var(engine, i, nxt, m, Z[i - 1], nu)
            if on_paths:
                dN[:, i - 1] = Y[i] - m - np.sum(Z[i - 1] * engine._dW[:, i - 1, :], axis=1)
            Y[i - 1] = m + g[i - 1] * nu
            nxt = Y[i - 1]
        route = "stepwise"
    return BsdeSolution(grid, engine, Y, Z, n_var, dN,
                        {"solver": "free_driver", "route": route, "engine": engine.name})


lemma43_solve = free_driver_solve


# -- beta norms ---------------------------------------------------------------

def beta_norm(values, beta: float, grid: GridScale, martingale: bool = False, squared: bool = False) -> float:
    """``(E sum_i |phi_i|^2 e_beta(t_i, 0) nu_i)^(1/2)`` over the grid steps.

    ``values`` is per step: shape ``(n_steps,)`` (deterministic),
    ``(n_samples, n_steps)`` or ``(n_samples, n_steps, d)``.  With
    ``martingale=True`` the values are increments ``dN_i`` and the
    ``nabla [N]`` bracket replaces ``nu_i``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = np.sum(v**2, axis=2)
    else:
        v = v**2
    second = v if v.ndim == 1 else v.mean(axis=0)
    if second.shape != (grid.n_steps,):
        raise ValueError(f"need {grid.n_steps} steps, got {second.shape}")
    return norm_from_moments(second, beta, grid, martingale, squared)


def norm_from_moments(second: np.ndarray, beta: float, grid: GridScale,
                      martingale: bool = False, squared: bool = False) -> float:
    """Same as :func:`beta_norm` from per-step second moments ``E|phi_i|^2``."""
    e = grid.exp_beta(beta)[1:]
    w = e if martingale else e * grid.nu
    total = float(np.dot(w, second))
    return total if squared else math.sqrt(total)


def _moments(engine, sol_Y, Z, n_var, grid):
    """Per-step ``E|Y_{i-1}|^2``, ``E|Z_i|^2``, ``E dN_i^2``."""
    n = grid.n_steps
    y2 = np.array([engine.mean(i - 1, sol_Y[i - 1] ** 2) for i in range(1, n + 1)])
    z2 = np.array([engine.mean(i - 1, np.sum(Z[i - 1] ** 2, axis=1)) for i in range(1, n + 1)])
    nv = np.array([engine.mean(i - 1, n_var[i - 1]) for i in range(1, n + 1)])
    return y2, z2, nv


def _difference(engine, grid: GridScale, a: BsdeSolution, b: BsdeSolution):
    """Second moments of ``(dY, dZ, dN)`` between two solutions."""
    n = grid.n_steps
    dY = [a.Y[i] - b.Y[i] for i in range(n + 1)]
    dZ = a.Z - b.Z
    nv = np.empty_like(a.n_var)
    for i in range(1, n + 1):
        m = engine.expect(i, dY[i])
        nv[i - 1] = _n_var(engine, i, dY[i], m, dZ[i - 1], grid.nu[i - 1])
    return _moments(engine, dY, dZ, nv, grid)


# -- Picard -----------------------------------------------------------------

def picard_solve(
    grid: GridScale,
    driver: Driver,
    terminal: TerminalCondition,
    engine,
    beta: float | None = None,
    max_iters: int = MAX_PICARD,
    tol: float = PICARD_TOL,
) -> BsdeSolution:
    """Picard iteration ``(y, z, n) -> I[(y, z, n)]`` started from zero.

    Each iteration freezes ``g0_i = g(t_i, y_{i-1}, z_i)`` and calls
    :func:`free_driver_solve`.  Stops once the squared beta-norm of successive
    differences drops below ``tol``.  Diagnostics record the residual history
    and the contraction ratio
    ``|d(Y,Z,N)|^2 / (|dy|^2 + |dz|^2)`` per iteration.
    """
    _check_steps(grid, driver)
    beta = default_beta(driver.L) if beta is None else beta
    n = grid.n_steps
    S = engine.n_states
    y = [np.zeros(S) for _ in range(n + 1)]
    z = np.zeros((n, S, engine.d))
    prev: BsdeSolution | None = None
    prev_yz: float | None = None
    residuals: list[float] = []
    ratios: list[float | None] = []
    for k in range(1, max_iters + 1):
        g0 = np.stack([driver(float(grid.points[i]), y[i - 1], z[i - 1]) for i in range(1, n + 1)])
        sol = free_driver_solve(grid, g0, terminal, engine)
        if prev is None:
            zero = BsdeSolution(grid, engine, [np.zeros(S)] * (n + 1), np.zeros_like(sol.Z), np.zeros_like(sol.n_var))
            y2, z2, nv = _difference(engine, grid, sol, zero)
        else:
            y2, z2, nv = _difference(engine, grid, sol, prev)
        nY = norm_from_moments(y2, beta, grid, squared=True)
        nZ = norm_from_moments(z2, beta, grid, squared=True)
        nN = norm_from_moments(nv, beta, grid, martingale=True, squared=True)
        res = nY + nZ + nN
        residuals.append(res)
        ratios.append(res / prev_yz if prev_yz is not None and prev_yz > 1e-24 else None)
        prev_yz = nY + nZ
        y, z, prev = sol.Y, sol.Z, sol
        if res < tol:
            sol.diagnostics.update(
                solver="picard", iterations=k - 1 if k > 1 else 0, picard_maps=k, beta=beta,
                residual_history=residuals, contraction_ratios=ratios,
            )
            return sol
    raise PicardDivergenceError(f"no convergence after {max_iters} Picard iterations (last residual {residuals[-1]:.3g})")


# -- a priori estimate ---------------------------------------------------------

@dataclass(frozen=True)
class AprioriReport:
    """Both sides of the a priori estimate plus the exact grid energy identity.

    ``identity_lhs`` and ``identity_rhs`` are the two sides of
    ``Y_0^2 + sum de_i Y_{i-1}^2 + sum e_i (|Z_i|^2 nu_i + dN_i^2)
    = e_n xi^2 + sum e_i (2 Y_{i-1} g0_i nu_i - g0_i^2 nu_i^2)`` (in expectation),
    with ``de_i = e_i - e_{i-1}``; they agree to engine accuracy for any
    correct solution, which separates solver error from slack in the estimate.
    """

    lhs: float
    rhs: float
    se: float
    weighting: str
    identity_lhs: float = math.nan
    identity_rhs: float = math.nan

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 3.0 * self.se


def apriori_check(
    solution: BsdeSolution,
    g0,
    terminal: TerminalCondition,
    beta: float,
    weighting: str = "s",
) -> AprioriReport:
    """Both sides of the a priori estimate at ``t = 0``.

    LHS ``|Y_0|^2 + E sum e (beta/2 |Y_{s-}|^2 + |Z_s|^2) nu + E sum e d[N]``,
    RHS ``E|xi|^2 e_beta(T, 0) + (2/beta) E sum e |g0|^2 nu``.  ``weighting="s"``
    uses ``e_beta(s, 0)`` throughout, ``"s-"`` uses ``e_beta(s-, 0)`` for the
    integrands.  On path engines the standard error is that of the per-path
    difference RHS - LHS.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if weighting not in ("s", "s-"):
        raise ValueError("weighting must be 's' or 's-'")
    grid, engine = solution.grid, solution.engine
    n = grid.n_steps
    e_all = grid.exp_beta(beta)
    e_right = e_all[1:]
    e = e_right if weighting == "s" else e_all[:-1]
    de = np.diff(e_all)
    g = _g0_steps(grid, g0, engine.n_states)
    nu = grid.nu
    if isinstance(engine, LsmcEngine):
        Yl = np.stack(solution.Y[:-1], axis=1)
        z2 = np.sum(solution.Z**2, axis=2).T
        dN2 = solution.N_increments**2
        gT = g.T
        xi = engine.evaluate(terminal, n)
        lhs_p = Yl[:, 0] ** 2 + np.sum(e * nu * (0.5 * beta * Yl**2 + z2) + e * dN2, axis=1)
        rhs_p = xi**2 * e_all[-1] + (2.0 / beta) * np.sum(e * nu * gT**2, axis=1)
        id_l = Yl[:, 0] ** 2 + np.sum(de * Yl**2 + e_right * (z2 * nu + dN2), axis=1)
        id_r = xi**2 * e_all[-1] + np.sum(e_right * (2 * Yl * gT * nu - gT**2 * nu**2), axis=1)
        diff = rhs_p - lhs_p
        return AprioriReport(float(lhs_p.mean()), float(rhs_p.mean()),
                             float(diff.std(ddof=1) / math.sqrt(len(diff))), weighting,
                             float(id_l.mean()), float(id_r.mean()))
    y2, z2, nv = _moments(engine, solution.Y, solution.Z, solution.n_var, grid)
    g2 = np.array([engine.mean(i, g[i] ** 2) for i in range(n)])
    yg = np.array([engine.mean(i, solution.Y[i] * g[i]) for i in range(n)])
    y0sq = solution.y0**2
    xi2 = engine.mean(n, lambda w: terminal(w) ** 2)
    lhs = y0sq + float(np.dot(e * nu, 0.5 * beta * y2 + z2)) + float(np.dot(e, nv))
    rhs = xi2 * e_all[-1] + (2.0 / beta) * float(np.dot(e * nu, g2))
    id_l = y0sq + float(np.dot(de, y2)) + float(np.dot(e_right, z2 * nu + nv))
    id_r = xi2 * e_all[-1] + float(np.dot(e_right, 2 * yg * nu - g2 * nu**2))
    return AprioriReport(lhs, rhs, 0.0, weighting, id_l, id_r)
