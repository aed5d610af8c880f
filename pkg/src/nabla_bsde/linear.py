"""Linear equations in closed form, the Girsanov shift and the comparison harness.

For the linear driver ``g = a y + b z + c`` (scalar ``Y``, one Brownian
dimension) the solution is

    Y_t = E[xi Gamma_T / Gamma_t + sum_{s in (t, T]} (Gamma_s / Gamma_t) c_s nu_s | F_t],

with ``Gamma = gamma * E`` and ``E`` the Doleans exponential of ``int b dW``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bsde import Driver, TerminalCondition, solve_backward
from .condexp import RegressionBasis, _lstsq_fit
from .stochastic import MartingalePath, PathEnsemble, doleans_exponential, stochastic_integral
from .timescale import GridScale

GAMMAS = ("exponential", "timescale", "implicit")


@dataclass(frozen=True)
class StepFunction:
    """Piecewise constant ``f(t) = values[k]`` for ``t in (breaks[k-1], breaks[k]]``.

    ``breaks`` are the interior break points; ``len(values) == len(breaks) + 1``.
    """

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.breaks) + 1:
            raise ValueError("need one more value than break points")
        if any(b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("break points must increase")

    @property
    def bound(self) -> float:
        return max(abs(v) for v in self.values)

    def __call__(self, t):
        k = np.searchsorted(np.asarray(self.breaks, dtype=float), t, side="left")
        out = np.asarray(self.values, dtype=float)[k]
        return float(out) if np.ndim(out) == 0 else out


def _on_steps(coef, grid: GridScale) -> np.ndarray:
    """Coefficient value on each step ``(t_{i-1}, t_i]``, evaluated at ``t_i``."""
    if callable(coef):
        return np.array([coef(float(t)) for t in grid.points[1:]], dtype=float)
    return np.full(grid.n_steps, float(coef))


@dataclass(frozen=True)
class LinearData:
    """Coefficients of ``g(t, y, z) = a_t y + b_t z + c_t`` and the terminal condition.

    ``gamma`` selects the discount factor: ``"exponential"`` uses
    ``exp(int_0^t a nabla s)``, ``"timescale"`` the nabla exponential
    ``e_a(t, 0)`` (factor ``1 + a nu`` on scattered steps) and ``"implicit"``
    ``1 / e_{-a}(t, 0)`` (factor ``1 / (1 - a nu)``), which is what the
    implicit backward step produces.  All three agree on dense parts.
    """

    a: float | StepFunction = 0.0
    b: float | StepFunction = 0.0
    c: float | StepFunction = 0.0
    xi: TerminalCondition = field(default_factory=TerminalCondition.identity)
    gamma: str = "exponential"

    def __post_init__(self) -> None:
        if self.gamma not in GAMMAS:
            raise ValueError(f"gamma must be one of {GAMMAS}")

    def driver(self) -> Driver:
        return Driver.linear(self.a, self.b, self.c)

    def gamma_path(self, grid: GridScale) -> np.ndarray:
        """``gamma_{t_i}`` at every grid point."""
        a = _on_steps(self.a, grid)
        an = a * grid.nu
        dense = grid.dense_refinement
        if self.gamma == "exponential":
            log_f = an
        elif self.gamma == "timescale":
            if np.any(1.0 + an[~dense] <= 0):
                raise ValueError("e_a is not positive: 1 + a nu <= 0 on a scattered step")
            log_f = np.where(dense, an, np.log1p(np.where(dense, 0.0, an)))
        else:
            if np.any(1.0 - an[~dense] <= 0):
                raise ValueError("1 - a nu <= 0 on a scattered step")
            log_f = np.where(dense, an, -np.log1p(-np.where(dense, 0.0, an)))
        return np.exp(np.concatenate(([0.0], np.cumsum(log_f))))


def density(grid: GridScale, b, ensemble: PathEnsemble) -> MartingalePath:
    """Doleans exponential of ``int b dW`` compensated by the predictable bracket ``b^2 nu``."""
    if ensemble.d != 1:
        raise ValueError("the linear closed form is one-dimensional")
    bs = _on_steps(b, grid)
    M = stochastic_integral(grid, np.broadcast_to(bs, (ensemble.n_paths, grid.n_steps)), ensemble)
    return doleans_exponential(grid, M, bracket=bs**2 * grid.nu)


@dataclass(eq=False)
class ClosedFormSolution:
    """Per-path estimates ``Y[path, i]`` and their means with standard errors."""

    grid: GridScale
    Y: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    positive: np.ndarray
    warnings: tuple[str, ...] = ()
    gamma: str = "exponential"

    @property
    def y0(self) -> float:
        return float(self.mean[0])


def linear_solve_closed_form(
    grid: GridScale, data: LinearData, ensemble: PathEnsemble, basis_degree: int = 3
) -> ClosedFormSolution:
    """Monte Carlo evaluation of the closed form.

    ``H_i = xi Gamma_T / Gamma_i + sum_{j > i} Gamma_j / Gamma_i c_j nu_j`` is
    computed per path and regressed on polynomials of ``W_{t_i}`` (a Markov
    projection: ``H_i`` only involves increments after ``t_i``).  At ``t = 0``
    the estimate is the plain sample mean.  Paths with a nonpositive
    Doleans factor are flagged and excluded.
    """
    grid.require_solvable()
    E = density(grid, data.b, ensemble)
    Gamma = data.gamma_path(grid)[None, :] * E.values
    keep = E.positive
    if not keep.any():
        raise ValueError("degenerate density: no path has a positive Doleans exponential")
    Gk = Gamma[keep]
    Wk = ensemble.W[keep]
    xi = data.xi(Wk[:, -1, :])
    c = _on_steps(data.c, grid)
    # tail[j] = sum_{k >= j} Gamma_k c_k nu_k, aligned with grid points 1..n
    flow = Gk[:, 1:] * (c * grid.nu)[None, :]
    tail = np.zeros_like(Gk)
    tail[:, :-1] = np.cumsum(flow[:, ::-1], axis=1)[:, ::-1]
    H = (xi[:, None] * Gk[:, -1:] + tail) / Gk
    basis = RegressionBasis(basis_degree)
    Y = np.empty_like(H)
    for i in range(grid.n_points):
        t = float(grid.points[i])
        if t == 0:
            Y[:, i] = H[:, i].mean()
        else:
            Y[:, i] = _lstsq_fit(basis.features(Wk[:, i, :], math.sqrt(t)), H[:, i])
    n = H.shape[0]
    se = H.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(grid.n_points)
    return ClosedFormSolution(grid, Y, H.mean(axis=0), se, E.positive, E.warnings, data.gamma)


# -- Girsanov -----------------------------------------------------------------

@dataclass(eq=False)
class GirsanovReport:
    W_tilde: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    weighted_mean: np.ndarray
    weighted_se: np.ndarray
    weight_mean: float
    weight_se: float

    def within(self, k: float = 3.0) -> bool:
        """Weighted means of ``W_tilde`` are all within ``k`` standard errors of 0."""
        se = np.where(self.weighted_se > 0, self.weighted_se, np.inf)
        ok = np.abs(self.weighted_mean) <= k * se
        return bool(np.all(ok | (self.weighted_mean == 0)))


def girsanov_shift(grid: GridScale, b, ensemble: PathEnsemble) -> GirsanovReport:
    """``W~ = W - int b nabla s`` with the density weights ``E_T``.

    Reports unweighted and ``E_T``-weighted sample means of ``W~`` at each
    grid point; under the reweighted measure ``W~`` is a martingale from 0.
    """
    bs = _on_steps(b, grid)
    drift = np.concatenate(([0.0], np.cumsum(bs * grid.nu)))
    Wt = ensemble.W[:, :, 0] - drift[None, :]
    w = density(grid, b, ensemble).terminal
    n = len(w)
    root = math.sqrt(n)
    weighted = Wt * w[:, None]
    return GirsanovReport(
        Wt, w,
        Wt.mean(axis=0), Wt.std(axis=0, ddof=1) / root,
        weighted.mean(axis=0), weighted.std(axis=0, ddof=1) / root,
        float(w.mean()), float(w.std(ddof=1) / root),
    )


# -- comparison -----------------------------------------------------------------

@dataclass(eq=False)
class ComparisonReport:
    """``status`` is ``"pass"``, ``"fail"`` or ``"refused"`` (hypotheses violated)."""

    status: str
    t: np.ndarray
    min_diff: np.ndarray
    tol: float
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def rows(self) -> list[tuple[float, float, bool]]:
        return [(float(t), float(d), bool(d >= -self.tol)) for t, d in zip(self.t, self.min_diff)]


def comparison_check(
    grid: GridScale,
    pair1: tuple[Driver, TerminalCondition],
    pair2: tuple[Driver, TerminalCondition],
    engine,
    tol: float = 1e-8,
    hypothesis_slack: float = 0.0,
) -> ComparisonReport:
    """Solve both equations and report ``min (Y^1 - Y^2)`` per grid time.

    The hypotheses ``xi^1 >= xi^2`` (on the engine's terminal states) and
    ``g^1(t, Y^2_-, Z^2) >= g^2(t, Y^2_-, Z^2)`` (along the second solution)
    are validated first; a violation yields ``status="refused"``.
    """
    (g1, xi1), (g2, xi2) = pair1, pair2
    n = grid.n_steps
    empty = np.full(grid.n_points, np.nan)
    x1, x2 = engine.evaluate(xi1, n), engine.evaluate(xi2, n)
    if np.any(x1 < x2 - hypothesis_slack):
        return ComparisonReport("refused", grid.points, empty, tol,
                                f"xi1 < xi2 on {int(np.sum(x1 < x2 - hypothesis_slack))} terminal states")
    s2 = solve_backward(grid, g2, xi2, engine)
    for i in range(1, n + 1):
        t = float(grid.points[i])
        gap = g1(t, s2.Y[i - 1], s2.Z[i - 1]) - g2(t, s2.Y[i - 1], s2.Z[i - 1])
        if np.any(gap < -hypothesis_slack):
            return ComparisonReport("refused", grid.points, empty, tol,
                                    f"g1 < g2 along the second solution at t={t:g}")
    s1 = solve_backward(grid, g1, xi1, engine)
    mins = np.array([float(np.min(s1.Y[i] - s2.Y[i])) for i in range(grid.n_points)])
    status = "pass" if np.all(mins >= -tol) else "fail"
    return ComparisonReport(status, grid.points.copy(), mins, tol)


def linear_table(
    grid: GridScale, closed: ClosedFormSolution, backward_means: Sequence[float]
) -> list[tuple[float, float, float, float]]:
    """Rows ``(t, Y_closed_form, Y_backward, abs_diff)``."""
    return [(float(t), float(y), float(yb), abs(float(y) - float(yb)))
            for t, y, yb in zip(grid.points, closed.mean, backward_means)]


def gaussian_linear_y0(a: float, b: float, c: float, T: float, xi: str = "square") -> float:
    """``Y_0`` for constant coefficients on the interval ``[0, T]``.

    Under the shifted measure ``W_T ~ N(b T, T)``; ``xi`` is ``"square"``
    (``W_T^2``) or ``"identity"`` (``W_T``).
    """
    m = {"square": T + (b * T) ** 2, "identity": b * T}[xi]
    flow = c * T if a == 0 else c * math.expm1(a * T) / a
    return math.exp(a * T) * m + flow

