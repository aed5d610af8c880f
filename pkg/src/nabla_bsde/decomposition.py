"""Martingale decomposition ``M = M_0 + I(Z) + N`` on a grid.

On each step the integrand is the L2 projection of the martingale increment
on the Brownian increment, ``Z = E[dM dW | F] / nu``, computed per driver
dimension.  The remainder ``N`` is orthogonal to every stochastic integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .condexp import QuadratureEngine, Values
from .stochastic import MartingalePath, PathEnsemble, stochastic_integral
from .timescale import GridScale


@dataclass(eq=False)
class Decomposition:
    """Result of :func:`decompose`.

    ``M_states[i]`` and ``Z_states[i-1]`` are engine-state representations
    (mesh nodes or paths); ``N_var[i-1]`` is ``E[dN_i^2 | F_{i-1}]`` on the
    same states.  ``I``, ``N``, ``M`` and ``Z`` are per-path and
    only present when an ensemble was supplied.
    """

    grid: GridScale
    M_states: list[np.ndarray]
    Z_states: np.ndarray
    M0: float
    M: MartingalePath | None = None
    I: MartingalePath | None = None
    N: MartingalePath | None = None
    Z: np.ndarray | None = None
    N_var: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def decompose(
    grid: GridScale,
    terminal: Callable[[np.ndarray], np.ndarray],
    engine,
    ensemble: PathEnsemble | None = None,
) -> Decomposition:
    """Decompose ``M_t = E[terminal(W_T) | F_t]`` backward along ``grid``.

    ``terminal`` maps an ``(n, d)`` array of terminal states to ``(n,)``.
    With a quadrature engine the mesh functions are evaluated on
    ``ensemble`` afterwards (if given) to produce per-path ``I`` and ``N``.
    """
    grid.require_solvable()
    n = grid.n_steps
    M_states: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    M_states[n] = engine.evaluate(terminal, n)
    Z = np.empty((n, engine.n_states, engine.d))
    mean_res = np.empty(n)
    cross_res = np.empty(n)
    N_var = np.empty((n, engine.n_states))
    nxt: Values = terminal
    for i in range(n, 0, -1):
        nu = grid.nu[i - 1]
        M_prev = engine.expect(i, nxt)
        Z[i - 1] = engine.cross(i, nxt) / nu
        # Residual moments of dN computed through the engine, not by algebra.
        W_prev = engine.state(i - 1)
        dW_mean = engine.expect(i, lambda w: w[:, 0]) - W_prev[:, 0] if engine.d == 1 else 0.0
        mean_res[i - 1] = np.max(np.abs(engine.expect(i, nxt) - M_prev - Z[i - 1, :, 0] * dW_mean))
        dWdW = np.stack([engine.cross(i, lambda w, j=j: w[:, j])[:, j] for j in range(engine.d)], axis=1)
        cross_res[i - 1] = np.max(np.abs(engine.cross(i, nxt) - Z[i - 1] * dWdW))
        sq = (lambda w, f=nxt: np.asarray(f(w)) ** 2) if callable(nxt) else nxt**2
        N_var[i - 1] = engine.expect(i, sq) - M_prev**2 - np.sum(Z[i - 1] ** 2, axis=1) * nu
        M_states[i - 1] = M_prev
        nxt = M_prev
    M0 = engine.at_origin(M_states[0])
    dec = Decomposition(
        grid, M_states, Z, M0, N_var=N_var,
        diagnostics={"mean_residual": mean_res, "cross_residual": cross_res, "engine": engine.name},
    )
    if ensemble is not None:
        _attach_paths(dec, terminal, engine, ensemble)
    return dec


def _attach_paths(dec: Decomposition, terminal, engine, ensemble: PathEnsemble) -> None:
    grid = dec.grid
    if isinstance(engine, QuadratureEngine):
        W = ensemble.W[:, :, 0]
        M = np.empty((ensemble.n_paths, grid.n_points))
        for i in range(grid.n_points - 1):
            M[:, i] = engine.interpolate(dec.M_states[i], W[:, i])
        M[:, -1] = terminal(ensemble.W[:, -1, :])
        Z = np.stack(
            [engine.interpolate(dec.Z_states[i, :, 0], W[:, i]) for i in range(grid.n_steps)], axis=1
        )[:, :, None]
    else:
        if engine.ensemble is not ensemble:
            raise ValueError("lsmc decomposition must use the engine's own ensemble")
        M = np.stack(dec.M_states, axis=1)
        Z = np.transpose(dec.Z_states, (1, 0, 2))
    M[:, 0] = dec.M0  # every path starts at W_0 = 0
    Mp = MartingalePath(grid, M - dec.M0)
    I = stochastic_integral(grid, Z, ensemble)
    dec.M, dec.I, dec.Z = Mp, I, Z
    dec.N = Mp - I


@dataclass(frozen=True)
class OrthogonalityRow:
    name: str
    estimate: float
    se: float
    profile: np.ndarray

    @property
    def z(self) -> float:
        return abs(self.estimate) / self.se if self.se > 0 else (0.0 if self.estimate == 0 else math.inf)


def orthogonality_check(
    dec: Decomposition,
    X_test: Mapping[str, np.ndarray | float | Callable[[PathEnsemble], np.ndarray]],
    ensemble: PathEnsemble,
    N: MartingalePath | None = None,
) -> list[OrthogonalityRow]:
    """Sample estimates of ``E[N_T I_T(X)]`` with standard errors.

    ``profile`` holds ``mean(N_t I_t(X))`` at every grid point.  ``N``
    overrides the decomposition's own orthogonal part (used for power checks).
    """
    N = dec.N if N is None else N
    if N is None:
        raise ValueError("decomposition has no per-path N; pass an ensemble to decompose")
    out = []
    for name, X in X_test.items():
        Xv = X(ensemble) if callable(X) else X
        I = stochastic_integral(dec.grid, Xv, ensemble).values
        prod = N.values * I
        T = prod[:, -1]
        se = float(T.std(ddof=1) / math.sqrt(len(T)))
        out.append(OrthogonalityRow(name, float(T.mean()), se, prod.mean(axis=0)))
    return out
