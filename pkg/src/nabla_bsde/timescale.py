"""Bounded time scales and deterministic nabla calculus.

A time scale here is a finite union of disjoint closed intervals and isolated
points inside ``[0, T]``.  Everything in this module is deterministic: jump
operators, graininess, the delta-partition used as computational grid, the
nabla measure/integral and the nabla exponential ``e_beta``.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TOL = 1e-12


class DomainError(ValueError):
    """A time was requested that does not belong to the time scale."""


class AdmissibilityError(ValueError):
    """``1 + beta * nu(s)`` is not strictly positive at some scattered point."""


class TimeScaleParseError(ValueError):
    pass


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


@dataclass(frozen=True)
class TimeScale:
    """Finite union of closed segments ``[lo, hi]`` (``lo == hi`` is a point).

    The smallest element is 0 and the largest is the horizon ``T``.
    """

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        segs = tuple((float(lo), float(hi)) for lo, hi in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("time scale must be nonempty")
        if abs(segs[0][0]) > TOL:
            raise ValueError(f"time scale must start at 0, got {segs[0][0]}")
        for lo, hi in segs:
            if hi < lo:
                raise ValueError(f"segment [{lo}, {hi}] has hi < lo")
        for (_, hi0), (lo1, _) in zip(segs, segs[1:]):
            if not lo1 > hi0 + TOL:
                raise ValueError(
                    f"segments must be sorted with positive gaps ({hi0} then {lo1})"
                )
        if segs[-1][1] <= 0.0:
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "_los", [lo for lo, _ in segs])

    # -- construction -------------------------------------------------------
    @classmethod
    def interval(cls, T: float) -> "TimeScale":
        return cls(((0.0, float(T)),))

    @classmethod
    def isolated(cls, points: Sequence[float]) -> "TimeScale":
        return cls(tuple((float(p), float(p)) for p in points))

    @classmethod
    def parse(cls, literal: str) -> "TimeScale":
        """Parse ``"0..1, 3, 4, 5"`` style literals."""
        items = [item.strip() for item in literal.split(",")]
        if not items or any(not item for item in items):
            raise TimeScaleParseError(f"empty item in time scale literal {literal!r}")
        segs = []
        for item in items:
            try:
                if ".." in item:
                    lo_s, hi_s = item.split("..", 1)
                    segs.append((float(lo_s), float(hi_s)))
                else:
                    segs.append((float(item), float(item)))
            except ValueError as exc:
                raise TimeScaleParseError(f"bad time scale item {item!r}") from exc
        for (lo0, hi0), (lo1, _) in zip(segs, segs[1:]):
            if lo1 <= hi0:
                raise TimeScaleParseError(
                    f"invalid time scale {literal!r}: items must be sorted and disjoint "
                    f"({lo1:g} does not come after {hi0:g})"
                )
        try:
            return cls(tuple(segs))
        except ValueError as exc:
            raise TimeScaleParseError(f"invalid time scale {literal!r}: {exc}") from exc

    def to_literal(self) -> str:
        return ", ".join(
            _fmt(lo) if lo == hi else f"{_fmt(lo)}..{_fmt(hi)}" for lo, hi in self.segments
        )

    def __str__(self) -> str:
        return self.to_literal()

    # -- basic queries ------------------------------------------------------
    @property
    def horizon(self) -> float:
        return self.segments[-1][1]

    @property
    def gaps(self) -> list[tuple[float, float]]:
        """Open intervals ``(a_n, b_n)`` of ``[0, T]`` not in the time scale."""
        return [(hi0, lo1) for (_, hi0), (lo1, _) in zip(self.segments, self.segments[1:])]

    @property
    def endpoints(self) -> list[float]:
        out: list[float] = []
        for lo, hi in self.segments:
            out.append(lo)
            if hi != lo:
                out.append(hi)
        return out

    @property
    def min_gap(self) -> float:
        gaps = [b - a for a, b in self.gaps]
        return min(gaps) if gaps else math.inf

    def _locate(self, t: float) -> int:
        j = bisect.bisect_right(self._los, t + TOL) - 1
        if j >= 0:
            lo, hi = self.segments[j]
            if lo - TOL <= t <= hi + TOL:
                return j
        raise DomainError(f"t={t} is not in the time scale {self}")

    def contains(self, t: float) -> bool:
        try:
            self._locate(t)
        except DomainError:
            return False
        return True

    def sigma(self, t: float) -> float:
        """Forward jump ``inf{s > t}``; ``sigma(T) = T``."""
        j = self._locate(t)
        lo, hi = self.segments[j]
        if t < hi - TOL:
            return float(t)
        if j == len(self.segments) - 1:
            return self.horizon
        return self.segments[j + 1][0]

    def rho(self, t: float) -> float:
        """Backward jump ``sup{s < t}``; ``rho(0) = 0``."""
        j = self._locate(t)
        lo, hi = self.segments[j]
        if t > lo + TOL:
            return float(t)
        if j == 0:
            return 0.0
        return self.segments[j - 1][1]

    def mu(self, t: float) -> float:
        return self.sigma(t) - t

    def nu(self, t: float) -> float:
        j = self._locate(t)
        lo = self.segments[j][0]
        if j == 0 or t > lo + TOL:
            return 0.0
        return lo - self.segments[j - 1][1]

    def is_left_scattered(self, t: float) -> bool:
        return self.nu(t) > 0.0

    def is_right_scattered(self, t: float) -> bool:
        return self.mu(t) > 0.0

    # -- nabla measure ------------------------------------------------------
    def _dense_length(self, a: float, b: float) -> float:
        total = 0.0
        for lo, hi in self.segments:
            if hi > lo:
                total += max(0.0, min(b, hi) - max(a, lo))
        return total

    def _atoms(self, a: float, b: float) -> list[tuple[float, float]]:
        """Left-scattered points ``s`` in ``(a, b]`` with their ``nu(s)``."""
        out = []
        for (_, hi0), (lo1, _) in zip(self.segments, self.segments[1:]):
            if a + TOL < lo1 <= b + TOL:
                out.append((lo1, lo1 - hi0))
        return out

    def nabla_measure(self, a: float, b: float) -> float:
        """Nabla measure of ``(a, b]``: Lebesgue on the dense part plus atoms ``nu``."""
        self._locate(a)
        self._locate(b)
        if b < a - TOL:
            raise ValueError(f"need a <= b, got ({a}, {b}]")
        return self._dense_length(a, b) + sum(w for _, w in self._atoms(a, b))

    def exp_beta(self, beta: float, t: float, t0: float = 0.0) -> float:
        """Nabla exponential ``e_beta(t, t0)``, solution of ``y^nabla = beta y(t-)``, ``y(t0) = 1``."""
        self._locate(t)
        self._locate(t0)
        if t < t0 - TOL:
            raise ValueError(f"exp_beta needs t0 <= t, got t0={t0}, t={t}")
        value = math.exp(beta * self._dense_length(t0, t))
        for s, w in self._atoms(t0, t):
            factor = 1.0 + beta * w
            if factor <= 0.0:
                raise AdmissibilityError(
                    f"1 + beta*nu = {factor} <= 0 at s={s} (beta={beta}, nu={w})"
                )
            value *= factor
        return value

    def partition(self, delta: float) -> "GridScale":
        return partition(self, delta)


@dataclass(frozen=True, eq=False)
class GridScale:
    """Finite partition ``0 = t_0 < ... < t_n = T`` of a time scale.

    Step ``i`` (1-based in the text, 0-based in arrays) is ``(t_{i-1}, t_i]``
    with nabla measure ``nu[i-1] = t_i - t_{i-1}``.
    """

    timescale: TimeScale
    delta: float
    points: np.ndarray
    nu: np.ndarray = field(init=False)
    dense_refinement: np.ndarray = field(init=False)
    left_scattered: np.ndarray = field(init=False)
    right_scattered: np.ndarray = field(init=False)
    too_coarse: bool = field(init=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        nu = np.diff(pts)
        if np.any(nu <= 0):
            raise ValueError("grid points must be strictly increasing")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        ts = self.timescale
        los = np.array([lo for lo, _ in ts.segments])
        his = np.array([hi for _, hi in ts.segments])
        seg_idx = np.searchsorted(los, pts + TOL, side="right") - 1
        if np.any(seg_idx < 0) or np.any(pts > his[seg_idx] + TOL):
            raise DomainError("grid points must lie in the time scale")
        dense_seg = his > los
        dense = (seg_idx[1:] == seg_idx[:-1]) & dense_seg[seg_idx[1:]]
        dense.setflags(write=False)
        object.__setattr__(self, "dense_refinement", dense)
        last = len(ts.segments) - 1
        left = (seg_idx > 0) & (np.abs(pts - los[seg_idx]) <= TOL)
        right = (seg_idx < last) & (np.abs(pts - his[seg_idx]) <= TOL)
        object.__setattr__(self, "left_scattered", left)
        object.__setattr__(self, "right_scattered", right)
        idx = np.clip(np.searchsorted(pts, ts.endpoints), 1, len(pts) - 1)
        ends = np.asarray(ts.endpoints)
        gap = np.minimum(np.abs(pts[idx] - ends), np.abs(pts[idx - 1] - ends))
        missing = ends[gap > TOL]
        object.__setattr__(self, "too_coarse", bool(missing.size))

    @property
    def n_steps(self) -> int:
        return len(self.nu)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.points - t)))
        if abs(self.points[i] - t) > TOL * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a grid point")
        return i

    def as_timescale(self) -> TimeScale:
        """The grid itself viewed as an isolated time scale."""
        return TimeScale.isolated(self.points.tolist())

    def exp_beta(self, beta: float) -> np.ndarray:
        """``e_beta(t_i, 0)`` of the parent time scale at every grid point."""
        factors = np.exp(beta * self.nu)
        for i in np.flatnonzero(~self.dense_refinement):
            factors[i] = self.timescale.exp_beta(
                beta, float(self.points[i + 1]), float(self.points[i])
            )
        return np.concatenate(([1.0], np.cumprod(factors)))

    def require_solvable(self) -> None:
        if self.too_coarse:
            raise ValueError(
                f"grid with delta={self.delta} skips segment endpoints of {self.timescale}; "
                f"choose delta below the smallest gap ({self.timescale.min_gap})"
            )


def partition(ts: TimeScale, delta: float) -> GridScale:
    """Inductive delta-partition.

    ``t_i = sup B_i`` when ``B_i = (t_{i-1}, t_{i-1} + delta] ∩ T`` is nonempty,
    otherwise ``t_i = sigma(t_{i-1})``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    T = ts.horizon
    pts = [0.0]
    t = 0.0
    while t < T - TOL:
        j = ts._locate(t)
        lo, hi = ts.segments[j]
        if t < hi - TOL and t + delta < hi - TOL:
            # Inside a dense segment: steps of exactly delta until the reach covers hi.
            k = int(math.floor((hi - TOL - t) / delta))
            while k > 0 and t + k * delta >= hi - TOL:
                k -= 1
            run = t + delta * np.arange(1, k + 1)
            pts.extend(run.tolist())
            t = pts[-1]
            continue
        reach = t + delta
        m = bisect.bisect_right(ts._los, reach + TOL) - 1
        lo_m, hi_m = ts.segments[m]
        cand = hi_m if reach >= hi_m - TOL else reach
        t = cand if cand > t + TOL else ts.sigma(t)
        pts.append(t)
    pts[-1] = T
    return GridScale(ts, float(delta), np.array(pts))


def nabla_integral(grid: GridScale, f: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> float | np.ndarray:
    """Right-endpoint nabla sum ``sum_i f(t_i) * nu_i`` over the grid.

    ``f`` is a callable of time or an array whose axis 0 (or last axis when it
    has length ``n_points``) runs over the grid points.  Exact on isolated
    steps; a Riemann approximation on dense refinements.
    """
    if callable(f):
        vals = np.asarray(f(grid.points[1:]), dtype=float)
        return float(np.dot(vals, grid.nu)) if vals.ndim == 1 else vals @ grid.nu
    vals = np.asarray(f, dtype=float)
    if vals.shape[-1] == grid.n_points:
        return vals[..., 1:] @ grid.nu
    if vals.shape[0] == grid.n_points:
        return np.tensordot(grid.nu, vals[1:], axes=(0, 0))
    raise ValueError(f"values of shape {vals.shape} do not match {grid.n_points} grid points")
