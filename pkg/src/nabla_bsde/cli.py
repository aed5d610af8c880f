"""Scenario-driven command line runner.

Scenario files are INI style with one section per concern::

    [timescale]
    literal = 0..1, 3, 4, 5

    [driver]
    kind = linear
    a = -1
    b = 0
    c = 0

    [terminal]
    kind = constant
    c = 1

    [engine]
    engine = quadrature

    [run]
    delta = 0.0625

Unknown sections or keys are errors.  Exit status: 0 success, 2 validation
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bsde import (
    Driver,
    NumericalError,
    TerminalCondition,
    default_beta,
    picard_solve,
    solve_backward,
)
from .condexp import EngineConfig
from .decomposition import decompose, orthogonality_check
from .linear import LinearData, comparison_check, gaussian_linear_y0, linear_solve_closed_form
from .stochastic import PathEnsemble, sample_bm
from .timescale import GridScale, TimeScale, partition

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

SOLUTION_COLUMNS = ["t", "nu", "Y_mean", "Y_std", "Z_mean", "Z_std", "N_var"]
DECOMPOSE_COLUMNS = ["t", "Z_mean", "Z_std", "N_increment_var", "orth_1", "orth_W", "orth_W2"]
LINEAR_COLUMNS = ["t", "Y_closed_form", "Y_backward", "abs_diff"]
COMPARE_COLUMNS = ["t", "min_diff", "pass"]
SWEEP_COLUMNS = ["delta", "Y0", "abs_err", "ratio"]
SAMPLE_COLUMNS = ["path", "t", "dim", "W"]

DRIVER_KINDS = ("zero", "constant", "linear", "sin", "abs_z", "sin_abs_z", "tanh", "relu", "cos_z")
TERMINAL_KINDS = ("identity", "square", "call", "constant")


class ScenarioError(ValueError):
    pass


# -- scenario ---------------------------------------------------------------

@dataclass(frozen=True)
class DriverSpec:
    kind: str = "zero"
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    L: float = 0.0

    _KEYS = {
        "zero": (),
        "constant": ("c",),
        "linear": ("a", "b", "c"),
    }

    def keys(self) -> tuple[str, ...]:
        return self._KEYS.get(self.kind, ("L", "c"))

    def build(self) -> Driver:
        if self.kind == "zero":
            return Driver.zero()
        if self.kind == "constant":
            return Driver.constant(self.c)
        if self.kind == "linear":
            return Driver.linear(self.a, self.b, self.c)
        return Driver.builtin(self.kind, self.L, self.c)


@dataclass(frozen=True)
class TerminalSpec:
    kind: str = "identity"
    K: float = 0.0
    c: float = 0.0
    shift: float = 0.0

    _KEYS = {"identity": (), "square": (), "call": ("K",), "constant": ("c",)}

    def keys(self) -> tuple[str, ...]:
        return self._KEYS[self.kind] + ("shift",)

    def build(self) -> TerminalCondition:
        base = {
            "identity": TerminalCondition.identity,
            "square": TerminalCondition.square,
            "call": lambda: TerminalCondition.call(self.K),
            "constant": lambda: TerminalCondition.constant(self.c),
        }[self.kind]()
        return base.shifted(self.shift) if self.shift else base


@dataclass(frozen=True)
class RunSpec:
    delta: float = 1.0 / 64
    beta: float | None = None
    n_paths: int = 10000
    seed: int = 0
    out: str = "out"
    dims: int = 1
    solver: str = "backward"
    max_iters: int = 50
    tol: float = 1e-10
    gamma: str = "exponential"
    deltas: tuple[float, ...] = ()


@dataclass(frozen=True)
class Scenario:
    timescale: str = "0..1"
    driver: DriverSpec = field(default_factory=DriverSpec)
    terminal: TerminalSpec = field(default_factory=TerminalSpec)
    engine: EngineConfig = field(default_factory=EngineConfig)
    run: RunSpec = field(default_factory=RunSpec)
    driver2: DriverSpec | None = None
    terminal2: TerminalSpec | None = None

    # -- text form --

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=(";",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None
        allowed = {"timescale", "driver", "terminal", "engine", "run", "driver2", "terminal2"}
        unknown = set(cp.sections()) - allowed
        if unknown:
            raise ScenarioError(f"unknown section(s): {sorted(unknown)}")
        if not cp.has_section("timescale"):
            raise ScenarioError("missing [timescale] section")
        ts = dict(cp["timescale"])
        _strict(ts, ("literal",), "timescale")
        if "literal" not in ts:
            raise ScenarioError("[timescale] needs literal")
        literal = TimeScale.parse(ts["literal"]).to_literal()
        kw = {"timescale": literal}
        for name, kind_cls in (("driver", DriverSpec), ("terminal", TerminalSpec),
                               ("driver2", DriverSpec), ("terminal2", TerminalSpec)):
            if cp.has_section(name):
                kw[name] = _parse_kind(kind_cls, dict(cp[name]), name)
        if cp.has_section("engine"):
            kw["engine"] = _parse_fields(EngineConfig, dict(cp["engine"]), "engine")
            if kw["engine"].engine not in ("quadrature", "lsmc"):
                raise ScenarioError(f"unknown engine {kw['engine'].engine!r}")
        if cp.has_section("run"):
            kw["run"] = _parse_fields(RunSpec, dict(cp["run"]), "run")
        sc = cls(**kw)
        sc.validate()
        return sc

    def to_text(self) -> str:
        lines = ["[timescale]", f"literal = {self.timescale}", ""]
        for name in ("driver", "terminal", "driver2", "terminal2"):
            spec = getattr(self, name)
            if spec is None:
                continue
            lines += [f"[{name}]", f"kind = {spec.kind}"]
            lines += [f"{k} = {_fmt(getattr(spec, k))}" for k in spec.keys()]
            lines.append("")
        for name in ("engine", "run"):
            obj = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(obj):
                v = getattr(obj, f.name)
                if v is None or (f.name == "deltas" and not v):
                    continue
                lines.append(f"{f.name} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)

    def validate(self) -> None:
        if not self.run.delta > 0:
            raise ScenarioError("delta must be positive")
        if self.run.n_paths < 1 or self.run.dims < 1:
            raise ScenarioError("n_paths and dims must be >= 1")
        if self.run.solver not in ("backward", "picard"):
            raise ScenarioError(f"unknown solver {self.run.solver!r}")
        if not 0 <= self.run.seed < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")
        if self.run.beta is not None and self.run.beta <= 0:
            raise ScenarioError("beta must be positive")
        if self.engine.engine == "quadrature" and self.run.dims != 1:
            raise ScenarioError("the quadrature engine is one-dimensional; use engine = lsmc for dims > 1")

    def grid(self, delta: float | None = None) -> GridScale:
        return partition(TimeScale.parse(self.timescale), self.run.delta if delta is None else delta)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _strict(section: dict, allowed: Sequence[str], name: str) -> None:
    bad = set(section) - set(allowed)
    if bad:
        raise ScenarioError(f"unknown key(s) in [{name}]: {sorted(bad)}")


def _convert(raw: str, current, name: str):
    try:
        if name == "deltas":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if name == "seed":
            return int(raw, 0)
        if name == "beta":
            return None if raw.strip().lower() in ("", "none", "default") else float(raw)
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ScenarioError(f"bad value for {name}: {raw!r}") from None


def _parse_fields(cls, section: dict, name: str):
    default = cls()
    names = [f.name for f in fields(cls)]
    _strict(section, names, name)
    return replace(default, **{k: _convert(v, getattr(default, k), k) for k, v in section.items()})


def _parse_kind(cls, section: dict, name: str):
    kind = section.pop("kind", None)
    if kind is None:
        raise ScenarioError(f"[{name}] needs kind")
    kinds = DRIVER_KINDS if cls is DriverSpec else TERMINAL_KINDS
    if kind not in kinds:
        raise ScenarioError(f"unknown {name} kind {kind!r}; choose from {list(kinds)}")
    spec = cls(kind=kind)
    _strict(section, spec.keys(), name)
    if cls is DriverSpec and kind not in DriverSpec._KEYS and "L" not in section:
        raise ScenarioError(f"[{name}] kind {kind} needs L")
    return replace(spec, **{k: _convert(v, 0.0, k) for k, v in section.items()})


# -- output -----------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


# -- commands ---------------------------------------------------------------

def _ensemble(sc: Scenario, grid: GridScale, threads: int) -> PathEnsemble:
    return sample_bm(grid, sc.run.dims, sc.run.n_paths, sc.run.seed, workers=threads)


def _engine(sc: Scenario, grid: GridScale, threads: int, need_paths: bool = False):
    ens = _ensemble(sc, grid, threads) if (sc.engine.engine == "lsmc" or need_paths) else None
    return sc.engine.build(grid, ens), ens


def cmd_solve(sc: Scenario, out: Path, threads: int) -> int:
    grid = sc.grid()
    engine, _ = _engine(sc, grid, threads)
    driver, terminal = sc.driver.build(), sc.terminal.build()
    if sc.run.solver == "picard":
        beta = sc.run.beta if sc.run.beta is not None else default_beta(driver.L)
        sol = picard_solve(grid, driver, terminal, engine, beta, sc.run.max_iters, sc.run.tol)
    else:
        sol = solve_backward(grid, driver, terminal, engine)
    rows = [[r[c] for c in SOLUTION_COLUMNS] for r in sol.table()]
    write_csv(out / "solution.csv", SOLUTION_COLUMNS, rows)
    diag = dict(sol.diagnostics)
    diag.setdefault("beta", sc.run.beta if sc.run.beta is not None else default_beta(driver.L))
    diag.update(y0=sol.y0, n_steps=grid.n_steps, L=driver.L)
    write_json(out / "diagnostics.json", diag)
    return EXIT_OK


def cmd_decompose(sc: Scenario, out: Path, threads: int) -> int:
    grid = sc.grid()
    engine, ens = _engine(sc, grid, threads, need_paths=True)
    if ens.d != 1:
        raise ScenarioError("decompose reports orthogonality against one-dimensional integrands")
    terminal = sc.terminal.build()
    dec = decompose(grid, terminal, engine, ens)
    W = ens.W[:, :-1, 0]
    orth = orthogonality_check(dec, {"1": 1.0, "W": W, "W2": W**2}, ens)
    rows = []
    for i, t in enumerate(grid.points):
        if i == 0:
            z_mean = z_std = nvar = 0.0
        else:
            z = dec.Z_states[i - 1, :, 0]
            z_mean, z_std = engine.mean(i - 1, z), engine.std(i - 1, z)
            nvar = engine.mean(i - 1, dec.N_var[i - 1])
        rows.append([t, z_mean, z_std, nvar] + [r.profile[i] for r in orth])
    write_csv(out / "decompose.csv", DECOMPOSE_COLUMNS, rows)
    write_json(out / "diagnostics.json", {
        "M0": dec.M0,
        "max_mean_residual": float(np.max(dec.diagnostics["mean_residual"])),
        "max_cross_residual": float(np.max(dec.diagnostics["cross_residual"])),
        "orthogonality": [{"name": r.name, "estimate": r.estimate, "se": r.se, "z": r.z} for r in orth],
    })
    return EXIT_OK


def cmd_linear(sc: Scenario, out: Path, threads: int) -> int:
    if sc.driver.kind != "linear":
        raise ScenarioError("the linear subcommand needs [driver] kind = linear")
    if sc.run.dims != 1:
        raise ScenarioError("the linear closed form is one-dimensional")
    grid = sc.grid()
    engine, ens = _engine(sc, grid, threads, need_paths=True)
    d = sc.driver
    data = LinearData(d.a, d.b, d.c, sc.terminal.build(), sc.run.gamma)
    closed = linear_solve_closed_form(grid, data, ens)
    sol = solve_backward(grid, data.driver(), data.xi, engine)
    back = [engine.mean(i, sol.Y[i]) for i in range(grid.n_points)]
    rows = [[t, y, yb, abs(y - yb)] for t, y, yb in zip(grid.points, closed.mean, back)]
    write_csv(out / "linear.csv", LINEAR_COLUMNS, rows)
    write_json(out / "diagnostics.json", {
        "gamma": sc.run.gamma, "closed_form_se": closed.se.tolist(),
        "nonpositive_paths": int(np.sum(~closed.positive)), "warnings": list(closed.warnings),
    })
    return EXIT_OK


def cmd_compare(sc: Scenario, out: Path, threads: int) -> int:
    if sc.driver2 is None and sc.terminal2 is None:
        raise ScenarioError("compare needs a [driver2] and/or [terminal2] section")
    grid = sc.grid()
    engine, _ = _engine(sc, grid, threads)
    pair1 = (sc.driver.build(), sc.terminal.build())
    pair2 = ((sc.driver2 or sc.driver).build(), (sc.terminal2 or sc.terminal).build())
    tol = 1e-8 if sc.engine.engine == "quadrature" else 3.0 / math.sqrt(sc.run.n_paths)
    rep = comparison_check(grid, pair1, pair2, engine, tol=tol)
    write_csv(out / "compare.csv", COMPARE_COLUMNS, rep.rows())
    write_json(out / "diagnostics.json", {"status": rep.status, "reason": rep.reason, "tol": tol})
    if rep.status == "refused":
        print(f"comparison refused: {rep.reason}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def _closed_form_reference(sc: Scenario) -> float | None:
    ts = TimeScale.parse(sc.timescale)
    if len(ts.segments) != 1 or sc.driver.kind not in ("linear", "zero", "constant"):
        return None
    if sc.terminal.kind not in ("square", "identity") or sc.terminal.shift:
        return None
    d = sc.driver
    a, b, c = (d.a, d.b, d.c) if d.kind == "linear" else (0.0, 0.0, d.c)
    return gaussian_linear_y0(a, b, c, ts.horizon, sc.terminal.kind)


def sweep_delta(sc: Scenario, deltas: Sequence[float], threads: int = 1) -> list[tuple[float, float, float, float]]:
    """Rows ``(delta, Y0, |Y0 - reference|, error ratio)``.

    The reference is the Gaussian closed form when available, else the
    finest-delta value.  The ratio compares each error with the previous row.
    """
    deltas = [float(x) for x in deltas]
    if len(deltas) < 3:
        raise ScenarioError("sweep needs at least 3 deltas")
    if any(b >= a for a, b in zip(deltas, deltas[1:])) or deltas[-1] <= 0:
        raise ScenarioError("sweep deltas must be positive and strictly decreasing")
    y0s = []
    for dl in deltas:
        grid = sc.grid(dl)
        engine, _ = _engine(sc, grid, threads)
        y0s.append(solve_backward(grid, sc.driver.build(), sc.terminal.build(), engine).y0)
    ref = _closed_form_reference(sc)
    ref = y0s[-1] if ref is None else ref
    errs = [abs(y - ref) for y in y0s]
    rows = []
    for k, (dl, y, e) in enumerate(zip(deltas, y0s, errs)):
        ratio = errs[k - 1] / e if k and e > 0 else math.nan
        rows.append((dl, y, e, ratio))
    return rows


def cmd_sweep(sc: Scenario, out: Path, threads: int) -> int:
    rows = sweep_delta(sc, sc.run.deltas, threads)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return EXIT_OK


def cmd_sample(sc: Scenario, out: Path, threads: int) -> int:
    ens = _ensemble(sc, sc.grid(), threads)
    write_csv(out / "sample.csv", SAMPLE_COLUMNS, ens.to_csv_rows())
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "decompose": cmd_decompose,
    "linear": cmd_linear,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario file")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="master seed, decimal or 0x hex")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--delta", type=float, help="partition mesh size")
    common.add_argument("--engine", choices=["quadrature", "lsmc"])
    common.add_argument("--threads", type=int, default=1, help="sampling worker threads")
    common.add_argument("--deltas", help="comma separated mesh sizes for sweep")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="nabla-bsde", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__name__.replace("cmd_", ""))
    return parser


def _apply_overrides(sc: Scenario, args) -> Scenario:
    run, engine = sc.run, sc.engine
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.paths is not None:
        run = replace(run, n_paths=args.paths)
    if args.delta is not None:
        run = replace(run, delta=args.delta)
    if args.out is not None:
        run = replace(run, out=args.out)
    if args.deltas is not None:
        run = replace(run, deltas=_convert(args.deltas, (), "deltas"))
    if args.engine is not None:
        engine = replace(engine, engine=args.engine)
    sc = replace(sc, run=run, engine=engine)
    sc.validate()
    return sc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = _apply_overrides(Scenario.parse(Path(args.scenario).read_text()), args)
        if args.threads < 1:
            raise ScenarioError("--threads must be >= 1")
        return COMMANDS[args.command](sc, Path(sc.run.out), args.threads)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
