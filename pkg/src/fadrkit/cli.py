"""Command-line driver.

    fadrkit {brunner,dispersion,channel,fadr1d} --config run.yaml --out results/ [--check]

Every run writes its tables as CSV (and optionally JSON) plus a
``manifest.json`` holding the echoed configuration, package versions, wall
time, the list of files written and a small ``results`` summary. Tables are
deterministic: the same configuration reproduces them byte for byte.

Exit status: 0 on success, 1 on a numerical failure (a ``failure.json`` is
written next to the manifest), 2 on an invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .caputo import AdaptiveConfig
from .channel import (
    ChannelBCs,
    ChannelFailure,
    ChannelParams,
    Schedule,
    WALL_FORMULAS,
    channel_grid,
    init_state,
    iterate_channel,
    write_snapshot,
)
from .dispersion import CSV_COLUMNS, RootFindingError, SpectralParams, contour_scan, write_csv
from .linsolve import ConvergenceError
from .theta_fadr import (
    BRUNNER_KINDS,
    FADRProblem,
    SolutionBlowup,
    ThetaScheme,
    integrate,
    run_brunner_case,
    strip_grid,
)

logger = logging.getLogger(__name__)

MODES = ("brunner", "dispersion", "channel", "fadr1d")
EMIT_FORMATS = ("csv", "json")
EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def fit_convergence_slope(errors: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``.

    Rows with a non-positive error or step are dropped with a warning; fewer
    than three usable rows is an error.
    """
    rows = [(float(h), float(e)) for h, e in errors]
    good = [(h, e) for h, e in rows if h > 0 and e > 0 and math.isfinite(e)]
    if len(good) < len(rows):
        warnings.warn(f"dropped {len(rows) - len(good)} non-positive ladder entries", RuntimeWarning, stacklevel=2)
    if len(good) < 3:
        raise ValueError(f"need at least 3 positive ladder points, got {len(good)}")
    x = np.log([h for h, _ in good])
    y = np.log([e for _, e in good])
    return float(np.polyfit(x, y, 1)[0])


# {{{ configuration

class _Section:
    """Typed access to one mapping of the config tree, tracking unread keys."""

    def __init__(self, data: Any, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def raw(self, key: str, default: Any) -> Any:
        self.seen.add(key)
        return self.data.get(key, default)

    def number(self, key: str, default: Any = None, check: Optional[Callable[[float], bool]] = None,
               rule: str = "", integer: bool = False, optional: bool = False) -> Any:
        v = self.raw(key, default)
        if v is None:
            if optional:
                return None
            raise ConfigError(self._where(key), "required")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self._where(key), f"expected a number, got {v!r}")
        if integer:
            if float(v) != int(v):
                raise ConfigError(self._where(key), f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if check is not None and not check(v):
            raise ConfigError(self._where(key), f"{rule}, got {v!r}")
        return v

    def choice(self, key: str, default: Any, options: Sequence[str]) -> str:
        v = self.raw(key, default)
        if v not in options:
            raise ConfigError(self._where(key), f"must be one of {list(options)}, got {v!r}")
        return v

    def numbers(self, key: str, default: Any, length: Optional[int] = None) -> list[float]:
        v = self.raw(key, default)
        if not isinstance(v, list) or not v:
            raise ConfigError(self._where(key), f"expected a non-empty list, got {v!r}")
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise ConfigError(f"{self._where(key)}[{i}]", f"expected a number, got {x!r}")
        if length is not None and len(v) != length:
            raise ConfigError(self._where(key), f"expected {length} entries, got {len(v)}")
        return [float(x) for x in v]

    def sub(self, key: str) -> "_Section":
        return _Section(self.raw(key, None), self._where(key))

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.seen)
        if extra:
            raise ConfigError(self._where(extra[0]), "unknown key")


def _unit(v: float) -> bool:
    return 0.0 <= v <= 1.0


def _alpha(v: float) -> bool:
    return 0.0 < v <= 1.0


def _positive(v: float) -> bool:
    return v > 0


@dataclass
class RunConfig:
    mode: str
    out: Path
    seed: Optional[int] = None
    emit: tuple[str, ...] = ("csv",)
    settings: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)


def _brunner_settings(s: _Section) -> dict:
    kinds = s.raw("kinds", list(BRUNNER_KINDS))
    if not isinstance(kinds, list) or not kinds or any(k not in BRUNNER_KINDS for k in kinds):
        raise ConfigError(s._where("kinds"), f"must be a non-empty list drawn from {list(BRUNNER_KINDS)}, got {kinds!r}")
    alphas = s.numbers("alphas", [1.0])
    for i, a in enumerate(alphas):
        if not _alpha(a):
            raise ConfigError(f"{s._where('alphas')}[{i}]", f"must lie in (0, 1], got {a!r}")
    ladder = s.numbers("ladder", [4, 9], length=2)
    if not (ladder[0] == int(ladder[0]) and ladder[1] == int(ladder[1]) and 0 <= ladder[0] and ladder[1] - ladder[0] >= 2):
        raise ConfigError(s._where("ladder"), f"needs integers 0 <= k_min <= k_max - 2, got {ladder!r}")
    out = {
        "kinds": list(kinds),
        "alphas": alphas,
        "theta": s.number("theta", 1.0, _unit, "must lie in [0, 1]"),
        "n_points": s.number("n_points", 51, lambda v: v >= 5, "must be at least 5", integer=True),
        "T": s.number("T", 0.35, _positive, "must be positive"),
        "ladder": (int(ladder[0]), int(ladder[1])),
    }
    s.finish()
    return out


def _range(s: _Section, key: str, default) -> tuple[float, float, int]:
    lo, hi, n = s.numbers(key, default, length=3)
    if n != int(n) or n < 0:
        raise ConfigError(s._where(key), f"point count must be a non-negative integer, got {n!r}")
    if hi < lo:
        raise ConfigError(s._where(key), f"upper end below lower end: {lo!r} > {hi!r}")
    return lo, hi, int(n)


def _dispersion_settings(s: _Section) -> dict:
    out = {
        "alpha": s.number("alpha", None, _alpha, "must lie in (0, 1]"),
        "theta": s.number("theta", None, _unit, "must lie in [0, 1]"),
        "q": s.choice("q", 0.5, (0.0, 0.5)),
        "n_poly": s.number("n_poly", 75, lambda v: v >= 2, "must be at least 2", integer=True),
        "kh": _range(s, "kh", [0.0, math.pi, 64]),
        "Nc": _range(s, "Nc", [0.0, 1.0, 41]),
    }
    cells = s.raw("cells", None)
    if not isinstance(cells, list) or not cells:
        raise ConfigError(s._where("cells"), "expected a non-empty list of {Pe, Da} mappings")
    out["cells"] = []
    for i, c in enumerate(cells):
        cs = _Section(c, f"{s._where('cells')}[{i}]")
        out["cells"].append((
            cs.number("Pe", None, lambda v: v >= 0, "must be non-negative"),
            cs.number("Da", 0.0),
        ))
        cs.finish()
    s.finish()
    return out


def _channel_settings(s: _Section) -> dict:
    g = s.sub("grid")
    sch = s.sub("schedule")
    out = {
        "Re": s.number("Re", 70.0, _positive, "must be positive"),
        "We": s.number("We", 10.0, _positive, "must be positive"),
        "nu": s.number("nu", 0.3, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        "mu": s.number("mu", 1e-2, lambda v: v >= 0, "must be non-negative"),
        "alpha": s.number("alpha", 0.5, _alpha, "must lie in (0, 1]"),
        "theta": s.number("theta", 1.0, _unit, "must lie in [0, 1]"),
        "perturbation": s.number("perturbation", 0.0, lambda v: v >= 0, "must be non-negative"),
        "wall_formula": s.choice("wall_formula", "wood", WALL_FORMULAS),
        "nx": g.number("nx", 76, lambda v: v >= 5, "must be at least 5", integer=True),
        "ny": g.number("ny", 51, lambda v: v >= 5, "must be at least 5", integer=True),
        "length": g.number("length", 5.0, _positive, "must be positive"),
        "n_steps": sch.number("n_steps", None, lambda v: v >= 1, "must be at least 1", integer=True, optional=True),
        "t_final": sch.number("t_final", None, _positive, "must be positive", optional=True),
        "dt0": sch.number("dt0", 1e-3, _positive, "must be positive"),
        "adaptive": bool(sch.raw("adaptive", True)),
        "delta": sch.number("delta", 1e-3, _positive, "must be positive"),
        "dt_min": sch.number("dt_min", 1e-3, _positive, "must be positive"),
        "dt_max": sch.number("dt_max", 1.6e-2, _positive, "must be positive"),
        "snapshot_every": sch.number("snapshot_every", 0, lambda v: v >= 0, "must be non-negative", integer=True),
    }
    if out["n_steps"] is None and out["t_final"] is None:
        raise ConfigError(sch._where("n_steps"), "either n_steps or t_final is required")
    if out["dt_min"] > out["dt_max"]:
        raise ConfigError(sch._where("dt_min"), f"must not exceed dt_max ({out['dt_max']!r}), got {out['dt_min']!r}")
    g.finish()
    sch.finish()
    s.finish()
    return out


def _fadr1d_settings(s: _Section) -> dict:
    init = s.sub("initial")
    out = {
        "n_points": s.number("n_points", 101, lambda v: v >= 5, "must be at least 5", integer=True),
        "x0": s.number("x0", -1.0),
        "x1": s.number("x1", 1.0),
        "alpha": s.number("alpha", 0.9, _alpha, "must lie in (0, 1]"),
        "theta": s.number("theta", 0.5, _unit, "must lie in [0, 1]"),
        "K1": s.number("K1", 0.0),
        "K2": s.number("K2", 0.0, lambda v: v >= 0, "must be non-negative"),
        "lam": s.number("lam", 0.0),
        "dt": s.number("dt", 1e-2, _positive, "must be positive"),
        "t_final": s.number("t_final", 10.0, _positive, "must be positive"),
        "shape": init.choice("shape", "gaussian", ("gaussian", "sine")),
        "width": init.number("width", 0.1, _positive, "must be positive"),
        "mode": init.number("mode", 1, lambda v: v >= 1, "must be at least 1", integer=True),
    }
    if out["x1"] <= out["x0"]:
        raise ConfigError(s._where("x1"), f"must exceed x0 ({out['x0']!r}), got {out['x1']!r}")
    init.finish()
    s.finish()
    return out


_READERS = {
    "brunner": _brunner_settings,
    "dispersion": _dispersion_settings,
    "channel": _channel_settings,
    "fadr1d": _fadr1d_settings,
}


def load_config(mode: str, data: Any, out: Path) -> RunConfig:
    """Validate a parsed config tree for ``mode``; raises :class:`ConfigError`."""
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {list(MODES)}, got {mode!r}")
    top = _Section(data, "")
    declared = top.raw("mode", mode)
    if declared != mode:
        raise ConfigError("mode", f"config is for {declared!r} but the {mode!r} subcommand was used")
    seed = top.number("seed", None, lambda v: v >= 0, "must be non-negative", integer=True, optional=True)
    emit = top.raw("emit", ["csv"])
    if not isinstance(emit, list) or not emit or any(e not in EMIT_FORMATS for e in emit):
        raise ConfigError("emit", f"must be a non-empty list drawn from {list(EMIT_FORMATS)}, got {emit!r}")
    settings = _READERS[mode](top.sub(mode))
    top.finish()
    return RunConfig(mode, Path(out), seed, tuple(emit), settings, dict(data or {}))


def read_config_file(path: Path) -> Any:
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc


# }}}


# {{{ output

def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class _Writer:
    """Writes tables into the output directory and remembers every file."""

    def __init__(self, out: Path, emit: Sequence[str]):
        self.out = out
        self.emit = emit
        self.files: list[str] = []

    def _record(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def table(self, stem: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        if "csv" in self.emit:
            with open(self._record(stem + ".csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(columns)
                for row in rows:
                    w.writerow([_fmt(x) for x in row])
        if "json" in self.emit:
            data = [{c: float(x) if not isinstance(x, (bool, np.bool_)) else bool(x) for c, x in zip(columns, row)} for row in rows]
            with open(self._record(stem + ".json"), "w") as fh:
                json.dump(data, fh, indent=1)
                fh.write("\n")

    def path(self, name: str) -> Path:
        return self._record(name)


# }}}


# {{{ experiments

def run_brunner(cfg: RunConfig, w: _Writer) -> dict:
    s = cfg.settings
    k0, k1 = s["ladder"]
    slopes = {}
    for kind in s["kinds"]:
        for a in s["alphas"]:
            rows = []
            for k in range(k0, k1 + 1):
                dt = s["T"] / 2**k
                err, _ = run_brunner_case(kind, a, s["theta"], dt, s["n_points"], s["T"])
                logger.info("brunner %s alpha=%g dt=%.4g error=%.4e", kind, a, dt, err)
                rows.append((dt, err))
            w.table(f"brunner_{kind}_alpha{a:g}", ("dt", "error"), rows)
            slopes[f"{kind}/alpha={a:g}"] = fit_convergence_slope(rows)
    return {"slopes": slopes}


def run_dispersion(cfg: RunConfig, w: _Writer) -> dict:
    s = cfg.settings
    favorable = {}
    for Pe, Da in s["cells"]:
        p = SpectralParams(alpha=s["alpha"], theta=s["theta"], Pe=Pe, Da=Da, q=s["q"], n_poly=s["n_poly"],
                           kh_range=s["kh"], Nc_range=s["Nc"])
        res = contour_scan(p)
        name = f"dispersion_Pe{Pe:g}_Da{Da:g}"
        if "csv" in cfg.emit:
            write_csv(res, w.path(name + ".csv"))
        if "json" in cfg.emit:
            rows = [[getattr(p, c) for c in CSV_COLUMNS[:4]] + [pt.Nc, pt.kh, pt.G_num.real, pt.G_num.imag, pt.beta,
                                                               pt.delta_c, pt.Vg_ratio, pt.favorable]
                    for pt in res.points]
            with open(w.path(name + ".json"), "w") as fh:
                json.dump([dict(zip(CSV_COLUMNS, map(_json_value, r))) for r in rows], fh, indent=1)
                fh.write("\n")
        favorable[f"Pe={Pe:g},Da={Da:g}"] = int(res.mask.sum())
    return {"favorable_points": favorable}


def _json_value(x: Any) -> Any:
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    x = float(x)
    return x if math.isfinite(x) else None


def _channel_inputs(cfg: RunConfig):
    s = cfg.settings
    params = ChannelParams(Re=s["Re"], We=s["We"], nu=s["nu"], mu=s["mu"], alpha=s["alpha"])
    grid = channel_grid(s["nx"], s["ny"], s["length"])
    adaptive = AdaptiveConfig(s["delta"], s["dt_min"], s["dt_max"]) if s["adaptive"] else None
    schedule = Schedule(s["n_steps"], s["t_final"], s["dt0"], adaptive, s["snapshot_every"])
    return params, grid, schedule, ChannelBCs(wall_formula=s["wall_formula"])


DIAGNOSTIC_COLUMNS = ("step", "t", "dt", "intensity", "gs_vorticity", "gs_poisson", "defective")


def run_channel_mode(cfg: RunConfig, w: _Writer) -> dict:
    s = cfg.settings
    params, grid, schedule, bcs = _channel_inputs(cfg)
    state = init_state(grid, params, bcs, s["perturbation"], cfg.seed)
    rows = []
    try:
        for diag, state in iterate_channel(params, grid, state, ThetaScheme(s["theta"]), schedule, bcs):
            rows.append(tuple(getattr(diag, c) for c in DIAGNOSTIC_COLUMNS))
            if schedule.snapshot_every and diag.step % schedule.snapshot_every == 0:
                write_snapshot(state, grid, w.path(f"channel_snapshot_{diag.step:05d}.csv"))
    except ChannelFailure as exc:
        write_snapshot(exc.state, grid, w.path("channel_failure_state.csv"))
        raise
    finally:
        w.table("channel_diagnostics", DIAGNOSTIC_COLUMNS, rows)
    write_snapshot(state, grid, w.path("channel_final.csv"))
    return {"steps": len(rows), "t_final": state.t, "intensity": rows[-1][3] if rows else 0.0}


def fadr1d_problem(s: dict) -> FADRProblem:
    grid = strip_grid(s["n_points"], s["x0"], s["x1"])
    X, _ = grid.mesh()
    mid, span = 0.5 * (s["x0"] + s["x1"]), s["x1"] - s["x0"]
    if s["shape"] == "gaussian":
        u0 = np.exp(-(((X - mid) / s["width"]) ** 2))
    else:
        u0 = np.sin(2.0 * np.pi * s["mode"] * (X - s["x0"]) / span)
    return FADRProblem(grid, s["alpha"], u0, diffusivity=s["K2"], velocity=(s["K1"], 0.0), reaction=s["lam"])


FADR1D_COLUMNS = ("step", "t", "dt", "norm", "max_abs", "Nc", "Pe")


def run_fadr1d(cfg: RunConfig, w: _Writer) -> dict:
    s = cfg.settings
    problem = fadr1d_problem(s)
    u0 = problem.initial_state()
    m0 = float(np.max(np.abs(u0)))
    rows = []
    history = None
    try:
        for rec, history in integrate(problem, ThetaScheme(s["theta"]), s["t_final"], s["dt"]):
            rows.append((rec.index, rec.time, rec.dt, rec.norm, float(np.max(np.abs(history.latest))), rec.Nc, rec.Pe))
    finally:
        w.table("fadr1d_history", FADR1D_COLUMNS, rows)
    u = history.latest if history is not None else u0
    x = problem.grid.x
    w.table("fadr1d_final", ("x", "u"), list(zip(x, u[:, 0])))
    growth = max(r[4] for r in rows) / m0 if rows and m0 > 0 else 1.0
    return {"max_growth": growth, "Nc": rows[0][5] if rows else None, "Pe": rows[0][6] if rows else None}


_RUNNERS = {
    "brunner": run_brunner,
    "dispersion": run_dispersion,
    "channel": run_channel_mode,
    "fadr1d": run_fadr1d,
}

NUMERICAL_FAILURES = (SolutionBlowup, ChannelFailure, RootFindingError, ConvergenceError, FloatingPointError, ArithmeticError)


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute ``cfg``; returns ``(exit status, manifest)``."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    w = _Writer(cfg.out, cfg.emit)
    start = time.perf_counter()
    status, results, failure = EXIT_OK, {}, None
    try:
        results = _RUNNERS[cfg.mode](cfg, w)
    except NUMERICAL_FAILURES as exc:
        status = EXIT_NUMERICAL
        failure = {"type": type(exc).__name__, "message": str(exc)}
        with open(w.path("failure.json"), "w") as fh:
            json.dump(failure, fh, indent=1)
            fh.write("\n")
        logger.error("%s run failed: %s", cfg.mode, exc)
    manifest = {
        "mode": cfg.mode,
        "status": "ok" if status == EXIT_OK else "failed",
        "config": cfg.source,
        "seed": cfg.seed,
        "versions": {"fadrkit": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_time_s": time.perf_counter() - start,
        "files": list(w.files),
        "results": results,
    }
    if failure is not None:
        manifest["failure"] = failure
    with open(cfg.out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=_json_value)
        fh.write("\n")
    return status, manifest


# }}}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fadrkit", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run a {mode} experiment")
        p.add_argument("--config", required=True, type=Path, help="YAML configuration file")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--check", action="store_true", help="validate the configuration and exit")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.mode, read_config_file(args.config), args.out)
    except ConfigError as exc:
        print(f"fadrkit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.check:
        print(f"{args.config}: ok ({cfg.mode})")
        return EXIT_OK
    status, manifest = run(cfg)
    print(json.dumps({"status": manifest["status"], "results": manifest["results"]}, default=_json_value))
    return status


if __name__ == "__main__":
    sys.exit(main())
