"""Command-line driver.

Subcommands::

    twophase convergence-study   refinement study of the 2D manufactured problem
    twophase injection           3D water injection run (VTK + iteration CSV)
    twophase check-tau           admissible time step of the L-scheme
    twophase lscheme-probe       iteration history of one chosen time step

Settings come from an optional JSON file (``--config``) and are overridden by
flags. ``TWOPHASE_LOG_LEVEL`` sets the log verbosity (default WARNING).

Exit codes: 0 success, 1 solver failure, 2 time step not admissible, 3 bad
configuration.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .analysis import ConvergenceTable, compute_errors, compute_rates
from .errors import ConfigError, InsufficientRows, MissingMetadata, TwoPhaseError
from .grid import StructuredGrid, build_grid
from .io import RunManifest, grid_summary, write_csv, write_vtk
from .model import (
    BoundaryConditions,
    CoefficientSet,
    ManufacturedSolution,
    builtin_injection_3d,
    builtin_manufactured_2d,
    manufactured_bc,
)
from .stepper import (
    LSchemeConfig,
    LSchemeSolver,
    TimeGrid,
    check_tau_restriction,
    estimate_flux_bound,
)

log = logging.getLogger("twophase")

EXIT_OK, EXIT_SOLVER, EXIT_TAU, EXIT_CONFIG = 0, 1, 2, 3
PROBLEMS = ("manufactured2d", "injection3d")


@dataclass
class RunConfig:
    problem: str = "manufactured2d"
    counts: Optional[list[int]] = None
    extents: Optional[list[list[float]]] = None
    tau: Optional[float] = None
    t_end: Optional[float] = None
    L: Optional[float] = None
    tol_abs: float = 1e-8
    tol_rel: float = 0.0
    max_iters: int = 200
    mass_lumping: bool = False
    C_omega_d: float = 1.0
    output_dir: str = "out"
    snapshot_every: int = 10
    levels: int = 4
    jobs: int = 1
    step: Optional[int] = None
    s_init: Optional[float] = None
    rate: Optional[float] = None
    mobility: Optional[str] = None
    M_u: Optional[float] = None
    constants: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if not (self.problem in PROBLEMS or self.problem.startswith("custom:")):
            raise ConfigError(f"unknown problem {self.problem!r}; use {', '.join(PROBLEMS)} or custom:<file.py>")
        for name in ("tau", "t_end", "L", "rate", "M_u"):
            val = getattr(self, name)
            if val is not None and not math.isfinite(val):
                raise ConfigError(f"{name} must be finite")
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.t_end is not None and self.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        if self.counts is not None and any(int(c) < 1 for c in self.counts):
            raise ConfigError("counts must be positive")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.step is not None and self.step < 1:
            raise ConfigError("step must be >= 1")
        if self.C_omega_d <= 0:
            raise ConfigError("C_omega_d must be positive")
        if self.s_init is not None and not 0.0 <= self.s_init <= 1.0:
            raise ConfigError("s_init must lie in [0, 1]")


@dataclass
class Problem:
    """Everything a run needs, with the config applied."""

    grid: StructuredGrid
    coeffs: CoefficientSet
    bc: BoundaryConditions
    theta0: Any
    time: TimeGrid
    lscheme: LSchemeConfig
    exact: Optional[ManufacturedSolution] = None


def _problem_defaults(cfg: RunConfig) -> dict:
    if cfg.problem == "manufactured2d":
        t_end = 1.0 if cfg.t_end is None else cfg.t_end
        coeffs, exact = builtin_manufactured_2d(max(t_end, 1e-300))
        return dict(coeffs=coeffs, bc=manufactured_bc(), theta0=0.0, exact=exact,
                    counts=[4, 4], extents=[[0.0, 1.0]] * 2, tau=0.2, t_end=1.0, L=coeffs.L_s)
    if cfg.problem == "injection3d":
        counts = cfg.counts if cfg.counts is not None else [20, 20, 20]
        kw = {k: getattr(cfg, k) for k in ("s_init", "rate", "mobility") if getattr(cfg, k) is not None}
        coeffs, setup = builtin_injection_3d(counts=tuple(counts), **kw)
        return dict(coeffs=coeffs, bc=setup.bc, theta0=setup.theta_init, exact=None,
                    counts=[20, 20, 20], extents=[[0.0, 1.0]] * 3,
                    tau=setup.tau, t_end=setup.t_end, L=setup.L)
    path = Path(cfg.problem.split(":", 1)[1])
    if not path.is_file():
        raise ConfigError(f"custom problem file {path} not found")
    spec = importlib.util.spec_from_file_location("twophase_custom_problem", path)
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as exc:  # user code
        raise ConfigError(f"cannot load {path}: {exc}") from exc
    if not hasattr(module, "make_problem"):
        raise ConfigError(f"{path} does not define make_problem(config)")
    out = dict(module.make_problem(asdict(cfg)))
    missing = {"coeffs", "counts", "tau", "t_end", "L"} - set(out)
    if missing:
        raise ConfigError(f"make_problem() result lacks {', '.join(sorted(missing))}")
    out.setdefault("bc", BoundaryConditions())
    out.setdefault("theta0", 0.0)
    out.setdefault("exact", None)
    out.setdefault("extents", [[0.0, 1.0]] * len(out["counts"]))
    return out


def build_problem(cfg: RunConfig, level: int = 0) -> Problem:
    """Problem for ``cfg``; ``level`` refines by 2 in space and 4 in time per level."""
    cfg.validate()
    d = _problem_defaults(cfg)
    coeffs: CoefficientSet = d["coeffs"]
    overrides = dict(cfg.constants)
    if cfg.M_u is not None:
        overrides["M_u"] = cfg.M_u
    bad = set(overrides) - set(coeffs.constants())
    if bad:
        raise ConfigError(f"unknown coefficient constants: {', '.join(sorted(bad))}")
    if overrides:
        coeffs = replace(coeffs, **{k: float(v) for k, v in overrides.items()})
    counts = [int(c) * 2**level for c in (cfg.counts or d["counts"])]
    extents = cfg.extents or d["extents"]
    if len(extents) != len(counts):
        raise ConfigError("counts and extents must have the same length")
    grid = build_grid(len(counts), extents, counts)
    tau = (cfg.tau or d["tau"]) / 4**level
    t_end = cfg.t_end if cfg.t_end is not None else d["t_end"]
    L = cfg.L if cfg.L is not None else d["L"]
    if L is None:
        raise ConfigError("no L given and the problem has no default")
    lscheme = LSchemeConfig(L=L, tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel, max_iters=cfg.max_iters)
    lscheme.check(coeffs)
    return Problem(grid, coeffs, d["bc"], d["theta0"], TimeGrid.from_end(t_end, tau), lscheme, d["exact"])


# -- commands -------------------------------------------------------------


def _level_errors(args):
    cfg_dict, level = args
    cfg = RunConfig.from_dict(cfg_dict)
    prob = build_problem(cfg, level)
    if prob.exact is None:
        raise ConfigError("the convergence study needs a problem with an exact solution")
    solver = LSchemeSolver(prob.grid, prob.coeffs, prob.bc, cfg.mass_lumping)
    t0 = time.perf_counter()
    snaps, hists = solver.run(prob.time, prob.lscheme, prob.theta0)
    report = compute_errors(snaps, prob.exact, prob.grid, prob.time)
    log.info("level %d: h=%g tau=%g %.1fs", level, report.h, report.tau, time.perf_counter() - t0)
    return report


def _format_table(table: ConvergenceTable) -> str:
    head = f"{'h':>10} {'tau':>10}" + "".join(f" {k:>10} {'rate':>6}" for k in ("E_p", "E_stheta", "E_theta", "E_s"))
    lines = [head]
    for row in table.rows:
        line = f"{row.h:>10.5g} {row.tau:>10.5g}"
        for key in ("E_p", "E_stheta", "E_theta", "E_s"):
            rate = row.rates.get(key)
            line += f" {getattr(row.report, key):>10.3e} {'' if rate is None else format(rate, '.2f'):>6}"
        lines.append(line)
    return "\n".join(lines)


def cmd_convergence_study(cfg: RunConfig) -> tuple[ConvergenceTable, int]:
    """Run ``cfg.levels`` refinements and write ``convergence.csv``."""
    cfg.validate()
    build_problem(cfg)  # fail fast on config errors
    out = Path(cfg.output_dir)
    manifest = RunManifest(config=asdict(cfg), version=__version__,
                           tolerances={"tol_abs": cfg.tol_abs, "tol_rel": cfg.tol_rel})
    t0 = time.perf_counter()
    jobs = [(asdict(cfg), level) for level in range(cfg.levels)]
    if cfg.jobs > 1 and cfg.levels > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            reports = list(pool.map(_level_errors, jobs))
    else:
        reports = [_level_errors(j) for j in jobs]
    manifest.timings["total"] = time.perf_counter() - t0
    table = ConvergenceTable()
    for rep in reports:
        table.add(rep)
    status = EXIT_OK
    try:
        table = compute_rates(table)
    except InsufficientRows as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    path = write_csv(table, out / "convergence.csv")
    manifest.add_artifact(path, out)
    manifest.write(out / "manifest.json")
    print(_format_table(table))
    return table, status


def cmd_injection(cfg: RunConfig):
    """Run the injection problem, writing VTK snapshots and the iteration log."""
    prob = build_problem(cfg)
    out = Path(cfg.output_dir)
    manifest = RunManifest(config=asdict(cfg), grid=grid_summary(prob.grid), version=__version__,
                           tolerances={"tol_abs": cfg.tol_abs, "tol_rel": cfg.tol_rel, "L": prob.lscheme.L})
    t0 = time.perf_counter()
    solver = LSchemeSolver(prob.grid, prob.coeffs, prob.bc, cfg.mass_lumping)
    manifest.timings["assembly"] = time.perf_counter() - t0
    written = []

    def dump(n, state):
        path = write_vtk(prob.grid, {"saturation": state.sat, "theta": state.theta, "pressure": state.p},
                         out / f"saturation_{n:05d}.vtk", title=f"t = {state.t:.17g}")
        written.append(path)

    def callback(n, state, hist):
        print(f"step {n:4d}  t={state.t:<10.6g} iterations={hist.n_iters}", flush=True)
        if n % cfg.snapshot_every == 0 or n == prob.time.n_steps:
            dump(n, state)

    dump(0, solver.initial_state(prob.theta0))
    t1 = time.perf_counter()
    snaps, hists = solver.run(prob.time, prob.lscheme, prob.theta0, cfg.snapshot_every, callback)
    manifest.timings["solve"] = time.perf_counter() - t1
    manifest.timings["total"] = time.perf_counter() - t0
    if hists:
        written.append(write_csv(hists, out / "iterations.csv"))
        counts = np.array([h.n_iters for h in hists])
        center = prob.grid.center_cell()
        print(f"iterations per step: min {counts.min()} median {np.median(counts):g} max {counts.max()}")
        print(f"saturation max {snaps[-1].sat.max():.6g} at cell {int(snaps[-1].sat.argmax())} "
              f"(center cell {center})")
    else:
        print("no time steps (t_end = 0); wrote the initial state only")
    for path in written:
        manifest.add_artifact(path, out)
    manifest.write(out / "manifest.json")
    return snaps, hists


def cmd_check_tau(cfg: RunConfig) -> int:
    """Print the time-step restriction and return the exit code."""
    prob = build_problem(cfg)
    coeffs = prob.coeffs
    if coeffs.M_u is None:
        solver = LSchemeSolver(prob.grid, coeffs, prob.bc, cfg.mass_lumping)
        sat0 = np.asarray(coeffs.s(np.broadcast_to(prob.theta0, (prob.grid.n_cells,))), dtype=float)
        coeffs = replace(coeffs, M_u=estimate_flux_bound(solver, sat0))
        print(f"M_u = {coeffs.M_u:.6g} (estimated from a pilot pressure solve)")
    else:
        print(f"M_u = {coeffs.M_u:.6g}")
    L, tau = prob.lscheme.L, prob.time.tau
    rep = check_tau_restriction(coeffs, L, tau, cfg.C_omega_d)
    tau_max = "unrestricted" if math.isinf(rep.tau_max) else f"{rep.tau_max:.6g}"
    print(f"C1 = {rep.C1:.6g}")
    print(f"C3 = {rep.C3:.6g}")
    print(f"tau_max = {tau_max}")
    print(f"tau = {tau:.6g} with L = {L:.6g}: {'admissible' if rep.admissible else 'NOT admissible'}")
    sens = []
    for c in (0.5, 1.0, 2.0):
        r = check_tau_restriction(coeffs, L, tau, c)
        sens.append(f"C_omega_d={c:g}: " + ("unrestricted" if math.isinf(r.tau_max) else f"{r.tau_max:.6g}"))
    print("sensitivity of tau_max: " + "; ".join(sens))
    return EXIT_OK if rep.admissible else EXIT_TAU


def cmd_lscheme_probe(cfg: RunConfig):
    """Run up to time step ``cfg.step`` and write that step's iteration history."""
    prob = build_problem(cfg)
    step = cfg.step
    if step is None:
        # the 20-day step for the injection problem (time in days), the first step otherwise
        step = round(20.0 / prob.time.tau) if cfg.problem == "injection3d" else 1
    if step > prob.time.n_steps:
        raise ConfigError(f"step {step} is beyond the last step {prob.time.n_steps}")
    solver = LSchemeSolver(prob.grid, prob.coeffs, prob.bc, cfg.mass_lumping)
    state = solver.initial_state(prob.theta0)
    prob.lscheme.check(prob.coeffs)
    for n in range(1, step + 1):
        state, hist = solver.solve_step(state, prob.time.tau, prob.lscheme, n)
    path = write_csv(hist, Path(cfg.output_dir) / f"lscheme_step{step:05d}.csv")
    print(f"step {step} (t = {hist.time:.6g}): {hist.n_iters} iterations, converged={hist.converged}")
    for r in hist.records:
        ratio = "" if math.isnan(r.ratio) else f"{r.ratio:.4f}"
        print(f"  i={r.iteration:3d}  inc_theta={r.inc_theta:.6e}  inc_q={r.inc_q:.6e}  ratio={ratio}")
    print(f"wrote {path}")
    return hist


# -- argument parsing -----------------------------------------------------


def _extent(text: str) -> list[float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"extent must look like lo:hi, got {text!r}") from exc
    return [lo, hi]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--problem", help="manufactured2d, injection3d or custom:<file.py>")
    common.add_argument("--counts", type=int, nargs="+", help="cells per axis")
    common.add_argument("--extents", type=_extent, nargs="+", help="lo:hi per axis")
    common.add_argument("--tau", type=float)
    common.add_argument("--t-end", type=float)
    common.add_argument("--L", type=float, dest="L")
    common.add_argument("--tol-abs", type=float)
    common.add_argument("--tol-rel", type=float)
    common.add_argument("--max-iters", type=int)
    common.add_argument("--mass-lumping", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--c-omega-d", type=float, dest="C_omega_d")
    common.add_argument("--output-dir")
    common.add_argument("--snapshot-every", type=int)
    common.add_argument("--s-init", type=float)
    common.add_argument("--rate", type=float)
    common.add_argument("--mobility", choices=("dimensional", "literal"))
    common.add_argument("--m-u", type=float, dest="M_u")

    parser = argparse.ArgumentParser(prog="twophase", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convergence-study", parents=[common], help="manufactured-solution refinement study")
    p.add_argument("--levels", type=int)
    p.add_argument("--jobs", type=int, help="refinement levels run in parallel processes")
    sub.add_parser("injection", parents=[common], help="3D injection run")
    sub.add_parser("check-tau", parents=[common], help="L-scheme time-step restriction")
    p = sub.add_parser("lscheme-probe", parents=[common], help="iteration history of one time step")
    p.add_argument("--step", type=int, help="time step index (1-based)")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, val in vars(args).items():
        if key in ("config", "command") or val is None:
            continue
        data[key] = val
    if args.command == "injection":
        data.setdefault("problem", "injection3d")
    try:
        cfg = RunConfig.from_dict(data)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def main(argv=None) -> int:
    level = os.environ.get("TWOPHASE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "convergence-study":
            _, status = cmd_convergence_study(cfg)
            return status
        if args.command == "injection":
            cmd_injection(cfg)
            return EXIT_OK
        if args.command == "check-tau":
            return cmd_check_tau(cfg)
        cmd_lscheme_probe(cfg)
        return EXIT_OK
    except (ConfigError, MissingMetadata) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TwoPhaseError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
