"""Command-line entry point: ``cascadeid simulate | identify | sweep``.

Exit codes: 0 success, 1 usage error, 2 input error (config, case file,
disturbance), 3 solver failure (singular flow, no evaluable candidate).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cascade import CascadeError, Disturbance, DisturbanceError, run_cascade
from .config import ConfigError, RunConfig, load_config, sweep_grid
from .contingency import IdentificationError, identify, identify_minimum
from .devices import DeviceConfigError
from .grid_model import CaseFormatError, PowerFlowError
from .newton_krylov import SolverError
from .reporting import write_cia, write_outcome, write_sweep, write_trace

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
_INPUT_ERRORS = (ConfigError, CaseFormatError, DisturbanceError, DeviceConfigError)
_SOLVER_ERRORS = (CascadeError, PowerFlowError, IdentificationError, SolverError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(value: str) -> bool:
    v = value.lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _values(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="INI run configuration (or builtin:<name>)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--facts", type=_on_off, metavar="on|off", help="enable or disable TCSC devices")
    common.add_argument("--relay-T", dest="relay_t", type=float, metavar="SECONDS", help="relay preset time")

    ap = _Parser(prog="cascadeid", description="Cascading-failure simulation and worst-case contingency search.")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sim = sub.add_parser("simulate", parents=[common], help="run one cascade")
    sim.add_argument(
        "--disturbance", type=_values, metavar="VALUE[,VALUE]", help="delta per target branch"
    )
    ide = sub.add_parser("identify", parents=[common], help="search for the worst-case disturbance")
    ide.add_argument("--trace", action="store_true", help="write per-iteration JFNK traces")
    swp = sub.add_parser("sweep", parents=[common], help="evaluate the cost over a grid of disturbances")
    grid = swp.add_mutually_exclusive_group()
    grid.add_argument("--grid", type=_values, metavar="V1,V2,...", help="explicit grid (may be empty)")
    grid.add_argument("--points", type=int, help="evenly spaced points over [lower, upper]")
    return ap


def _quadratic(target):
    c = np.asarray(target, dtype=float)

    def fn(delta):
        d = np.atleast_1d(np.asarray(delta, dtype=float)) - c
        return float(d @ d)

    return fn


def _disturbances(cfg: RunConfig, delta) -> list[Disturbance]:
    if len(delta) != len(cfg.targets):
        raise ConfigError(f"{len(cfg.targets)} disturbance value(s) expected, got {len(delta)}")
    return [
        Disturbance(b, float(d), lo, hi, cfg.apply_time)
        for b, d, lo, hi in zip(cfg.targets, delta, cfg.lower, cfg.upper)
    ]


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    if cfg.cost_model != "cascade":
        raise ConfigError("simulate needs the cascade cost model")
    ds = _disturbances(cfg, cfg.delta) if cfg.targets else []
    outcome = run_cascade(cfg.case, ds, cfg.engine)
    summary = [{"branch_id": d.branch_id, "delta": d.delta} for d in ds]
    write_outcome(out, outcome, cfg.scenario(), summary)
    print(
        f"J={outcome.cost!r} outages={outcome.outage_count} islands={len(outcome.islands)} "
        f"steps={outcome.terminated_at_step} -> {out}"
    )
    return EXIT_OK


def cmd_identify(cfg: RunConfig, out: Path, trace: bool = False) -> int:
    if not cfg.targets or cfg.cia is None:
        raise ConfigError("identify needs disturbance.branches")
    traces = []
    on_solve = (lambda l, sol: traces.append((l, sol))) if trace or cfg.trace else None
    if cfg.cost_model == "quadratic":
        res = identify_minimum(_quadratic(cfg.cost_target), cfg.cia, on_solve=on_solve)
        res = replace(res, target_branches=cfg.targets)
    else:
        for b in cfg.targets:
            if not cfg.case.branch(b).in_service:
                raise ConfigError(f"target branch {b} is not in service")
        res = identify(cfg.case, cfg.targets, cfg.cia, cfg.engine, on_solve=on_solve)
    write_cia(out, res, cfg.scenario(), cfg.lower, cfg.upper)
    for l, sol in traces:
        write_trace(Path(out) / f"jfnk_trace_l{l}.csv", sol)
    best = ",".join(repr(x) for x in res.best_delta)
    print(f"delta*={best} J={res.best_cost!r} evaluations={res.evaluations} -> {out}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path, grid=None) -> int:
    if len(cfg.targets) != 1:
        raise ConfigError("sweep needs exactly one target branch")
    values = sweep_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    rows = []
    if cfg.cost_model == "quadratic":
        fn = _quadratic(cfg.cost_target)
        rows = [(float(v), fn([v]), None, None, "") for v in values]
    else:
        b, lo, hi = cfg.targets[0], cfg.lower[0], cfg.upper[0]
        for v in values:
            try:
                o = run_cascade(cfg.case, Disturbance(b, float(v), lo, hi, cfg.apply_time), cfg.engine)
            except (DisturbanceError, CascadeError) as exc:
                rows.append((float(v), None, None, None, f"{type(exc).__name__}: {exc}"))
            else:
                rows.append((float(v), o.cost, o.outage_count, len(o.islands), ""))
    write_sweep(Path(out) / "sweep.csv", rows)
    ok = [r for r in rows if r[1] is not None]
    best = min(ok, key=lambda r: r[1]) if ok else None
    tail = f"min J={best[1]!r} at delta={best[0]!r}" if best else "no evaluable point"
    print(f"{len(rows)} points, {tail} -> {out}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.relay_t is not None and not (args.relay_t > 0 and math.isfinite(args.relay_t)):
        print("cascadeid: error: --relay-T must be a positive number", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        delta = getattr(args, "disturbance", None)
        cfg = cfg.with_overrides(facts=args.facts, relay_time=args.relay_t, delta=delta)
        out = args.out if args.out is not None else cfg.output_dir
        if args.verb == "simulate":
            return cmd_simulate(cfg, out)
        if args.verb == "identify":
            return cmd_identify(cfg, out, args.trace)
        grid = args.grid
        if grid is None and args.points is not None:
            if args.points < 0:
                raise ConfigError("--points must be >= 0")
            cfg = replace(cfg, sweep_points=args.points, sweep_values=None)
        return cmd_sweep(cfg, out, grid)
    except _INPUT_ERRORS as exc:
        print(f"cascadeid: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _SOLVER_ERRORS as exc:
        print(f"cascadeid: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"cascadeid: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
