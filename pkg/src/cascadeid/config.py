"""Run configuration: an INI file with one section per concern.

Example (every key is optional except where noted)::

    [case]
    path = ieee118.case          # relative to this file; "builtin:ieee118" also works

    [engine]
    relay_time = 1.0             # relay preset T (s), also the cascade step length
    dt = 0.01
    max_steps = 12
    facts = on

    [tcsc]
    branches = case              # case | all | none | space-separated ids
    time_constant = 0.05
    kp = -4
    ki = -3
    kd = -2
    x_min = 0
    x_max = 10
    x_ref = 0

    [hvdc]
    branches = case              # case | none | ids; rectifier = from bus
    alpha = 0.20943951023931953
    gamma = 0.7853981633974483
    r_cr = 0.1
    r_ci = 0.1
    r_line = 0.1

    [thresholds]
    policy = case                # case | base_flow
    margin = 0.05
    floor = 0.001

    [disturbance]
    branches = 8                 # required for identify / sweep
    lower = 0
    upper = 37.45
    delta = 37.45                # used by simulate
    apply_time = 0

    [cost]
    model = cascade              # cascade | quadratic
    target = 5                   # quadratic only: J = sum((delta - target)^2)

    [cia]
    l_max = 10
    gradient_eps = 0.01
    multiplier_seed = 1.0
    candidate_policy = reject

    [solver]
    eps_min = 1e-8
    step_cap = 1.0
    max_newton_steps = 50
    krylov_dim = auto
    eps_fd = auto

    [sweep]
    points = 50                  # evenly spaced over [lower, upper]
    values =                     # explicit grid, overrides points

    [output]
    dir = out
    trace = off                  # write per-iteration JFNK traces
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .cascade import EngineConfig, compute_thresholds
from .contingency import CiaConfig
from .devices import HvdcLink, TcscState
from .grid_model import GridCase, parse_case
from .newton_krylov import SolverConfig

BUILTIN_PREFIX = "builtin:"
_SECTIONS = (
    "case",
    "engine",
    "tcsc",
    "hvdc",
    "thresholds",
    "disturbance",
    "cost",
    "cia",
    "solver",
    "sweep",
    "output",
)
_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def builtin_path(name: str):
    """Path-like handle to a file shipped in the package data directory."""
    return resources.files("cascadeid") / "data" / name


def _read_text(ref: str, base_dir: Path | None) -> tuple[str, Path | None]:
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX) :]
        if "." not in name:
            name += ".case"
        res = builtin_path(name)
        if not res.is_file():
            raise ConfigError(f"no builtin file {name!r}")
        return res.read_text(), None
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    try:
        return path.read_text(), path.parent
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _ids(value: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected integer ids, got {value!r}") from None


def _floats(value: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI verb needs; build with :func:`load_config` or directly."""

    case: GridCase | None
    engine: EngineConfig = field(default_factory=EngineConfig)
    targets: tuple[int, ...] = ()
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    delta: tuple[float, ...] = ()
    apply_time: float = 0.0
    cost_model: str = "cascade"
    cost_target: tuple[float, ...] = ()
    cia: CiaConfig | None = None
    sweep_values: tuple[float, ...] | None = None
    sweep_points: int = 50
    output_dir: Path = Path("out")
    trace: bool = False
    source: str = ""

    def __post_init__(self):
        if self.cost_model not in ("cascade", "quadratic"):
            raise ConfigError("cost.model must be 'cascade' or 'quadratic'")
        if self.cost_model == "cascade" and self.case is None:
            raise ConfigError("a case file is required for the cascade cost model")
        if self.case is not None:
            for b in self.targets:
                if b not in self.case.branch_index:
                    raise ConfigError(f"disturbance branch {b} not in the case")
        if not (len(self.lower) == len(self.upper) == len(self.targets)):
            raise ConfigError("disturbance.lower/upper need one value per target branch")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigError("disturbance.lower exceeds upper")
        if self.engine.dt >= self.engine.relay_time:
            raise ConfigError("engine.dt must be smaller than the relay time")

    def with_overrides(
        self,
        facts: bool | None = None,
        relay_time: float | None = None,
        delta: tuple[float, ...] | None = None,
        output_dir: Path | None = None,
    ) -> "RunConfig":
        engine = self.engine
        try:
            if facts is not None:
                engine = replace(engine, facts=facts)
            if relay_time is not None:
                engine = replace(engine, relay_time=relay_time)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return replace(
            self,
            engine=engine,
            delta=self.delta if delta is None else tuple(delta),
            output_dir=self.output_dir if output_dir is None else Path(output_dir),
        )

    def scenario(self) -> dict:
        """Small, stable description of the scenario for artifact headers."""
        e = self.engine
        return {
            "facts": e.facts,
            "relay_time": e.relay_time,
            "dt": e.dt,
            "max_steps": e.max_steps,
            "tcsc_time_constant": e.tcsc.time_constant,
            "targets": list(self.targets),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "cost_model": self.cost_model,
        }


def _apply_tcsc(case: GridCase, spec: str) -> GridCase:
    spec = spec.strip()
    if spec == "case":
        return case
    if spec == "all":
        chosen = {br.id for br in case.branches if br.device != "hvdc"}
    elif spec == "none":
        chosen = set()
    else:
        chosen = set(_ids(spec, "tcsc.branches"))
        for b in chosen:
            if b not in case.branch_index:
                raise ConfigError(f"tcsc branch {b} not in the case")
            if case.branch(b).device == "hvdc":
                raise ConfigError(f"branch {b} is an HVDC link and cannot carry a TCSC")
    out = []
    for br in case.branches:
        if br.device == "hvdc":
            out.append(br)
        else:
            out.append(replace(br, device="tcsc" if br.id in chosen else "none"))
    return case.with_branches(out)


def _apply_hvdc(case: GridCase, spec: str) -> GridCase:
    spec = spec.strip()
    if spec == "case":
        return case
    chosen = set() if spec == "none" else set(_ids(spec, "hvdc.branches"))
    for b in chosen:
        if b not in case.branch_index:
            raise ConfigError(f"hvdc branch {b} not in the case")
    out = []
    for br in case.branches:
        if br.id in chosen:
            out.append(replace(br, device="hvdc", flow_threshold=math.inf))
        elif br.device == "hvdc":
            out.append(replace(br, device="none"))
        else:
            out.append(br)
    return case.with_branches(out)


def load_config(ref: str | Path) -> RunConfig:
    """Parse an INI run configuration; ``ref`` may be a path or ``builtin:<name>``."""
    ref = str(ref)
    if ref.startswith(BUILTIN_PREFIX) and not ref.endswith(".ini"):
        ref += ".ini"
    text, base_dir = _read_text(ref, Path.cwd())
    return parse_config(text, base_dir, source=ref)


def parse_config(text: str, base_dir: Path | None = None, source: str = "") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")

    def get(sec, key, default=None):
        if cp.has_option(sec, key):
            return cp.get(sec, key).strip()
        return default

    def num(sec, key, default, kind=float):
        raw = get(sec, key)
        if raw is None or raw == "":
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"{sec}.{key}: expected a number, got {raw!r}") from None

    def flag(sec, key, default):
        raw = get(sec, key)
        if raw is None:
            return default
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ConfigError(f"{sec}.{key}: expected on/off, got {raw!r}") from None

    def auto(sec, key, kind):
        raw = get(sec, key, "auto")
        return None if raw in ("", "auto") else num(sec, key, None, kind)

    cost_model = get("cost", "model", "cascade")
    case = None
    case_ref = get("case", "path")
    if case_ref:
        case_text, _ = _read_text(case_ref, base_dir)
        case = parse_case(case_text)
        case = _apply_hvdc(case, get("hvdc", "branches", "case"))
        case = _apply_tcsc(case, get("tcsc", "branches", "case"))

    try:
        tcsc = TcscState(
            x_min=num("tcsc", "x_min", 0.0),
            x_max=num("tcsc", "x_max", 10.0),
            x_ref=num("tcsc", "x_ref", 0.0),
            reactance=num("tcsc", "x_ref", 0.0),
            time_constant=num("tcsc", "time_constant", 0.05),
            kp=num("tcsc", "kp", -4.0),
            ki=num("tcsc", "ki", -3.0),
            kd=num("tcsc", "kd", -2.0),
        )
        link_params = dict(
            alpha=num("hvdc", "alpha", math.pi / 15),
            gamma=num("hvdc", "gamma", math.pi / 4),
            r_cr=num("hvdc", "r_cr", 0.1),
            r_ci=num("hvdc", "r_ci", 0.1),
            r_line=num("hvdc", "r_line", 0.1),
        )
        links = ()
        if case is not None:
            links = tuple(
                (br.id, HvdcLink(br.from_bus, br.to_bus, **link_params))
                for br in case.branches
                if br.device == "hvdc"
            )
        engine = EngineConfig(
            relay_time=num("engine", "relay_time", 1.0),
            dt=num("engine", "dt", 0.01),
            max_steps=num("engine", "max_steps", 12, int),
            facts=flag("engine", "facts", True),
            tcsc=tcsc,
            hvdc=links,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if case is not None:
        policy = get("thresholds", "policy", "case")
        if policy == "base_flow":
            thr = compute_thresholds(
                case, engine, num("thresholds", "margin", 0.05), num("thresholds", "floor", 1e-3)
            )
            case = case.with_thresholds(thr)
        elif policy != "case":
            raise ConfigError("thresholds.policy must be 'case' or 'base_flow'")

    targets = _ids(get("disturbance", "branches", ""), "disturbance.branches")
    n = len(targets)

    def per_target(key, default):
        raw = get("disturbance", key)
        if raw is None or raw == "":
            return tuple([default] * n)
        vals = _floats(raw, f"disturbance.{key}")
        if len(vals) == 1:
            vals = vals * n
        if len(vals) != n:
            raise ConfigError(f"disturbance.{key}: expected {n} values, got {len(vals)}")
        return vals

    lower = per_target("lower", 0.0)
    if case is not None and get("disturbance", "upper") in (None, ""):
        upper = tuple(case.branch(b).susceptance if b in case.branch_index else 0.0 for b in targets)
    else:
        upper = per_target("upper", 0.0)
    delta = per_target("delta", 0.0)

    cost_target = ()
    if cost_model == "quadratic":
        cost_target = _floats(get("cost", "target", "0"), "cost.target")
        if len(cost_target) == 1:
            cost_target = cost_target * n
        if len(cost_target) != n:
            raise ConfigError("cost.target needs one value per target branch")

    cia = None
    if n:
        try:
            solver = SolverConfig(
                eps_fd=auto("solver", "eps_fd", float),
                eps_min=num("solver", "eps_min", 1e-8),
                step_cap=num("solver", "step_cap", 1.0),
                krylov_dim=auto("solver", "krylov_dim", int),
                max_newton_steps=num("solver", "max_newton_steps", 50, int),
            )
            cia = CiaConfig(
                lower=lower,
                upper=upper,
                l_max=num("cia", "l_max", 10, int),
                solver=solver,
                gradient_eps=num("cia", "gradient_eps", 1e-2),
                multiplier_seed=num("cia", "multiplier_seed", 1.0),
                candidate_policy=get("cia", "candidate_policy", "reject"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    values = get("sweep", "values")
    sweep_values = _floats(values, "sweep.values") if values else None
    out_dir = Path(get("output", "dir", "out"))  # relative to the working directory

    return RunConfig(
        case=case,
        engine=engine,
        targets=targets,
        lower=lower,
        upper=upper,
        delta=delta,
        apply_time=num("disturbance", "apply_time", 0.0),
        cost_model=cost_model,
        cost_target=cost_target,
        cia=cia,
        sweep_values=sweep_values,
        sweep_points=num("sweep", "points", 50, int),
        output_dir=out_dir,
        trace=flag("output", "trace", False),
        source=source,
    )


def sweep_grid(config: RunConfig) -> np.ndarray:
    """The configured sweep grid: explicit values, else evenly spaced points."""
    if config.sweep_values is not None:
        return np.array(config.sweep_values, dtype=float)
    if len(config.targets) != 1:
        raise ConfigError("sweep needs exactly one target branch")
    if config.sweep_points < 0:
        raise ConfigError("sweep.points must be >= 0")
    return np.linspace(config.lower[0], config.upper[0], config.sweep_points)


def load_builtin_case(name: str = "ieee118") -> GridCase:
    return parse_case(builtin_path(name if name.endswith(".case") else name + ".case").read_text())


__all__ = [
    "ConfigError",
    "RunConfig",
    "builtin_path",
    "load_builtin_case",
    "load_config",
    "parse_config",
    "sweep_grid",
]
