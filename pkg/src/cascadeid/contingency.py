"""Worst-case initial contingency search: multi-start JFNK on the KKT system.

Each outer iteration ``l`` restarts the Newton-Krylov solve from a deterministic
low-discrepancy point of the box, extracts the disturbance part of the
converged vector, and keeps it only if it lowers the best cascade cost so far.
The reference point is ``delta = 0`` (projected into the box).
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cascade import CascadeError, Disturbance, EngineConfig, run_cascade
from .grid_model import GridCase
from .newton_krylov import (
    KktLayout,
    JfnkResult,
    SolverConfig,
    SolverError,
    box_constraints,
    initial_kkt_vector,
    jfnk_solve,
    kkt_residual,
)

CostFn = Callable[[np.ndarray], float]
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class IdentificationError(RuntimeError):
    """No outer iteration produced an evaluable candidate."""


class GradientError(RuntimeError):
    def __init__(self, component: int, cause: Exception):
        self.component = component
        super().__init__(f"cost evaluation failed for gradient component {component}: {cause}")


def gradient_fd(
    cost_fn: CostFn,
    delta,
    eps: float,
    executor: Executor | None = None,
    base_cost: float | None = None,
) -> np.ndarray:
    """Forward-difference gradient ``(J(delta + eps e_i) - J(delta)) / eps``.

    Probe points are independent; pass an ``executor`` to evaluate them concurrently.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    probes = []
    for i in range(len(delta)):
        p = delta.copy()
        p[i] += eps
        probes.append(p)

    def safe(i, p):
        try:
            return cost_fn(p)
        except Exception as exc:  # noqa: BLE001 - reported with the component index
            raise GradientError(i, exc) from exc

    j0 = cost_fn(delta) if base_cost is None else base_cost
    if executor is None:
        values = [safe(i, p) for i, p in enumerate(probes)]
    else:
        values = list(executor.map(safe, range(len(probes)), probes))
    return (np.array(values, dtype=float) - j0) / eps


def van_der_corput(n: int, base: int = 2) -> float:
    q, denom = 0.0, 1.0
    while n:
        n, rem = divmod(n, base)
        denom *= base
        q += rem / denom
    return q


def start_point(l: int, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Halton point ``l + 1`` of the box; strictly interior for non-degenerate boxes."""
    u = np.array([van_der_corput(l + 1, _PRIMES[i % len(_PRIMES)]) for i in range(len(lower))])
    return lower + u * (upper - lower)


class MemoCost:
    """Wrap a cost function with an exact-argument cache and an evaluation counter."""

    def __init__(self, fn: CostFn):
        self.fn = fn
        self.cache: dict[bytes, float] = {}
        self.calls = 0

    def __call__(self, delta) -> float:
        d = np.ascontiguousarray(np.atleast_1d(np.asarray(delta, dtype=float)))
        key = d.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            self.calls += 1
            hit = float(self.fn(d))
            self.cache[key] = hit
        return hit


@dataclass(frozen=True)
class CiaConfig:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    l_max: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)
    gradient_eps: float = 1e-2
    multiplier_seed: float = 1.0  # initial sigma_i (mu_i = sigma_i**2)
    candidate_policy: str = "reject"  # or "project"
    feasibility_tol: float = 1e-9  # relative to the box width

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(x) for x in np.atleast_1d(self.upper)))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must have the same non-zero length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound exceeds upper bound")
        if self.l_max < 0:
            raise ValueError("l_max must be >= 0")
        if not self.gradient_eps > 0:
            raise ValueError("gradient_eps must be > 0")
        if self.candidate_policy not in ("reject", "project"):
            raise ValueError("candidate_policy must be 'reject' or 'project'")


@dataclass(frozen=True)
class IterationRecord:
    l: int
    start: tuple[float, ...]
    candidate: tuple[float, ...] | None
    cost: float | None
    converged: bool
    newton_steps: int
    feasible: bool
    accepted: bool
    best_cost: float
    error: str | None = None


@dataclass(frozen=True)
class CiaResult:
    best_delta: tuple[float, ...]
    best_cost: float
    reference_cost: float
    records: tuple[IterationRecord, ...]
    evaluations: int
    target_branches: tuple[int, ...] = ()

    @property
    def improved(self) -> bool:
        return any(r.accepted for r in self.records)

    @property
    def best_costs(self) -> list[float]:
        return [r.best_cost for r in self.records]

    def disturbances(self, lower=None, upper=None) -> list[Disturbance]:
        lower = lower or [-math.inf] * len(self.best_delta)
        upper = upper or [math.inf] * len(self.best_delta)
        return [
            Disturbance(b, d, lo, hi)
            for b, d, lo, hi in zip(self.target_branches, self.best_delta, lower, upper)
        ]


def identify_minimum(
    cost_fn: CostFn,
    config: CiaConfig,
    executor: Executor | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
    on_solve: Callable[[int, JfnkResult], None] | None = None,
) -> CiaResult:
    """Run the outer identification loop on an arbitrary cost ``delta -> J``.

    ``on_iteration`` receives every :class:`IterationRecord` as it is produced;
    ``on_solve`` receives ``(l, JfnkResult)`` for each completed inner solve.
    """
    lower = np.array(config.lower)
    upper = np.array(config.upper)
    width = np.maximum(upper - lower, 1.0)
    tol = config.feasibility_tol * width
    constraints = box_constraints(lower, upper)
    layout = KktLayout(len(lower), len(constraints))
    cost = cost_fn if isinstance(cost_fn, MemoCost) else MemoCost(cost_fn)

    def residual(z):
        return kkt_residual(
            z, lambda d: gradient_fd(cost, d, config.gradient_eps, executor), constraints, layout
        ).vector()

    best = np.clip(np.zeros(len(lower)), lower, upper)
    try:
        best_cost = cost(best)
    except Exception as exc:  # noqa: BLE001
        best_cost = math.inf
        reference_error = str(exc)
    else:
        reference_error = None
    reference_cost = best_cost
    records = []
    any_evaluated = reference_error is None

    for l in range(config.l_max + 1):
        start = start_point(l, lower, upper)
        candidate = None
        cand_cost = None
        converged = False
        steps = 0
        feasible = False
        accepted = False
        error = None
        try:
            sol = jfnk_solve(residual, initial_kkt_vector(start, constraints, config.multiplier_seed), config.solver)
            converged, steps = sol.converged, sol.steps
            if on_solve is not None:
                on_solve(l, sol)
            cand = layout.unpack(sol.z)[0].copy()
            if not np.all(np.isfinite(cand)):
                raise SolverError("non-finite candidate")
            inside = bool(np.all(cand >= lower - tol) and np.all(cand <= upper + tol))
            if inside or config.candidate_policy == "project":
                cand = np.clip(cand, lower, upper)
                feasible = True
            candidate = tuple(float(x) for x in cand)
            if feasible:
                cand_cost = cost(cand)
                any_evaluated = True
                if cand_cost < best_cost:
                    best, best_cost = cand, cand_cost
                    accepted = True
        except (SolverError, CascadeError, GradientError, ArithmeticError) as exc:
            error = f"{type(exc).__name__}: {exc}"
        rec = IterationRecord(
            l,
            tuple(float(x) for x in start),
            candidate,
            cand_cost,
            converged,
            steps,
            feasible,
            accepted,
            best_cost,
            error,
        )
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec)

    if not any_evaluated:
        raise IdentificationError(
            "no outer iteration produced an evaluable candidate"
            + (f" (reference point failed: {reference_error})" if reference_error else "")
        )
    return CiaResult(
        best_delta=tuple(float(x) for x in best),
        best_cost=float(best_cost),
        reference_cost=float(reference_cost),
        records=tuple(records),
        evaluations=cost.calls,
    )


def cascade_cost(
    case: GridCase, target_branches: Sequence[int], engine: EngineConfig
) -> Callable[[np.ndarray], float]:
    """``delta -> J`` through the cascade; probes outside the box are permitted."""
    targets = tuple(int(b) for b in target_branches)

    def fn(delta) -> float:
        ds = [
            Disturbance(b, float(x), -math.inf, math.inf)
            for b, x in zip(targets, np.atleast_1d(delta))
        ]
        return run_cascade(case, ds, engine).cost

    return fn


def identify(
    case: GridCase,
    target_branches: Sequence[int],
    config: CiaConfig,
    engine: EngineConfig | None = None,
    cost_fn: CostFn | None = None,
    executor: Executor | None = None,
    on_iteration=None,
    on_solve=None,
) -> CiaResult:
    """Identify the disturbance on ``target_branches`` minimizing the final cascade cost.

    ``cost_fn`` replaces the cascade-derived cost when given (used for synthetic studies).
    """
    targets = tuple(int(b) for b in target_branches)
    if len(targets) != len(config.lower):
        raise ValueError("one (lower, upper) pair is needed per target branch")
    for b in targets:
        if not case.branch(b).in_service:
            raise ValueError(f"target branch {b} is not in service")
    fn = cost_fn if cost_fn is not None else cascade_cost(case, targets, engine or EngineConfig())
    res = identify_minimum(fn, config, executor, on_iteration, on_solve)
    return CiaResult(
        res.best_delta, res.best_cost, res.reference_cost, res.records, res.evaluations, targets
    )
