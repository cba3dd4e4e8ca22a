"""Discretized cascade evolution: disturbance, relays, TCSC regulation, islanding.

Time advances in cascade steps of length ``T`` (the relay preset time), each
split into substeps of ``dt``. Within a substep every relay and compensator sees
the same flow solution; all relays whose timers expire trip together, then the
network is re-islanded and DC flow is re-solved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .devices import HvdcLink, TcscState, hvdc_injections, relay_step_arrays, tcsc_step_arrays
from .grid_model import (
    TRIPPED,
    GridCase,
    IslandPartition,
    PowerFlowError,
    dc_power_flow,
    island_decomposition,
    island_labels,
    prepare_islands,
    solve_prepared,
)

MIN_TOTAL_REACTANCE = 1e-6
_TIME_DIGITS = 9  # reported event times are rounded onto the dt grid


class DisturbanceError(ValueError):
    pass


class CascadeError(RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


@dataclass(frozen=True)
class Disturbance:
    """Admittance reduction ``delta`` on one branch, applied at ``apply_time``."""

    branch_id: int
    delta: float = 0.0
    lower: float = 0.0
    upper: float = math.inf
    apply_time: float = 0.0

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DisturbanceError("disturbance bounds are inverted")
        if not self.lower <= self.delta <= self.upper:
            raise DisturbanceError(
                f"delta={self.delta} outside [{self.lower}, {self.upper}] on branch {self.branch_id}"
            )
        if self.apply_time < 0:
            raise DisturbanceError("apply_time must be >= 0")


@dataclass(frozen=True)
class EngineConfig:
    relay_time: float = 1.0  # relay preset T, also the cascade step length
    dt: float = 0.01
    max_steps: int = 12
    facts: bool = True
    tcsc: TcscState = field(default_factory=TcscState)
    hvdc: tuple[tuple[int, HvdcLink], ...] = ()  # (branch_id, link) pairs
    record_states: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.relay_time > 0:
            raise ValueError("relay_time must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        n = self.relay_time / self.dt
        if abs(n - round(n)) > 1e-9 * n or round(n) < 1:
            raise ValueError("relay_time must be a positive integer multiple of dt")

    @property
    def substeps(self) -> int:
        return int(round(self.relay_time / self.dt))


@dataclass(frozen=True)
class CascadeState:
    """Network snapshot at a cascade-step boundary (time = step * T)."""

    step: int
    time: float
    in_service: np.ndarray
    counting_time: np.ndarray
    tcsc_reactance: np.ndarray
    flows: np.ndarray
    injections: np.ndarray


@dataclass(frozen=True)
class TripEvent:
    time: float
    branch_ids: tuple[int, ...]
    event: str = "trip"  # "trip" (relay) or "disturbance" (initial severing)


@dataclass(frozen=True)
class CascadeOutcome:
    flows: np.ndarray
    injections: np.ndarray
    admittances: np.ndarray
    cost: float
    timeline: tuple[TripEvent, ...]
    islands: IslandPartition
    terminated_at_step: int
    step_time: float
    outages_per_step: tuple[int, ...]  # cumulative outages at t = k*T, k = 0..terminated
    branch_ids: tuple[int, ...]
    states: tuple[CascadeState, ...] = ()

    @property
    def outage_count(self) -> int:
        return sum(len(ev.branch_ids) for ev in self.timeline)

    @property
    def tripped_branches(self) -> tuple[int, ...]:
        return tuple(b for ev in self.timeline for b in ev.branch_ids)

    @property
    def end_time(self) -> float:
        return self.terminated_at_step * self.step_time


def apply_disturbance(case: GridCase, d: Disturbance) -> GridCase:
    """Reduce the target branch admittance by ``d.delta``; reaching zero severs it."""
    try:
        br = case.branch(d.branch_id)
    except KeyError:
        raise DisturbanceError(f"branch {d.branch_id} not found") from None
    if not br.in_service:
        raise DisturbanceError(f"branch {d.branch_id} is already out of service")
    if not d.lower <= d.delta <= d.upper:
        raise DisturbanceError(f"delta={d.delta} outside [{d.lower}, {d.upper}]")
    if d.delta == 0:
        return case
    remaining = br.susceptance - d.delta
    if remaining <= 0:
        return case.with_branch(replace(br, susceptance=0.0, status=TRIPPED))
    return case.with_branch(replace(br, susceptance=remaining))


def evaluate_cost(outcome: CascadeOutcome | np.ndarray) -> float:
    """Sum of squared final branch flows; smaller means a worse blackout."""
    flows = outcome.flows if isinstance(outcome, CascadeOutcome) else np.asarray(outcome)
    return float(np.dot(flows, flows))


def hvdc_adjusted_injections(case: GridCase, config: EngineConfig) -> np.ndarray:
    """Bus injections with each HVDC link as a fixed rectifier load and inverter source."""
    inj = case.injections.copy()
    for _, link in config.hvdc:
        p_r, p_i, _ = hvdc_injections(link)
        inj[case.bus_index[link.rectifier_bus]] -= p_r
        inj[case.bus_index[link.inverter_bus]] += p_i
    return inj


def base_flows(case: GridCase, config: EngineConfig) -> np.ndarray:
    """Undisturbed DC flows including HVDC terminal injections."""
    return dc_power_flow(case, island_decomposition(case), hvdc_adjusted_injections(case, config))


def compute_thresholds(
    case: GridCase, config: EngineConfig, margin: float = 0.05, floor: float = 1e-3
) -> np.ndarray:
    """Relay thresholds: ``(1 + margin) * |base flow|``, at least ``floor``.

    HVDC branches carry no AC flow and get an infinite threshold.
    """
    flows = base_flows(case, config)
    thr = np.maximum((1.0 + margin) * np.abs(flows), floor)
    thr[case.hvdc_mask] = np.inf
    return thr


def _partition_from_labels(case: GridCase, labels: np.ndarray, n: int) -> IslandPartition:
    groups: list[set[int]] = [set() for _ in range(n)]
    for bus, lbl in zip(case.buses, labels):
        groups[lbl].add(bus.id)
    return IslandPartition(tuple(frozenset(g) for g in sorted(groups, key=min)))


def run_cascade(
    case: GridCase,
    d: Disturbance | Sequence[Disturbance] | None,
    config: EngineConfig,
) -> CascadeOutcome:
    """Simulate the cascade triggered by ``d`` for at most ``config.max_steps`` steps.

    Terminates early after a full step with neither trips nor overloads (once
    the disturbance has been applied). Deterministic for fixed inputs.
    """
    n_bus = len(case.buses)
    dt = config.dt
    n_sub = config.substeps
    T = config.relay_time
    fi, ti = case.from_idx, case.to_idx
    ids = np.array([br.id for br in case.branches])
    inj = hvdc_adjusted_injections(case, config)
    gen = case.generation_mask
    ref = case.reference_index

    in_service = case.in_service_mask.copy()
    ac = ~case.hvdc_mask
    b_line = case.admittances.copy()
    thr = case.thresholds
    relay_mask = ac
    tcsc_mask = np.array([br.device == "tcsc" for br in case.branches]) & config.facts
    params = config.tcsc
    x_c = np.where(tcsc_mask, params.reactance, 0.0)
    pid_int = np.zeros(len(ids))
    pid_prev = np.zeros(len(ids))
    t_c = np.zeros(len(ids))

    if d is None:
        disturbances = ()
    elif isinstance(d, Disturbance):
        disturbances = (d,)
    else:
        disturbances = tuple(d)
    pending = []
    for dist in disturbances:
        d_idx = case.branch_index.get(dist.branch_id)
        if d_idx is None:
            raise DisturbanceError(f"branch {dist.branch_id} not found")
        if not in_service[d_idx]:
            raise DisturbanceError(f"branch {dist.branch_id} is already out of service")
        if dist.delta != 0:
            pending.append((int(math.ceil(dist.apply_time / dt - 1e-9)), d_idx, dist.delta))
    pending.sort()

    def admittance():
        y = b_line.copy()
        if tcsc_mask.any():
            with np.errstate(divide="ignore"):
                x_line = np.where(b_line > 0, 1.0 / np.where(b_line > 0, b_line, 1.0), np.inf)
            x_tot = np.maximum(x_line + x_c, MIN_TOTAL_REACTANCE)
            y = np.where(tcsc_mask & (b_line > 0), 1.0 / x_tot, y)
        return np.where(in_service & ac, y, 0.0)

    def islands():
        conn = in_service & ac
        n, lbl = island_labels(n_bus, fi, ti, conn)
        return n, lbl, prepare_islands(lbl, n, fi, ti, conn, gen, ref)

    def solve(step):
        try:
            return solve_prepared(systems, inj, fi, ti, admittance())
        except PowerFlowError as exc:
            raise CascadeError(str(exc), step) from exc

    n_comp, labels, systems = islands()
    flows, served = solve(0)

    timeline: list[TripEvent] = []
    outages = [0]
    states: list[CascadeState] = []

    def snapshot(k):
        if config.record_states:
            states.append(
                CascadeState(k, round(k * T, _TIME_DIGITS), in_service.copy(), t_c.copy(), x_c.copy(), flows.copy(), served.copy())
            )

    snapshot(0)
    k = 0
    for k in range(1, config.max_steps + 1):
        step_activity = False
        for j in range(n_sub):
            g = (k - 1) * n_sub + j
            if pending and g >= pending[0][0]:
                severed = []
                while pending and g >= pending[0][0]:
                    _, i, delta = pending.pop(0)
                    b_line[i] -= delta
                    if b_line[i] <= 0:
                        b_line[i] = 0.0
                        in_service[i] = False
                        severed.append(int(ids[i]))
                step_activity = True
                if severed:
                    timeline.append(TripEvent(round(g * dt, _TIME_DIGITS), tuple(severed), "disturbance"))
                    n_comp, labels, systems = islands()
                flows, served = solve(k)

            t_c, trip, over = relay_step_arrays(t_c, flows, thr, T, dt)
            over &= in_service & relay_mask
            trip &= over
            t_c = np.where(in_service & relay_mask, t_c, 0.0)

            changed = False
            active = tcsc_mask & in_service
            if active.any():
                nx, ni, ne = tcsc_step_arrays(x_c, pid_int, pid_prev, flows, thr, dt, params)
                changed = bool(np.any(nx[active] != x_c[active]))
                x_c = np.where(active, nx, x_c)
                pid_int = np.where(active, ni, pid_int)
                pid_prev = np.where(active, ne, pid_prev)

            if trip.any():
                in_service &= ~trip
                t_c[trip] = 0.0
                timeline.append(TripEvent(round((g + 1) * dt, _TIME_DIGITS), tuple(int(b) for b in ids[trip])))
                n_comp, labels, systems = islands()
                changed = True
            if changed:
                flows, served = solve(k)
            step_activity |= bool(over.any())

        outages.append(sum(len(ev.branch_ids) for ev in timeline))
        snapshot(k)
        if not step_activity and not pending:
            break

    final_flows = np.where(in_service, flows, 0.0)
    return CascadeOutcome(
        flows=final_flows,
        injections=served,
        admittances=admittance(),
        cost=evaluate_cost(final_flows),
        timeline=tuple(timeline),
        islands=_partition_from_labels(case, labels, n_comp),
        terminated_at_step=k,
        step_time=T,
        outages_per_step=tuple(outages),
        branch_ids=tuple(int(b) for b in ids),
        states=tuple(states),
    )
