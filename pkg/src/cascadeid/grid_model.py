"""Transmission network model, case-file parsing, islanding and DC power flow.

Case files are plain text with four record types::

    BASE   100
    REF    69
    BUS    id kind injection          # kind = generator | load | reference
    BRANCH id from to susceptance threshold device   # device = none | tcsc | hvdc

Records may appear in any order; ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg.lapack import dposv
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BUS_KINDS = ("generator", "load", "reference")
DEVICES = ("none", "tcsc", "hvdc")
IN_SERVICE = "in_service"
TRIPPED = "tripped"


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class PowerFlowError(RuntimeError):
    """Raised when an island's susceptance matrix cannot be factorized."""

    def __init__(self, message: str, island: int | None = None):
        self.island = island
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    injection: float

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise ValueError(f"unknown bus kind {self.kind!r}")
        if not math.isfinite(self.injection):
            raise ValueError(f"bus {self.id}: injection must be finite")

    @property
    def has_generation(self) -> bool:
        return self.kind != "load"


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    flow_threshold: float
    status: str = IN_SERVICE
    device: str = "none"

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.id}: from_bus equals to_bus")
        if not self.flow_threshold > 0:
            raise ValueError(f"branch {self.id}: flow_threshold must be > 0")
        if self.susceptance < 0 or not math.isfinite(self.susceptance):
            raise ValueError(f"branch {self.id}: susceptance must be finite and >= 0")
        if self.status not in (IN_SERVICE, TRIPPED):
            raise ValueError(f"branch {self.id}: bad status {self.status!r}")
        if self.device not in DEVICES:
            raise ValueError(f"branch {self.id}: unknown device {self.device!r}")

    @property
    def in_service(self) -> bool:
        return self.status == IN_SERVICE

    @property
    def admittance(self) -> float:
        """Effective admittance seen by the network matrix (zero once tripped)."""
        return self.susceptance if self.in_service else 0.0


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    reference_bus: int | None = None

    def __post_init__(self):
        # Bus order is canonicalized by id so "lowest index" means "lowest id".
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.base_mva > 0:
            raise ValueError("base_mva must be > 0")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus id")
        known = set(ids)
        branch_ids = [br.id for br in self.branches]
        if len(set(branch_ids)) != len(branch_ids):
            raise ValueError("duplicate branch id")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {br.id} references an unknown bus")
        if self.reference_bus is not None and self.reference_bus not in known:
            raise ValueError(f"reference bus {self.reference_bus} does not exist")

    # -- lookups ---------------------------------------------------------
    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[int, int]:
        return {br.id: i for i, br in enumerate(self.branches)}

    def branch(self, branch_id: int) -> Branch:
        try:
            return self.branches[self.branch_index[branch_id]]
        except KeyError:
            raise KeyError(f"branch {branch_id} not found") from None

    # -- array views used by the solvers ---------------------------------
    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([self.bus_index[br.from_bus] for br in self.branches], dtype=np.intp)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([self.bus_index[br.to_bus] for br in self.branches], dtype=np.intp)

    @cached_property
    def injections(self) -> np.ndarray:
        return np.array([b.injection for b in self.buses], dtype=float)

    @cached_property
    def generation_mask(self) -> np.ndarray:
        return np.array([b.has_generation for b in self.buses], dtype=bool)

    @cached_property
    def ac_mask(self) -> np.ndarray:
        """In-service branches that couple buses in the AC network (HVDC excluded)."""
        return self.in_service_mask & ~self.hvdc_mask

    @cached_property
    def admittances(self) -> np.ndarray:
        return np.array([br.admittance for br in self.branches], dtype=float)

    @cached_property
    def in_service_mask(self) -> np.ndarray:
        return np.array([br.in_service for br in self.branches], dtype=bool)

    @cached_property
    def thresholds(self) -> np.ndarray:
        return np.array([br.flow_threshold for br in self.branches], dtype=float)

    @cached_property
    def hvdc_mask(self) -> np.ndarray:
        return np.array([br.device == "hvdc" for br in self.branches], dtype=bool)

    @property
    def reference_index(self) -> int | None:
        return None if self.reference_bus is None else self.bus_index[self.reference_bus]

    # -- functional updates ----------------------------------------------
    def with_branches(self, branches: Iterable[Branch]) -> "GridCase":
        return replace(self, branches=tuple(branches))

    def with_branch(self, branch: Branch) -> "GridCase":
        i = self.branch_index[branch.id]
        new = list(self.branches)
        new[i] = branch
        return self.with_branches(new)

    def trip(self, branch_ids: Iterable[int]) -> "GridCase":
        ids = set(branch_ids)
        return self.with_branches(
            replace(br, status=TRIPPED) if br.id in ids else br for br in self.branches
        )

    def with_thresholds(self, thresholds: Sequence[float]) -> "GridCase":
        return self.with_branches(
            replace(br, flow_threshold=float(t)) for br, t in zip(self.branches, thresholds)
        )


@dataclass(frozen=True)
class IslandPartition:
    """Connected components of the in-service network, ordered by smallest bus id."""

    islands: tuple[frozenset[int], ...]
    isolated_buses: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "islands", tuple(frozenset(i) for i in self.islands))
        if sum(len(i) for i in self.islands) != len(frozenset().union(*self.islands)):
            raise ValueError("islands must be disjoint")
        object.__setattr__(self, "isolated_buses", sum(1 for i in self.islands if len(i) == 1))

    def __len__(self) -> int:
        return len(self.islands)

    def island_of(self, bus_id: int) -> int:
        for k, island in enumerate(self.islands):
            if bus_id in island:
                return k
        raise KeyError(bus_id)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _number(tok: str, kind, line: int, what: str):
    try:
        return kind(tok)
    except ValueError:
        raise CaseFormatError(f"cannot parse {what} {tok!r}", line) from None


def parse_case(text: str) -> GridCase:
    """Parse case-file text into a validated :class:`GridCase`.

    Every branch starts in service. Errors carry the offending line number.
    """
    buses: list[Bus] = []
    branches: list[Branch] = []
    bus_lines: dict[int, int] = {}
    branch_lines: dict[int, int] = {}
    base_mva = None
    ref = None
    ref_line = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        toks = content.split()
        tag = toks[0].upper()
        if tag == "BASE":
            if len(toks) != 2:
                raise CaseFormatError("BASE expects one value", lineno)
            base_mva = _number(toks[1], float, lineno, "base MVA")
            if not base_mva > 0:
                raise CaseFormatError("base MVA must be positive", lineno)
        elif tag == "REF":
            if len(toks) != 2:
                raise CaseFormatError("REF expects one bus id", lineno)
            if ref is not None:
                raise CaseFormatError("more than one REF record", lineno)
            ref = _number(toks[1], int, lineno, "reference bus")
            ref_line = lineno
        elif tag == "BUS":
            if len(toks) != 4:
                raise CaseFormatError("BUS expects: id kind injection", lineno)
            bus_id = _number(toks[1], int, lineno, "bus id")
            kind = toks[2].lower()
            if kind not in BUS_KINDS:
                raise CaseFormatError(f"unknown bus kind {toks[2]!r}", lineno)
            inj = _number(toks[3], float, lineno, "injection")
            if not math.isfinite(inj):
                raise CaseFormatError("injection must be finite", lineno)
            if bus_id in bus_lines:
                raise CaseFormatError(
                    f"duplicate bus id {bus_id} (first defined on line {bus_lines[bus_id]})", lineno
                )
            bus_lines[bus_id] = lineno
            buses.append(Bus(bus_id, kind, inj))
        elif tag == "BRANCH":
            if len(toks) != 7:
                raise CaseFormatError(
                    "BRANCH expects: id from to susceptance threshold device", lineno
                )
            bid = _number(toks[1], int, lineno, "branch id")
            f = _number(toks[2], int, lineno, "from bus")
            t = _number(toks[3], int, lineno, "to bus")
            b = _number(toks[4], float, lineno, "susceptance")
            thr = _number(toks[5], float, lineno, "threshold")
            dev = toks[6].lower()
            if bid in branch_lines:
                raise CaseFormatError(f"duplicate branch id {bid}", lineno)
            if f == t:
                raise CaseFormatError(f"branch {bid} connects bus {f} to itself", lineno)
            if not (b >= 0 and math.isfinite(b)):
                raise CaseFormatError("susceptance must be finite and >= 0", lineno)
            if not thr > 0:
                raise CaseFormatError("threshold must be > 0", lineno)
            if dev not in DEVICES:
                raise CaseFormatError(f"unknown device {toks[6]!r}", lineno)
            branch_lines[bid] = lineno
            branches.append(Branch(bid, f, t, b, thr, IN_SERVICE, dev))
        else:
            raise CaseFormatError(f"unknown record type {toks[0]!r}", lineno)

    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in bus_lines:
                raise CaseFormatError(
                    f"branch {br.id} references nonexistent bus {end}", branch_lines[br.id]
                )
    declared_refs = [b.id for b in buses if b.kind == "reference"]
    if ref is None:
        if len(declared_refs) != 1:
            raise CaseFormatError("missing reference bus (no REF record)")
        ref = declared_refs[0]
    else:
        if ref not in bus_lines:
            raise CaseFormatError(f"reference bus {ref} does not exist", ref_line)
        if any(r != ref for r in declared_refs):
            raise CaseFormatError(
                f"bus kind 'reference' conflicts with REF {ref}", bus_lines[declared_refs[0]]
            )
    return GridCase(tuple(buses), tuple(branches), 100.0 if base_mva is None else base_mva, ref)


def load_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


def format_case(case: GridCase) -> str:
    """Serialize a case back to the text format (statuses are not persisted)."""
    lines = [f"BASE {case.base_mva:g}"]
    if case.reference_bus is not None:
        lines.append(f"REF {case.reference_bus}")
    lines += [f"BUS {b.id} {b.kind} {float(b.injection)!r}" for b in case.buses]
    lines += [
        f"BRANCH {br.id} {br.from_bus} {br.to_bus} {float(br.susceptance)!r} {float(br.flow_threshold)!r} {br.device}"
        for br in case.branches
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Islands
# ---------------------------------------------------------------------------

def island_labels(n_bus: int, from_idx, to_idx, connected) -> tuple[int, np.ndarray]:
    """Label buses by component of the graph formed by ``connected`` branches.

    Labels are renumbered so component 0 holds the lowest bus index, and so on.
    """
    f = from_idx[connected]
    t = to_idx[connected]
    graph = coo_matrix((np.ones(len(f)), (f, t)), shape=(n_bus, n_bus))
    n_comp, raw = connected_components(graph, directed=False)
    first_seen = {}
    for lbl in raw:
        if lbl not in first_seen:
            first_seen[lbl] = len(first_seen)
    return n_comp, np.array([first_seen[lbl] for lbl in raw], dtype=np.intp)


def island_decomposition(case: GridCase) -> IslandPartition:
    """Islands of the AC network. HVDC links do not join islands."""
    n_comp, labels = island_labels(len(case.buses), case.from_idx, case.to_idx, case.ac_mask)
    groups: list[set[int]] = [set() for _ in range(n_comp)]
    for bus, lbl in zip(case.buses, labels):
        groups[lbl].add(bus.id)
    groups.sort(key=min)
    return IslandPartition(tuple(frozenset(g) for g in groups))


# ---------------------------------------------------------------------------
# DC power flow
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IslandSystem:
    """Precomputed indexing for one generating island's reduced B matrix."""

    members: np.ndarray  # bus indices, ascending
    slack: int  # local index of the slack bus
    branches: np.ndarray  # global indices of branches inside the island
    keep: np.ndarray  # local indices of non-slack buses
    flat: np.ndarray  # flat indices into the reduced (m-1) x (m-1) matrix
    sign: np.ndarray  # +1 diagonal, -1 off-diagonal contribution
    source: np.ndarray  # position in ``branches`` feeding each entry of ``flat``


def prepare_islands(
    labels: np.ndarray,
    n_islands: int,
    from_idx: np.ndarray,
    to_idx: np.ndarray,
    connected: np.ndarray,
    generation_mask: np.ndarray,
    reference_index: int | None,
) -> tuple[IslandSystem, ...]:
    """Index structures for every island that holds generation.

    The slack is the reference bus when the island contains it, else the
    island's lowest-index generator bus.
    """
    n_bus = len(labels)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_islands + 1))
    local = np.empty(n_bus, dtype=np.intp)
    systems = []
    for k in range(n_islands):
        members = order[bounds[k] : bounds[k + 1]]
        gens = members[generation_mask[members]]
        if len(gens) == 0:
            continue
        if reference_index is not None and labels[reference_index] == k:
            slack_bus = reference_index
        else:
            slack_bus = gens[0]
        m = len(members)
        local[members] = np.arange(m)
        slack = int(local[slack_bus])
        keep = np.flatnonzero(np.arange(m) != slack)
        # reduced coordinates: the slack row and column are dropped
        red = np.arange(m) - (np.arange(m) > slack)
        br = np.flatnonzero(connected & (labels[from_idx] == k))
        fi = local[from_idx[br]]
        ti = local[to_idx[br]]
        pos = np.arange(len(br))
        rows = np.concatenate([fi, ti, fi, ti])
        cols = np.concatenate([fi, ti, ti, fi])
        sign = np.repeat([1.0, 1.0, -1.0, -1.0], len(br))
        source = np.tile(pos, 4)
        ok = (rows != slack) & (cols != slack)
        flat = red[rows[ok]] * (m - 1) + red[cols[ok]]
        systems.append(IslandSystem(members, slack, br, keep, flat, sign[ok], source[ok]))
    return tuple(systems)


def _solve_spd(B: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Cholesky first; a failed factorization means B is not positive definite
    _, x, info = dposv(B, p)
    if info == 0:
        return x
    return np.linalg.solve(B, p)


def solve_prepared(
    systems: Sequence[IslandSystem],
    injections: np.ndarray,
    from_idx: np.ndarray,
    to_idx: np.ndarray,
    admittance: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """DC flows and realised injections over prepared islands.

    Buses outside every prepared island are de-energized: their injection is
    shed and their branches carry no flow.
    """
    n_bus = len(injections)
    theta = np.zeros(n_bus)
    served = np.zeros(n_bus)
    flows = np.zeros(len(admittance))
    for k, sysk in enumerate(systems):
        members = sysk.members
        p = injections[members].copy()
        p[sysk.slack] -= p.sum()
        served[members] = p
        m = len(members)
        if m == 1:
            continue
        b = admittance[sysk.branches]
        B = np.bincount(sysk.flat, weights=sysk.sign * b[sysk.source], minlength=(m - 1) ** 2)
        try:
            th = _solve_spd(B.reshape(m - 1, m - 1), p[sysk.keep])
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular susceptance matrix in island {k}", island=k) from None
        if not np.all(np.isfinite(th)):
            raise PowerFlowError(f"non-finite angles in island {k}", island=k)
        theta[members[sysk.keep]] = th
        br = sysk.branches
        flows[br] = b * (theta[from_idx[br]] - theta[to_idx[br]])
    return flows, served


def solve_dc_arrays(
    injections: np.ndarray,
    from_idx: np.ndarray,
    to_idx: np.ndarray,
    admittance: np.ndarray,
    labels: np.ndarray,
    n_islands: int,
    generation_mask: np.ndarray,
    reference_index: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Array-level DC power flow over a precomputed island labelling.

    Returns ``(flows, served)``; ``served`` is the realised per-bus injection
    (slack buses carry their island imbalance, de-energized buses are zero).
    Branches with zero admittance carry zero flow.
    """
    systems = prepare_islands(
        labels, n_islands, from_idx, to_idx, admittance > 0, generation_mask, reference_index
    )
    return solve_prepared(systems, injections, from_idx, to_idx, admittance)


def dc_power_flow(
    case: GridCase,
    partition: IslandPartition | None = None,
    injections: np.ndarray | None = None,
) -> np.ndarray:
    """Per-branch DC flows (from -> to positive), in case branch order.

    One slack per generating island: the reference bus if the island holds it,
    otherwise its lowest-id generator bus. The slack absorbs the whole island
    imbalance. Islands without generation are de-energized. HVDC branches are
    excluded from the network matrix and report zero AC flow.
    """
    if partition is None:
        partition = island_decomposition(case)
    labels = np.empty(len(case.buses), dtype=np.intp)
    for k, island in enumerate(partition.islands):
        for bus_id in island:
            labels[case.bus_index[bus_id]] = k
    inj = case.injections if injections is None else np.asarray(injections, dtype=float)
    admittance = np.where(case.ac_mask, case.admittances, 0.0)
    flows, _ = solve_dc_arrays(
        inj,
        case.from_idx,
        case.to_idx,
        admittance,
        labels,
        len(partition),
        case.generation_mask,
        case.reference_index,
    )
    return flows
