"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import warnings
from collections import deque

import numpy as np
import pytest

from cascadeid import newton_krylov, contingency
from cascadeid.cascade import EngineConfig
from cascadeid.config import load_builtin_case
from cascadeid.devices import HvdcLink
from cascadeid.grid_model import Branch, Bus, GridCase

# Every jfnk_solve run in the session is recorded as (z0, result, config) so the
# increment bound can be checked over all of them.
SOLVE_LOG: list = []

# One line per acceptance criterion, echoed again in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(config, items):
    # checks over everything recorded during the session go last
    last = [it for it in items if it.get_closest_marker("runs_last")]
    items[:] = [it for it in items if not it.get_closest_marker("runs_last")] + last


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True, scope="session")
def _record_solves():
    original = newton_krylov.jfnk_solve

    def recorder(S, z0, config=None):
        res = original(S, z0, config)
        SOLVE_LOG.append((np.array(z0, dtype=float), res, config or newton_krylov.SolverConfig()))
        return res

    mp = pytest.MonkeyPatch()
    mp.setattr(newton_krylov, "jfnk_solve", recorder)
    mp.setattr(contingency, "jfnk_solve", recorder)
    yield
    mp.undo()


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def bfs_islands(n_bus: int, edges) -> list[frozenset[int]]:
    """Connected components by repeated breadth-first reachability (indices)."""
    adj = [[] for _ in range(n_bus)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n_bus
    out = []
    for s in range(n_bus):
        if seen[s]:
            continue
        comp = {s}
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.add(v)
                    q.append(v)
        out.append(frozenset(comp))
    return out


def dense_dc_flows(case: GridCase, injections=None) -> np.ndarray:
    """Island-by-island dense solve of the reduced B matrix, built from scratch."""
    ids = [b.id for b in case.buses]
    pos = {bid: i for i, bid in enumerate(ids)}
    inj = np.array([b.injection for b in case.buses]) if injections is None else np.asarray(injections)
    live = [br for br in case.branches if br.in_service and br.device != "hvdc"]
    comps = bfs_islands(len(ids), [(pos[br.from_bus], pos[br.to_bus]) for br in live])
    theta = np.zeros(len(ids))
    energized = np.zeros(len(ids), dtype=bool)
    for comp in comps:
        members = sorted(comp)
        gens = [i for i in members if case.buses[i].kind != "load"]
        if not gens:
            continue
        energized[members] = True
        ref = pos.get(case.reference_bus)
        slack = ref if ref in comp else gens[0]
        m = len(members)
        loc = {g: k for k, g in enumerate(members)}
        B = np.zeros((m, m))
        for br in live:
            i, j = pos[br.from_bus], pos[br.to_bus]
            if i in comp:
                a, c = loc[i], loc[j]
                B[a, a] += br.susceptance
                B[c, c] += br.susceptance
                B[a, c] -= br.susceptance
                B[c, a] -= br.susceptance
        p = inj[members].astype(float).copy()
        p[loc[slack]] -= p.sum()
        keep = [k for k in range(m) if k != loc[slack]]
        if keep:
            th = np.linalg.solve(B[np.ix_(keep, keep)], p[keep])
            for k, v in zip(keep, th):
                theta[members[k]] = v
    flows = np.zeros(len(case.branches))
    for k, br in enumerate(case.branches):
        i, j = pos[br.from_bus], pos[br.to_bus]
        if br.in_service and br.device != "hvdc" and energized[i]:
            flows[k] = br.susceptance * (theta[i] - theta[j])
    return flows


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def random_connected_case(rng: np.random.Generator, n_bus: int, extra: int | None = None) -> GridCase:
    """Connected random network: a random spanning tree plus ``extra`` chords."""
    ids = rng.permutation(np.arange(1, 3 * n_bus + 1))[:n_bus]
    ids = sorted(int(i) for i in ids)
    order = rng.permutation(n_bus)
    pairs = set()
    for k in range(1, n_bus):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((min(a, b), max(a, b)))
    extra = n_bus // 2 if extra is None else extra
    for _ in range(extra):
        a, b = rng.choice(n_bus, size=2, replace=False)
        pairs.add((int(min(a, b)), int(max(a, b))))
    kinds = ["generator" if rng.random() < 0.4 else "load" for _ in range(n_bus)]
    ref = int(rng.integers(0, n_bus))
    kinds[ref] = "reference"
    inj = rng.uniform(-1.0, 1.0, n_bus).round(6)
    buses = tuple(Bus(ids[i], kinds[i], float(inj[i])) for i in range(n_bus))
    branches = []
    for k, (a, b) in enumerate(sorted(pairs), start=1):
        if rng.random() < 0.5:
            a, b = b, a
        branches.append(Branch(k, ids[a], ids[b], float(rng.uniform(1.0, 20.0)), 1.0))
    return GridCase(buses, tuple(branches), 100.0, ids[ref])


def quadratic_system(rng: np.random.Generator, n: int):
    """Componentwise quadratic ``S`` with its exact Jacobian and a Hessian norm bound."""
    A = rng.normal(size=(n, n, n))
    A = 0.5 * (A + A.transpose(0, 2, 1))  # symmetric Hessian per component
    B = rng.normal(size=(n, n))
    c = rng.normal(size=n)

    def S(z):
        return 0.5 * np.einsum("ijk,j,k->i", A, z, z) + B @ z + c

    def J(z):
        return np.einsum("ijk,k->ij", A, z) + B

    # ||(r^T A_i r)_i|| <= ||r||^2 sqrt(sum_i ||A_i||_2^2)
    hess_norm = float(np.sqrt(sum(np.linalg.norm(A[i], 2) ** 2 for i in range(n))))
    return S, J, hess_norm


def well_conditioned(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(rng.uniform(1.0, 4.0, n)) @ Q.T + 0.3 * rng.normal(size=(n, n)) / np.sqrt(n)


# ---------------------------------------------------------------------------
# shipped case
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def case118() -> GridCase:
    return load_builtin_case("ieee118")


@pytest.fixture(scope="session")
def hvdc_links(case118):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return tuple(
            (br.id, HvdcLink(br.from_bus, br.to_bus)) for br in case118.branches if br.device == "hvdc"
        )


@pytest.fixture(scope="session")
def engine_nofacts(hvdc_links) -> EngineConfig:
    return EngineConfig(relay_time=1.0, facts=False, hvdc=hvdc_links)
