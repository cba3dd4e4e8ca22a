"""Acceptance suite: one printed PASS/FAIL line per criterion.

Tolerances are pinned below. Criteria that depend on FACTS behaviour of the
shipped 118-bus case are evaluated as written; a FAIL line there is a genuine
result, not a harness problem.
"""

import math
import time
import warnings

import numpy as np
import pytest

from cascadeid.cascade import Disturbance, run_cascade
from cascadeid.cli import main
from cascadeid.config import load_config
from cascadeid.contingency import CiaConfig, identify, identify_minimum
from cascadeid.devices import (
    HvdcLink,
    RelayState,
    TcscState,
    hvdc_injections,
    relay_step,
    tcsc_relax,
    tcsc_step,
)
from cascadeid.grid_model import dc_power_flow, island_decomposition
from cascadeid.newton_krylov import SolverConfig, gmres_correction, jfnk_solve, jvp
from cascadeid.reporting import read_cia_json, read_sweep_csv

from conftest import (
    ACCEPTANCE_LINES,
    SOLVE_LOG,
    bfs_islands,
    dense_dc_flows,
    quadratic_system,
    random_connected_case,
    well_conditioned,
)

# pinned tolerances and budgets
DC_RESIDUAL = 1e-9
DC_ORACLE = 1e-9
DC_CASES = 200
DC_MAX_BUS = 50
DC_BUDGET_S = 5.0
ISLAND_PATTERNS = 500
HVDC_DRAWS = 1000
HVDC_TOL = 1e-12
TCSC_REL = 0.01
JFNK_EPS_MIN = 1e-8
JFNK_S_MAX = 50
GMRES_REL = 1e-8
FD_DRAWS = 1000
QUAD_TOL = 1e-4
QUAD_BUDGET_S = 1.0
CIA_BUDGET_S = 600.0
SWEEP_POINTS = 50

SCENARIOS = ("ieee118_nofacts_T1", "ieee118_facts_T05", "ieee118_facts_T1")


def report(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def info(text: str) -> None:
    line = f"       {text}"
    print(line)
    ACCEPTANCE_LINES.append(line)


# ---------------------------------------------------------------------------
# shipped-scenario runs, shared by several criteria
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def nofacts_cli(tmp_path_factory):
    """Every CLI verb run twice on the no-FACTS scenario; the first identify is timed."""
    root = tmp_path_factory.mktemp("nofacts_cli")
    cfg = "builtin:ieee118_nofacts_T1"
    runs = {}
    for verb, extra in (("simulate", []), ("sweep", ["--points", str(SWEEP_POINTS)]), ("identify", [])):
        for rep in ("a", "b"):
            out = root / verb / rep
            t0 = time.perf_counter()
            code = main([verb, "--config", cfg, "--out", str(out), *extra])
            runs[verb, rep] = (code, out, time.perf_counter() - t0)
    return runs


@pytest.fixture(scope="session")
def facts_runs():
    """Identification plus the cascade at the identified disturbance, per FACTS scenario."""
    out = {}
    for name in SCENARIOS[1:]:
        cfg = load_config(f"builtin:{name}")
        t0 = time.perf_counter()
        res = identify(cfg.case, cfg.targets, cfg.cia, cfg.engine)
        elapsed = time.perf_counter() - t0
        d = Disturbance(cfg.targets[0], res.best_delta[0], cfg.lower[0], cfg.upper[0])
        out[name] = (cfg, res, run_cascade(cfg.case, d, cfg.engine), elapsed)
    return out


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_dc_power_flow():
    rng = np.random.default_rng(101)
    worst_res = worst_dev = 0.0
    t0 = time.perf_counter()
    for _ in range(DC_CASES):
        n = int(rng.integers(2, DC_MAX_BUS + 1))
        case = random_connected_case(rng, n)
        flows = dc_power_flow(case)
        pos = case.bus_index
        net = np.zeros(n)
        np.add.at(net, [pos[b.from_bus] for b in case.branches], flows)
        np.add.at(net, [pos[b.to_bus] for b in case.branches], -flows)
        slack = pos[case.reference_bus]
        inj = case.injections.copy()
        inj[slack] -= inj.sum()
        worst_res = max(worst_res, float(np.max(np.abs(net - inj))))
        worst_dev = max(worst_dev, float(np.max(np.abs(flows - dense_dc_flows(case)))))
    elapsed = time.perf_counter() - t0
    ok = worst_res <= DC_RESIDUAL and worst_dev <= DC_ORACLE and elapsed < DC_BUDGET_S
    report(
        "dc-power-flow",
        ok,
        f"{DC_CASES} cases, max residual {worst_res:.2e} (<= {DC_RESIDUAL}), "
        f"max oracle deviation {worst_dev:.2e} (<= {DC_ORACLE}), {elapsed:.2f} s (< {DC_BUDGET_S} s)",
    )


def test_islanding():
    rng = np.random.default_rng(202)
    mismatches = 0
    for _ in range(ISLAND_PATTERNS):
        case = random_connected_case(rng, int(rng.integers(2, 51)))
        p = rng.random()
        case = case.trip([br.id for br in case.branches if rng.random() < p])
        ids = [b.id for b in case.buses]
        pos = case.bus_index
        edges = [(pos[br.from_bus], pos[br.to_bus]) for br in case.branches if br.in_service]
        oracle = {frozenset(ids[i] for i in c) for c in bfs_islands(len(ids), edges)}
        mismatches += set(island_decomposition(case).islands) != oracle
    report("islanding", mismatches == 0, f"{ISLAND_PATTERNS} trip patterns, {mismatches} mismatches")


def test_hvdc():
    rng = np.random.default_rng(303)
    worst = 0.0
    drawn = 0
    while drawn < HVDC_DRAWS:
        alpha = rng.uniform(math.pi / 30, math.pi / 2)
        gamma = rng.uniform(math.pi / 12, math.pi / 9)
        r_cr, r_ci, r_l = rng.uniform(0.01, 1.0, 3)
        if abs(r_cr + r_l - r_ci) < 1e-3:
            continue
        p_r, p_i, i_d = hvdc_injections(HvdcLink(1, 2, alpha, gamma, r_cr, r_ci, r_l))
        worst = max(worst, abs(p_r - r_l * i_d**2 - p_i) / max(1.0, abs(p_r)))
        drawn += 1
    a, g, r = math.pi / 15, math.pi / 4, 0.1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        link = HvdcLink(1, 2, a, g, r, r, r)
    p_r, p_i, i_d = hvdc_injections(link)
    k = 3 * math.sqrt(3) / math.pi
    i_ref = k * (math.cos(a) - math.cos(g)) / (r + r - r)
    point = max(
        abs(i_d - i_ref),
        abs(p_r - (k * i_ref * math.cos(a) - r * i_ref**2)),
        abs(p_i - (k * i_ref * math.cos(g) - r * i_ref**2)),
    )
    ok = worst <= HVDC_TOL and point <= HVDC_TOL
    report(
        "hvdc",
        ok,
        f"{HVDC_DRAWS} draws, max identity error {worst:.1e}; parameter point "
        f"I_d={i_d:.3f} P_r={p_r:.3f} P_i={p_i:.3f}, max deviation {point:.1e} (<= {HVDC_TOL})",
    )


def test_tcsc():
    tc = 0.05
    worst = 0.0
    for u0, x0 in [(2.0, 0.0), (5.0, 8.0), (0.5, 0.25), (9.0, 1.0), (1.0, 9.5)]:
        s = TcscState(reactance=x0, x_max=10.0, time_constant=tc)
        for _ in range(1000):
            s = tcsc_relax(s, u0, tc / 100)
        exact = u0 + (x0 - u0) * math.exp(-10.0)
        worst = max(worst, abs(s.reactance - exact) / abs(exact))
    rng = np.random.default_rng(404)
    violations = 0
    for _ in range(300):
        kp, ki, kd = rng.uniform(-1e3, 1e3, 3)
        s = TcscState(x_max=10.0, time_constant=10 ** rng.uniform(-4, 1), kp=kp, ki=ki, kd=kd)
        ref = 10 ** rng.uniform(-6, 2)
        dt = 10 ** rng.uniform(-5, 0)
        flows = rng.choice([-1e6, 1e6, 0.0, ref, -ref]) * rng.choice([1, -1], 200) * rng.random(200)
        for f in flows:
            s = tcsc_step(s, float(f), ref, dt)
            violations += not (s.x_min <= s.reactance <= s.x_max)
    ok = worst <= TCSC_REL and violations == 0
    report("tcsc", ok, f"max relative error after 10 T_C {worst:.2e} (<= {TCSC_REL}); {violations} clamp violations")


def test_relay():
    def first_trip(flows, preset, dt):
        s = RelayState(preset_time=preset, threshold=1.0)
        for k, f in enumerate(flows, start=1):
            s, trip = relay_step(s, f, dt)
            if trip:
                return k
        return None

    def counted(flows, preset, dt):
        run = 0
        for k, f in enumerate(flows, start=1):
            run = run + 1 if f > 1.0 else 0
            if run > round(preset / dt):
                return k
        return None

    bad = 0
    cases = 0
    for preset in (0.25, 0.5, 1.0, 2.0):
        for dt in (0.005, 0.01, 0.05):
            sustained = [1.2] * (int(round(preset / dt)) + 10)
            cases += 1
            bad += first_trip(sustained, preset, dt) != counted(sustained, preset, dt)
            # a partial overload, one clear substep, then a sustained overload
            n = int(round(preset / dt))
            head = n // 2
            cleared = [1.2] * head + [0.5] + sustained
            cases += 1
            got = first_trip(cleared, preset, dt)
            bad += got != counted(cleared, preset, dt) or got != head + 1 + n + 1
    step = first_trip([1.2] * 300, 1.0, 0.01)
    ok = bad == 0 and step == 101
    report("relay", ok, f"{cases} sustained/reset cases vs counted-step oracle, {bad} mismatches; T=1, dt=0.01 trips at substep {step}")


def test_jfnk():
    cfg = SolverConfig(eps_min=JFNK_EPS_MIN, max_newton_steps=JFNK_S_MAX)
    scalar = jfnk_solve(lambda z: z**2 - 2.0, np.array([1.0]), cfg)
    S2 = lambda z: np.array([z[0] ** 2 + z[1] ** 2 - 4.0, z[0] * z[1] - 1.0])
    quad = jfnk_solve(S2, np.array([2.0, 0.5]), cfg)
    rng = np.random.default_rng(505)
    A = well_conditioned(rng, 20)
    b = rng.normal(size=20) * 3.0
    lin = jfnk_solve(lambda z: A @ z - b, np.zeros(20), cfg)
    x = np.linalg.solve(A, b)
    g = gmres_correction(lambda z: A @ z - b, np.zeros(20), SolverConfig(step_cap=1e6))
    g_rel = float(np.linalg.norm(A @ g.step - b) / np.linalg.norm(b))
    errs = (
        abs(scalar.z[0] - math.sqrt(2.0)),
        float(np.max(np.abs(quad.z - [math.sqrt(2 + math.sqrt(3)), math.sqrt(2 - math.sqrt(3))]))),
        float(np.max(np.abs(lin.z - x))),
    )
    runs = (scalar, quad, lin)
    ok = all(r.converged and r.steps <= JFNK_S_MAX for r in runs) and max(errs) <= 1e-6 and g_rel <= GMRES_REL
    report(
        "jfnk",
        ok,
        "steps (scalar, 2-d, 20-d) = "
        + ", ".join(str(r.steps) for r in runs)
        + f", all eps_s <= {JFNK_EPS_MIN}; solution errors {max(errs):.1e}; GMRES relative residual {g_rel:.1e} (<= {GMRES_REL})",
    )


def test_fd_jvp_bound():
    rng = np.random.default_rng(606)
    u = np.finfo(float).eps
    violations = 0
    worst = 0.0
    for _ in range(FD_DRAWS):
        n = int(rng.integers(1, 8))
        S, J, hess = quadratic_system(rng, n)
        z = rng.normal(size=n) * rng.uniform(0.1, 10.0)
        r = rng.normal(size=n) * rng.uniform(0.01, 10.0)
        eps = 10 ** rng.uniform(-4, 0)
        err = float(np.linalg.norm(jvp(S, z, r, eps) - J(z) @ r))
        bound = eps * float(r @ r) / 2 * hess
        rounding = 8 * u * (np.linalg.norm(S(z + eps * r)) + np.linalg.norm(S(z))) / eps
        worst = max(worst, err / (bound + rounding))
        violations += err > bound * (1 + 1e-9) + rounding
    report("fd-jvp-bound", violations == 0, f"{FD_DRAWS} draws, {violations} violations, max error/bound {worst:.3f}")


def test_cia_quadratic():
    cfg = CiaConfig([0.0], [10.0], l_max=1, gradient_eps=1e-6)
    t0 = time.perf_counter()
    res = identify_minimum(lambda d: float((d[0] - 5.0) ** 2), cfg)
    elapsed = time.perf_counter() - t0
    best = res.best_costs
    monotone = all(b <= a for a, b in zip(best, best[1:])) and best[0] <= res.reference_cost
    err = abs(res.best_delta[0] - 5.0)
    ok = err <= QUAD_TOL and monotone and elapsed < QUAD_BUDGET_S
    report("cia-quadratic", ok, f"|delta*-5| = {err:.1e} (<= {QUAD_TOL}), best-J record monotone: {monotone}, {elapsed:.3f} s (< {QUAD_BUDGET_S} s)")


@pytest.mark.slow
def test_cia_vs_sweep(nofacts_cli, facts_runs):
    code_i, out_i, elapsed = nofacts_cli["identify", "a"]
    code_s, out_s, _ = nofacts_cli["sweep", "a"]
    assert code_i == 0 and code_s == 0
    res = read_cia_json(out_i / "cia_result.json")
    rows = read_sweep_csv(out_s / "sweep.csv")
    J = np.array([r[1] for r in rows], dtype=float)
    k = int(np.argmin(J))
    # one grid cell: the worse of the two sweep neighbours of the sweep minimizer
    slack_to = max(J[max(k - 1, 0)], J[min(k + 1, len(J) - 1)])
    ok = res["best_cost"] <= slack_to and elapsed < CIA_BUDGET_S
    report(
        "cia-vs-sweep",
        ok,
        f"no-FACTS T=1: identify J={res['best_cost']:.4f} at delta={res['best_delta'][0]:.4f}; "
        f"sweep min J={J[k]:.4f} at delta={rows[k][0]:.4f}, one-cell bound {slack_to:.4f}; identify {elapsed:.1f} s (< {CIA_BUDGET_S:.0f} s)",
    )
    for name, (cfg, fres, _, t) in facts_runs.items():
        g = np.linspace(cfg.lower[0], cfg.upper[0], SWEEP_POINTS)
        Js = [run_cascade(cfg.case, Disturbance(cfg.targets[0], float(v), cfg.lower[0], cfg.upper[0]), cfg.engine).cost for v in g]
        info(f"{name}: identify J={fres.best_cost:.4f} at delta={fres.best_delta[0]:.4f} ({t:.1f} s); sweep min J={min(Js):.4f}")


@pytest.mark.slow
def test_qualitative_118(nofacts_cli, facts_runs):
    cfg0 = load_config("builtin:ieee118_nofacts_T1")
    res0 = read_cia_json(nofacts_cli["identify", "a"][1] / "cia_result.json")
    d0 = res0["best_delta"][0]
    out0 = run_cascade(cfg0.case, Disturbance(8, d0, 0.0, 37.45), cfg0.engine)
    upper = cfg0.upper[0]
    _, res05, out05, _ = facts_runs["ieee118_facts_T05"]
    _, res1, out1, _ = facts_runs["ieee118_facts_T1"]
    a = d0 >= upper
    b = res05.best_delta[0] < upper and res1.best_delta[0] < upper
    c = out1.outage_count < out05.outage_count < out0.outage_count
    d = res0["best_cost"] < res05.best_cost and res0["best_cost"] < res1.best_cost
    info(f"(a) no-FACTS identified delta {d0:.4f} reaches upper {upper}: {a}")
    info(f"(b) FACTS identified delta T=0.5 {res05.best_delta[0]:.4f}, T=1 {res1.best_delta[0]:.4f}, both < {upper}: {b}")
    info(f"(c) outages FACTS/T=1 {out1.outage_count} < FACTS/T=0.5 {out05.outage_count} < no-FACTS {out0.outage_count}: {c}")
    info(f"(d) no-FACTS J {res0['best_cost']:.4f} < FACTS J (T=0.5 {res05.best_cost:.4f}, T=1 {res1.best_cost:.4f}): {d}")
    report("qualitative-118", a and b and c and d, f"(a) {a}, (b) {b}, (c) {c}, (d) {d}")


@pytest.mark.slow
def test_determinism(nofacts_cli, tmp_path):
    def tree(root):
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    same = {}
    for verb in ("simulate", "sweep", "identify"):
        (ca, a, _), (cb, b, _) = nofacts_cli[verb, "a"], nofacts_cli[verb, "b"]
        same[verb] = ca == cb == 0 and tree(a) == tree(b) and bool(tree(a))
    # the synthetic identify path with traces, too
    qa, qb = tmp_path / "qa", tmp_path / "qb"
    for out in (qa, qb):
        main(["identify", "--config", "builtin:quadratic", "--out", str(out), "--trace"])
    same["identify (quadratic, traces)"] = tree(qa) == tree(qb) and bool(tree(qa))
    report("determinism", all(same.values()), ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))


@pytest.mark.runs_last
def test_newton_increment_bound():
    checked = violations = skipped = 0
    worst = 0.0
    for z0, res, cfg in SOLVE_LOG:
        if not res.converged or res.last_step is None:
            skipped += 1
            continue
        bound = cfg.eps_min * (np.linalg.norm(z0) + cfg.step_cap * cfg.max_newton_steps)
        step = float(np.linalg.norm(res.last_step))
        worst = max(worst, step / bound)
        violations += step > bound
        checked += 1
    ok = checked > 0 and violations == 0
    report(
        "newton-increment-bound",
        ok,
        f"{checked} terminating solves checked ({skipped} stopped at s_max), {violations} violations, max increment/bound {worst:.3f}",
    )
