"""Artifact writers and readers.

Every artifact is plain text with a fixed schema, written with the shortest
round-trip float representation so repeated runs are byte-identical.

========================  ==================================================
file                      schema
========================  ==================================================
``outcome.json``          ``{scenario, disturbance, cost, outage_count,
                          terminated_at_step, step_time, end_time,
                          island_count, isolated_buses, islands}``
``timeline.csv``          ``time,branch_id,event`` (event = trip | disturbance)
``outages.csv``           ``time,outages`` cumulative count at each ``t = kT``
``outages.svg``           step plot of ``outages.csv``
``cia_result.json``       ``{scenario, targets, lower, upper, best_delta,
                          best_cost, reference_cost, evaluations, improved,
                          iterations: [...]}``
``cia_iterations.csv``    ``l,candidate,cost`` (candidate components joined by
                          ``;``; empty when the iteration produced none)
``jfnk_trace_l<l>.csv``   ``s,residual_norm,step_norm,epsilon_s``
``sweep.csv``             ``delta,J,outage_count,island_count,error``
========================  ==================================================
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cascade import CascadeOutcome
from .contingency import CiaResult
from .newton_krylov import JfnkResult

TIMELINE_HEADER = ("time", "branch_id", "event")
OUTAGES_HEADER = ("time", "outages")
CIA_HEADER = ("l", "candidate", "cost")
TRACE_HEADER = ("s", "residual_norm", "step_norm", "epsilon_s")
SWEEP_HEADER = ("delta", "J", "outage_count", "island_count", "error")


def _num(x: float | None):
    """JSON-safe float: non-finite values become ``null``."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _read_csv(path: Path, header: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if tuple(r.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: header {r.fieldnames}, expected {list(header)}")
        return list(r)


def _write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# cascade outcome
# ---------------------------------------------------------------------------

def outcome_summary(outcome: CascadeOutcome, scenario: dict | None = None, disturbance=None) -> dict:
    islands = [sorted(isl) for isl in outcome.islands.islands]
    return {
        "scenario": scenario or {},
        "disturbance": disturbance or [],
        "cost": _num(outcome.cost),
        "outage_count": outcome.outage_count,
        "terminated_at_step": outcome.terminated_at_step,
        "step_time": float(outcome.step_time),
        "end_time": round(float(outcome.end_time), 9),
        "island_count": len(islands),
        "isolated_buses": int(outcome.islands.isolated_buses),
        "islands": islands,
    }


def timeline_rows(outcome: CascadeOutcome):
    for ev in outcome.timeline:
        for b in ev.branch_ids:
            yield ev.time, b, ev.event


def outage_series(outcome: CascadeOutcome) -> list[tuple[float, int]]:
    """Cumulative outage count at every cascade-step boundary ``t = kT``."""
    return [(round(k * outcome.step_time, 9), n) for k, n in enumerate(outcome.outages_per_step)]


def write_outcome(outdir: Path, outcome: CascadeOutcome, scenario=None, disturbance=None) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / n for n in ("outcome.json", "timeline.csv", "outages.csv", "outages.svg")]
    _write_json(paths[0], outcome_summary(outcome, scenario, disturbance))
    _write_csv(paths[1], TIMELINE_HEADER, timeline_rows(outcome))
    series = outage_series(outcome)
    _write_csv(paths[2], OUTAGES_HEADER, series)
    paths[3].write_text(render_outage_svg(series))
    return paths


def read_outcome_json(path) -> dict:
    return json.loads(Path(path).read_text())


def read_timeline_csv(path) -> list[tuple[float, int, str]]:
    return [(float(r["time"]), int(r["branch_id"]), r["event"]) for r in _read_csv(path, TIMELINE_HEADER)]


def read_outages_csv(path) -> list[tuple[float, int]]:
    return [(float(r["time"]), int(r["outages"])) for r in _read_csv(path, OUTAGES_HEADER)]


def render_outage_svg(
    series: Sequence[tuple[float, int]], width: int = 480, height: int = 300, title: str = "Outage branches"
) -> str:
    """Minimal step plot of cumulative outages against time."""
    left, right, top, bottom = 50, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom
    t_max = max((t for t, _ in series), default=1.0) or 1.0
    n_max = max((n for _, n in series), default=1) or 1

    def xy(t, n):
        return left + pw * t / t_max, top + ph * (1.0 - n / n_max)

    pts = []
    prev = None
    for t, n in series:
        if prev is not None:
            pts.append(xy(t, prev))
        pts.append(xy(t, n))
        prev = n
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    x0, y0 = left, top + ph
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{top}" stroke="black"/>',
        f'<text x="{x0 + pw / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="11">time (s)</text>',
        f'<text x="{x0 - 6}" y="{y0}" text-anchor="end" font-size="10">0</text>',
        f'<text x="{x0 - 6}" y="{top + 4}" text-anchor="end" font-size="10">{n_max}</text>',
        f'<text x="{x0 + pw}" y="{y0 + 14}" text-anchor="middle" font-size="10">{t_max:g}</text>',
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{path}"/>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# identification
# ---------------------------------------------------------------------------

def _join(values) -> str:
    return "" if values is None else ";".join(repr(float(v)) for v in values)


def _split(text: str) -> tuple[float, ...] | None:
    return None if text == "" else tuple(float(v) for v in text.split(";"))


def cia_summary(result: CiaResult, scenario: dict | None = None, lower=(), upper=()) -> dict:
    return {
        "scenario": scenario or {},
        "targets": list(result.target_branches),
        "lower": list(lower),
        "upper": list(upper),
        "best_delta": list(result.best_delta),
        "best_cost": _num(result.best_cost),
        "reference_cost": _num(result.reference_cost),
        "evaluations": result.evaluations,
        "improved": result.improved,
        "iterations": [
            {
                "l": r.l,
                "start": list(r.start),
                "candidate": None if r.candidate is None else list(r.candidate),
                "cost": _num(r.cost),
                "converged": r.converged,
                "newton_steps": r.newton_steps,
                "feasible": r.feasible,
                "accepted": r.accepted,
                "best_cost": _num(r.best_cost),
                "error": r.error,
            }
            for r in result.records
        ],
    }


def write_cia(outdir: Path, result: CiaResult, scenario=None, lower=(), upper=()) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "cia_result.json", outdir / "cia_iterations.csv"]
    _write_json(paths[0], cia_summary(result, scenario, lower, upper))
    _write_csv(paths[1], CIA_HEADER, ((r.l, _join(r.candidate), r.cost) for r in result.records))
    return paths


def read_cia_json(path) -> dict:
    return json.loads(Path(path).read_text())


def read_cia_csv(path) -> list[tuple[int, tuple[float, ...] | None, float | None]]:
    return [
        (int(r["l"]), _split(r["candidate"]), float(r["cost"]) if r["cost"] else None)
        for r in _read_csv(path, CIA_HEADER)
    ]


def write_trace(path: Path, result: JfnkResult) -> Path:
    _write_csv(path, TRACE_HEADER, result.trace_rows())
    return Path(path)


def read_trace_csv(path) -> list[tuple[int, float, float, float]]:
    return [
        (int(r["s"]), float(r["residual_norm"]), float(r["step_norm"]), float(r["epsilon_s"]))
        for r in _read_csv(path, TRACE_HEADER)
    ]


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def write_sweep(path: Path, rows: Iterable[tuple]) -> Path:
    """Rows are ``(delta, J, outage_count, island_count, error)``; failed points carry
    ``None`` in the numeric columns and a message in ``error``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, SWEEP_HEADER, rows)
    return Path(path)


def read_sweep_csv(path) -> list[tuple[float, float | None, int | None, int | None, str]]:
    out = []
    for r in _read_csv(path, SWEEP_HEADER):
        out.append(
            (
                float(r["delta"]),
                float(r["J"]) if r["J"] else None,
                int(r["outage_count"]) if r["outage_count"] else None,
                int(r["island_count"]) if r["island_count"] else None,
                r["error"],
            )
        )
    return out
