"""Regenerate src/cascadeid/data/ieee118.case from the MATPOWER case118 tables.

Requires ``pypower`` (only for this script, not for the package)::

    pip install pypower
    python scripts/convert_case118.py > src/cascadeid/data/ieee118.case

Injections are Pg - Pd (per unit, 100 MVA base). Susceptances are 1/x rounded
to 0.01 pu, so the 5-8 transformer carries exactly 37.45 pu. Thresholds are
1.05 x |base flow| with the three HVDC links in place, floored at 1e-3 pu and
rounded up to 1e-6 pu.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np
from pypower.case118 import case118

from cascadeid.cascade import EngineConfig, compute_thresholds
from cascadeid.devices import HvdcLink
from cascadeid.grid_model import Branch, Bus, GridCase, format_case

HVDC_BRANCHES = (4, 16, 38)


def build(tcsc_branches=None) -> GridCase:
    """``tcsc_branches=None`` places a TCSC on every non-HVDC branch."""
    c = case118()
    base = c["baseMVA"]
    gen_buses = {int(g[0]) for g in c["gen"]}
    pg = {}
    for g in c["gen"]:
        pg[int(g[0])] = pg.get(int(g[0]), 0.0) + g[1]
    buses = []
    ref = None
    for row in c["bus"]:
        bid = int(row[0])
        if int(row[1]) == 3:
            kind, ref = "reference", bid
        elif bid in gen_buses:
            kind = "generator"
        else:
            kind = "load"
        buses.append(Bus(bid, kind, round((pg.get(bid, 0.0) - row[2]) / base, 6)))
    branches = []
    for k, row in enumerate(c["branch"], start=1):
        if k in HVDC_BRANCHES:
            dev = "hvdc"
        elif tcsc_branches is None or k in tcsc_branches:
            dev = "tcsc"
        else:
            dev = "none"
        branches.append(
            Branch(k, int(row[0]), int(row[1]), round(1.0 / row[3], 2), math.inf, device=dev)
        )
    case = GridCase(tuple(buses), tuple(branches), base, ref)
    links = tuple(
        (br.id, HvdcLink(br.from_bus, br.to_bus)) for br in case.branches if br.device == "hvdc"
    )
    thr = compute_thresholds(case, EngineConfig(hvdc=links))
    thr = np.where(np.isfinite(thr), np.ceil(thr * 1e6) / 1e6, thr)
    return case.with_thresholds(thr)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument(
        "--tcsc", type=int, nargs="*", default=None, help="branch ids carrying a TCSC (default: all AC)"
    )
    args = ap.parse_args(argv)
    case = build(None if args.tcsc is None else set(args.tcsc))
    sys.stdout.write(
        "# IEEE 118-bus system, DC approximation (converted from MATPOWER case118).\n"
        "# Injections Pg - Pd in pu; susceptance 1/x rounded to 0.01 pu.\n"
        "# Thresholds: 1.05 x |base flow| with HVDC links on branches 4, 16, 38.\n"
        "# Every AC branch carries a TCSC; run with FACTS off to disable them.\n"
    )
    sys.stdout.write(format_case(case))


if __name__ == "__main__":
    main()
