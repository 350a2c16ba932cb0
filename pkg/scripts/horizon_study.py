"""Stationarity gap between the t=0 and t=T/2 controls as a function of the horizon.

Keeps dt = T/500 of the base configuration fixed and grows T, printing one
CSV row per horizon.  Shows how long the backward solve must run before the
controls read at t=0 are time-invariant to a given tolerance.
"""

import argparse
import csv
import sys
from pathlib import Path

from dealer_mm.config import load_config
from dealer_mm.solver import solve, stationarity_gap

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "base.json")
    ap.add_argument("--horizons", type=float, nargs="+", default=[0.025, 0.05, 0.075, 0.1])
    args = ap.parse_args()
    cfg = load_config(args.config)
    dt = cfg.model.horizon_T / cfg.solver.n_steps
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["horizon_T", "n_steps", "stationarity_gap"])
    for T in args.horizons:
        params = cfg.model.replace(horizon_T=T)
        n = max(1, round(T / dt))
        surface = solve(params, cfg.grid, n_steps=n, settings=cfg.solver, ramp=cfg.ramp)
        out.writerow([T, n, "%.6g" % stationarity_gap(surface, params, cfg.grid, cfg.ramp)])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
