"""Regenerate every CSV table: base solve, Monte Carlo check and all sweeps.

Usage: python scripts/reproduce_all.py [--out results] [--threads N] [--quick]
"""

import argparse
import sys
from pathlib import Path

from dealer_mm.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
SWEEPS = ("statics_phi", "statics_impact", "statics_gamma", "statics_lambda", "statics_asymmetric")


def run(argv):
    print("dealer-mm", " ".join(argv), flush=True)
    code = cli(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--quick", action="store_true", help="1000 paths at 5 start inventories instead of 10^4 x 21")
    args = ap.parse_args()
    threads = ["--threads", str(args.threads)]

    base = str(CONFIGS / "base.json")
    run(["solve", "--config", base, "--out", str(args.out / "solve"), *threads])
    mc_config = CONFIGS / ("quick_check.json" if args.quick else "base.json")
    run(["simulate", "--config", str(mc_config), "--policy", str(args.out / "solve" / "policy.csv"),
         "--out", str(args.out / "simulate"), *threads])
    for name in SWEEPS:
        run(["statics", "--config", str(CONFIGS / f"{name}.json"), "--out", str(args.out / name), *threads])


if __name__ == "__main__":
    main()
