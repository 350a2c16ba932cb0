"""Command line front end: ``solve``, ``simulate`` and ``statics``.

Each command writes CSV tables plus ``resolved_config.json`` (all defaults
materialised, artifact version) into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_sweep_point, load_config
from .simulator import SimulationError, estimate_both
from .solver import (
    PolicyTable,
    SolverError,
    ValueSurface,
    extract_policy,
    internalization_zone,
    solve,
    stationarity_gap,
)
from .tables import read_table, write_table

log = logging.getLogger("dealer_mm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SIMULATION = 4

CONVERGENCE_STRIDE_Q = 5.0


def _size_tag(z: float) -> str:
    return "%g" % z


def _solve(cfg: RunConfig, params=None) -> tuple[ValueSurface, PolicyTable]:
    params = params or cfg.model
    surface = solve(params, cfg.grid, settings=cfg.solver, ramp=cfg.ramp)
    return surface, extract_policy(surface, params, cfg.grid, 0.0, ramp=cfg.ramp)


def solve_tables(cfg: RunConfig, surface: ValueSurface, policy: PolicyTable) -> dict[str, tuple[list, list]]:
    """value_function, exec_rate, quotes, convergence and policy tables for one solve."""
    params, grid = cfg.model, cfg.grid
    q = grid.q_nodes
    tables = {
        "value_function": (["q", "theta0"], [[q[i], surface.values[0, i]] for i in range(grid.size)]),
        "exec_rate": (["q", "v_star"], [[q[i], policy.exec_rate[i]] for i in range(grid.size)]),
    }
    quotes = []
    for i in range(grid.size):
        for side, table in (("ask", policy.ask_quotes), ("bid", policy.bid_quotes)):
            for k, z in enumerate(policy.sizes):
                quotes.append([q[i], side, z, table[i, k]])
    tables["quotes"] = (["q", "side", "size", "delta"], quotes)

    ratio = q / CONVERGENCE_STRIDE_Q
    shown = np.nonzero(np.abs(ratio - np.round(ratio)) < 1e-9)[0]
    if len(shown) == 0:
        shown = np.arange(grid.size)
    z1 = _size_tag(policy.sizes[0])
    rows = []
    for j, t in enumerate(surface.times[:-1]):
        pol = extract_policy(surface, params, grid, float(t), ramp=cfg.ramp)
        for i in shown:
            rows.append([t, q[i], f"bid_{z1}", pol.bid_quotes[i, 0]])
            rows.append([t, q[i], "exec_rate", pol.exec_rate[i]])
    tables["convergence"] = (["t", "q", "control", "value"], rows)

    header = ["q", "theta0", "exec_rate"]
    header += [f"bid_{_size_tag(z)}" for z in policy.sizes] + [f"ask_{_size_tag(z)}" for z in policy.sizes]
    prow = []
    for i in range(grid.size):
        prow.append([q[i], surface.values[0, i], policy.exec_rate[i], *policy.bid_quotes[i], *policy.ask_quotes[i]])
    tables["policy"] = (header, prow)
    return tables


def read_policy(path: str | Path, cfg: RunConfig) -> tuple[PolicyTable, np.ndarray]:
    """Load a ``policy.csv`` written by ``solve``; returns the policy and ``theta(0, q)``."""
    try:
        header, rows = read_table(path)
    except OSError as exc:
        raise SimulationError(f"cannot read policy CSV {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise SimulationError(f"malformed policy CSV: {exc}") from None
    sizes = cfg.model.sizes.sizes
    expected = ["q", "theta0", "exec_rate"] + [f"bid_{_size_tag(z)}" for z in sizes] + [f"ask_{_size_tag(z)}" for z in sizes]
    if header != expected:
        raise SimulationError(f"malformed policy CSV {path}: header {header} does not match {expected}")
    if not rows:
        raise SimulationError(f"malformed policy CSV {path}: no rows")
    try:
        data = np.array(rows, dtype=float)
    except ValueError:
        raise SimulationError(f"malformed policy CSV {path}: non-numeric cell") from None
    if not np.all(np.isfinite(data[:, :3])):
        raise SimulationError(f"malformed policy CSV {path}: q, theta0 and exec_rate must be finite")
    n = len(sizes)
    policy = PolicyTable(data[:, 0], sizes, data[:, 3:3 + n], data[:, 3 + n:3 + 2 * n], data[:, 2], 0.0)
    return policy, data[:, 1]


def mc_check_rows(cfg: RunConfig, policy: PolicyTable, theta0: np.ndarray) -> list[list]:
    full, reduced = estimate_both(policy, cfg.model, cfg.sim)
    grid = cfg.grid
    rows = []
    for ef, er in zip(full.estimates, reduced.estimates):
        pde = float(theta0[grid.index_of(ef.q0)])
        diff = ef.mean_objective - pde
        if math.isinf(ef.std_error) or diff == 0.0:
            z = 0.0  # single-path sentinel: no error estimate
        elif ef.std_error > 0:
            z = diff / ef.std_error
        else:
            z = math.copysign(math.inf, diff)
        rows.append([ef.q0, pde, ef.mean_objective, ef.std_error, z, er.mean_objective, er.std_error])
    rows.sort(key=lambda r: r[0])
    return rows


MC_HEADER = ["q0", "theta_pde", "mc_mean", "mc_stderr", "z_score", "reduced_mean", "reduced_stderr"]
INTERNALIZATION_HEADER = ["parameter", "sweep_value", "q_low", "q_high", "width", "midpoint", "exec_rate_q0"]


def statics_rows(cfg: RunConfig, threads: int = 1) -> list[list]:
    if cfg.sweep is None:
        raise ConfigError(["sweep: the statics command needs a 'sweep' section"])
    grid = cfg.grid

    def one(point):
        params = apply_sweep_point(cfg.model, point)
        try:
            _, policy = _solve(cfg, params)
        except SolverError as exc:
            raise SolverError(f"sweep point {dict(point)} failed: {exc}", exc.time_index, exc.residual) from exc
        zone = internalization_zone(policy, grid)
        return [zone.q_low, zone.q_high, zone.width, zone.midpoint, policy.exec_rate[grid.index_of(0.0)]]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, cfg.sweep.points))
    else:
        results = [one(p) for p in cfg.sweep.points]
    rows = []
    for (name, value), res in zip(cfg.sweep.labels, results):
        cell = float(value) if "/" not in value else value
        rows.append([name, cell, *res])
    if all(isinstance(r[1], float) for r in rows) and len({r[0] for r in rows}) == 1:
        rows.sort(key=lambda r: r[1])
    return rows


def _write_provenance(cfg: RunConfig, out: Path, extra: dict | None = None) -> None:
    doc = cfg.to_dict()
    doc["_provenance"] = {"version": __version__, "defaults_applied": cfg.defaults_applied, **(extra or {})}
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    surface, policy = _solve(cfg)
    gap = stationarity_gap(surface, cfg.model, cfg.grid, cfg.ramp)
    zone = internalization_zone(policy, cfg.grid)
    for name, (header, rows) in solve_tables(cfg, surface, policy).items():
        write_table(out / f"{name}.csv", header, rows)
    summary = {
        "stationarity_gap": gap,
        "zone": {"q_low": zone.q_low, "q_high": zone.q_high, "width": zone.width},
        "max_inner_iterations": max(d.iterations for d in surface.diagnostics),
        "max_inner_residual": max(d.residual for d in surface.diagnostics),
        "v_max_binding_nodes": int(np.sum(np.abs(policy.exec_rate) >= cfg.model.cost.v_max * (1 - 1e-12))),
    }
    _write_provenance(cfg, out, {"solve": summary})
    log.info("stationarity gap %.3e, zone [%g, %g]", gap, zone.q_low, zone.q_high)
    return summary


def cmd_simulate(cfg: RunConfig, out: Path, policy_csv: Path | None = None) -> list[list]:
    if policy_csv is None:
        surface, policy = _solve(cfg)
        theta0 = surface.values[0]
    else:
        policy, theta0 = read_policy(policy_csv, cfg)
    rows = mc_check_rows(cfg, policy, theta0)
    write_table(out / "mc_check.csv", MC_HEADER, rows)
    _write_provenance(cfg, out, {"policy_csv": str(policy_csv) if policy_csv else None})
    return rows


def cmd_statics(cfg: RunConfig, out: Path, threads: int = 1) -> list[list]:
    rows = statics_rows(cfg, threads)
    write_table(out / "internalization.csv", INTERNALIZATION_HEADER, rows)
    _write_provenance(cfg, out)
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dealer-mm", description="Dealer market making with external hedging")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve the value function and write policy tables"),
                        ("simulate", "Monte Carlo check of a policy against the PDE value"),
                        ("statics", "internalization zone across a parameter sweep")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument("--threads", type=int, default=1, help="maximum worker threads")
        if name == "simulate":
            p.add_argument("--policy", type=Path, default=None, help="policy.csv from a previous solve")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError(["--threads must be >= 1"])
        sim = cfg.sim
        if args.seed is not None:
            sim = replace(sim, seed=args.seed)
        cfg.sim = replace(sim, threads=args.threads)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "solve":
            cmd_solve(cfg, args.out)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.out, args.policy)
        else:
            cmd_statics(cfg, args.out, args.threads)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure at time index {exc.time_index}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SimulationError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
