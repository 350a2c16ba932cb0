"""Monte Carlo replay of the market making dynamics under a fixed policy.

Fills are generated by fixed-step Bernoulli thinning: in each step of
length ``dt_sim`` at most one request (side, size bucket) is filled, with
probability ``p^k * intensity(quote) * dt_sim``.  The policy is read at the
nearest inventory node.  Two objectives are accumulated on the same paths:

* full: ``x_T + q_T s_T - ell(q_T) - int psi(q) dt`` from cash, price and inventory;
* reduced: the post-Ito integrand (expected quote revenue, impact drift
  ``k q w``, execution cost, running penalty) minus ``ell(q_T)``, which
  needs no price path.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import ModelParams, intensity_eval
from .solver import PolicyTable


class SimulationError(RuntimeError):
    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    dt_sim: float = 1e-5
    seed: int = 20210601
    start_inventories: tuple[float, ...] = (0.0,)
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "start_inventories", tuple(float(q) for q in self.start_inventories))
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"SimConfig.n_paths must be a positive integer, got {self.n_paths}")
        if not (math.isfinite(self.dt_sim) and self.dt_sim > 0):
            raise ValueError(f"SimConfig.dt_sim must be > 0, got {self.dt_sim}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("SimConfig.seed must be a 64-bit unsigned integer")
        if not self.start_inventories:
            raise ValueError("SimConfig.start_inventories must be non-empty")
        if self.threads < 1:
            raise ValueError("SimConfig.threads must be >= 1")

    def validate_against(self, params: ModelParams) -> None:
        share = max(params.sizes.probs)
        for side, curve in (("bid", params.bid_curve), ("ask", params.ask_curve)):
            if curve.lambda_max * self.dt_sim * share >= 0.1:
                raise ValueError(
                    f"SimConfig.dt_sim too large for the {side} intensity: "
                    f"lambda_max*dt_sim*max(p)={curve.lambda_max * self.dt_sim * share:.3g} >= 0.1"
                )
        for q0 in self.start_inventories:
            if abs(q0) > params.q_max:
                raise ValueError(f"start inventory {q0} outside [-{params.q_max}, {params.q_max}]")


@dataclass
class PathState:
    t: float
    q: float
    x: float
    s: float
    accrued_psi: float


@dataclass
class PathResult:
    state: PathState
    objective: float
    reduced_objective: float
    internalized: float
    externalized: float
    fills: np.ndarray  # (2, n_sizes) bid/ask fill counts


@dataclass
class SimEstimate:
    q0: float
    mean_objective: float
    std_error: float
    n_paths: int
    mean_internalized_notional: float
    mean_externalized_notional: float


@dataclass
class SimStats:
    estimates: list[SimEstimate] = field(default_factory=list)

    def by_q0(self, q0: float) -> SimEstimate:
        for e in self.estimates:
            if abs(e.q0 - q0) < 1e-12:
                return e
        raise KeyError(q0)


@njit(cache=True, nogil=True)
def _path_kernel(q0, uniforms, normals, dt, q_lo, h, fill_prob, quote, rev_rate, rate,
                 sizes, sigma, k, eta, phi, half_gamma_sigma2, q_max, out, fills):
    n_nodes = rate.shape[0]
    n_sizes = sizes.shape[0]
    q = q0
    x = 0.0
    s = 0.0
    psi_acc = 0.0
    reduced = 0.0
    internal = 0.0
    external = 0.0
    sq = sigma * math.sqrt(dt)
    for j in range(uniforms.shape[0]):
        i = int(math.floor((q - q_lo) / h + 0.5))
        if i < 0:
            i = 0
        elif i > n_nodes - 1:
            i = n_nodes - 1
        # expected quote revenue over the step, gated at the actual inventory
        u = uniforms[j]
        cum = 0.0
        hit = -1
        for c in range(2 * n_sizes):
            z = sizes[c % n_sizes]
            if c < n_sizes:
                ok = q + z <= q_max + 1e-9
            else:
                ok = q - z >= -q_max - 1e-9
            if ok:
                reduced += rev_rate[i, c] * dt
                cum += fill_prob[i, c]
                if hit < 0 and u < cum:
                    hit = c
        if hit >= 0:
            z = sizes[hit % n_sizes]
            d = quote[i, hit]
            if hit < n_sizes:
                q += z
                x -= z * (s - d)
            else:
                q -= z
                x += z * (s + d)
            fills[hit // n_sizes, hit % n_sizes] += 1
            internal += z
        w = rate[i]
        q_new = q + w * dt
        if q_new > q_max:
            q_new = q_max
        elif q_new < -q_max:
            q_new = -q_max
        w = (q_new - q) / dt
        cost = eta * w * w + phi * abs(w)
        s_new = s + sq * normals[j] + k * w * dt
        x -= (w * 0.5 * (s + s_new) + cost) * dt
        psi_step = half_gamma_sigma2 * 0.5 * (q * q + q_new * q_new) * dt
        psi_acc += psi_step
        reduced += (k * w * 0.5 * (q + q_new) - cost) * dt - psi_step
        external += abs(w) * dt
        q = q_new
        s = s_new
        if q > q_max + 1e-9 or q < -q_max - 1e-9:
            return -1
    ell = 0.5 * k * q * q
    out[0] = q
    out[1] = x
    out[2] = s
    out[3] = psi_acc
    out[4] = x + q * s - ell - psi_acc
    out[5] = reduced - ell
    out[6] = internal
    out[7] = external
    return 0


class _Tables:
    """Per-node fill probabilities and revenue rates precomputed from a policy."""

    def __init__(self, policy: PolicyTable, params: ModelParams, dt: float):
        q = np.asarray(policy.q_nodes, dtype=float)
        if len(q) < 2:
            raise SimulationError("policy grid needs at least two nodes")
        h = (q[-1] - q[0]) / (len(q) - 1)
        if (abs(q[0] + params.q_max) > 1e-9 * params.q_max or abs(q[-1] - params.q_max) > 1e-9 * params.q_max
                or np.max(np.abs(np.diff(q) - h)) > 1e-9 * h):
            raise SimulationError("policy grid must be uniform on [-q_max, q_max] to cover every reachable node")
        sizes = np.asarray(params.sizes.sizes, dtype=float)
        probs = np.asarray(params.sizes.probs, dtype=float)
        if policy.bid_quotes.shape != (len(q), len(sizes)) or policy.ask_quotes.shape != (len(q), len(sizes)):
            raise SimulationError("policy quote tables do not match the size grid")
        quote = np.concatenate([policy.bid_quotes, policy.ask_quotes], axis=1)
        valid = np.isfinite(quote)
        safe = np.where(valid, quote, 0.0)
        lam = np.concatenate([
            intensity_eval(params.bid_curve, safe[:, : len(sizes)]),
            intensity_eval(params.ask_curve, safe[:, len(sizes):]),
        ], axis=1)
        lam = np.where(valid, lam, 0.0)
        pz = np.concatenate([probs, probs])
        zz = np.concatenate([sizes, sizes])
        self.fill_prob = np.ascontiguousarray(pz * lam * dt)
        if np.max(self.fill_prob.sum(axis=1)) >= 1.0:
            raise SimulationError("per-step fill probability reaches 1; reduce dt_sim")
        self.rev_rate = np.ascontiguousarray(pz * lam * zz * safe)
        self.quote = np.ascontiguousarray(safe)
        self.rate = np.ascontiguousarray(np.clip(policy.exec_rate, -params.cost.v_max, params.cost.v_max), dtype=float)
        self.q_lo = float(q[0])
        self.h = float(h)
        self.sizes = sizes


def _path_randoms(seed: int, path_index: int, n_steps: int):
    rng = np.random.default_rng([int(seed), int(path_index)])
    return rng.random(n_steps), rng.standard_normal(n_steps)


def _n_steps(params: ModelParams, config: SimConfig) -> int:
    n = int(round(params.horizon_T / config.dt_sim))
    if n < 1 or abs(n * config.dt_sim - params.horizon_T) > 1e-9 * params.horizon_T:
        raise ValueError("dt_sim must divide the horizon T")
    return n


def _run(tables, params, dt, q0, uniforms, normals):
    out = np.empty(8)
    fills = np.zeros((2, len(tables.sizes)), dtype=np.int64)
    status = _path_kernel(
        float(q0), uniforms, normals, dt, tables.q_lo, tables.h, tables.fill_prob, tables.quote,
        tables.rev_rate, tables.rate, tables.sizes, params.sigma, params.impact_k, params.cost.eta,
        params.cost.phi, 0.5 * params.gamma * params.sigma**2, params.q_max, out, fills,
    )
    return status, out, fills


def simulate_path(policy: PolicyTable, params: ModelParams, config: SimConfig, path_seed: int,
                  q0: float | None = None) -> PathResult:
    """Simulate one path from ``q0`` (default: first start inventory)."""
    dt = config.dt_sim
    n = _n_steps(params, config)
    tables = _Tables(policy, params, dt)
    q0 = config.start_inventories[0] if q0 is None else q0
    u, g = _path_randoms(config.seed, path_seed, n)
    status, out, fills = _run(tables, params, dt, q0, u, g)
    if status != 0:
        raise SimulationError("inventory left the risk limits", path_index=path_seed)
    state = PathState(t=n * dt, q=out[0], x=out[1], s=out[2], accrued_psi=out[3])
    return PathResult(state, out[4], out[5], out[6], out[7], fills)


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = len(samples)
    mean = math.fsum(samples) / n
    if n < 2:
        return mean, math.inf
    var = math.fsum((samples - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def run_paths(policy: PolicyTable, params: ModelParams, config: SimConfig) -> dict[str, np.ndarray]:
    """Raw per-path samples, shape ``(n_starts, n_paths)`` for each quantity.

    Path ``j`` uses the same random numbers for every start inventory.
    """
    config.validate_against(params)
    dt = config.dt_sim
    n = _n_steps(params, config)
    tables = _Tables(policy, params, dt)
    starts = config.start_inventories
    full = np.empty((len(starts), config.n_paths))
    reduced = np.empty_like(full)
    internal = np.empty_like(full)
    external = np.empty_like(full)

    def work(chunk):
        for j in chunk:
            u, g = _path_randoms(config.seed, j, n)
            for a, q0 in enumerate(starts):
                status, out, _ = _run(tables, params, dt, q0, u, g)
                if status != 0:
                    raise SimulationError(f"path {j} from q0={q0} left the risk limits", path_index=j)
                full[a, j], reduced[a, j], internal[a, j], external[a, j] = out[4], out[5], out[6], out[7]

    chunks = np.array_split(np.arange(config.n_paths), config.threads)
    if config.threads == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(config.threads) as pool:
            for fut in [pool.submit(work, c) for c in chunks]:
                fut.result()
    return {"full": full, "reduced": reduced, "internalized": internal, "externalized": external}


def _stats(samples: dict[str, np.ndarray], key: str, config: SimConfig) -> SimStats:
    stats = SimStats()
    for a, q0 in enumerate(config.start_inventories):
        mean, se = _mean_se(samples[key][a])
        stats.estimates.append(SimEstimate(
            q0=q0, mean_objective=mean, std_error=se, n_paths=config.n_paths,
            mean_internalized_notional=math.fsum(samples["internalized"][a]) / config.n_paths,
            mean_externalized_notional=math.fsum(samples["externalized"][a]) / config.n_paths,
        ))
    return stats


def estimate_value(policy: PolicyTable, params: ModelParams, config: SimConfig) -> SimStats:
    """Mean and standard error of the full objective per start inventory."""
    return _stats(run_paths(policy, params, config), "full", config)


def estimate_value_reduced(policy: PolicyTable, params: ModelParams, config: SimConfig) -> SimStats:
    """Same paths, reduced-form objective (no price path)."""
    return _stats(run_paths(policy, params, config), "reduced", config)


def estimate_both(policy: PolicyTable, params: ModelParams, config: SimConfig) -> tuple[SimStats, SimStats]:
    """Full and reduced estimates from one pass over shared paths."""
    samples = run_paths(policy, params, config)
    return _stats(samples, "full", config), _stats(samples, "reduced", config)
