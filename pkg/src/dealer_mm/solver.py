"""Backward implicit Euler solver for the market maker's value function.

The scheme is monotone: quote terms use one-sided jump differences
``(theta(q) - theta(q +/- z)) / z`` through nonincreasing Hamiltonians, and
the execution term is split into a buy part on the forward difference and a
sell part on the backward difference (Godunov upwinding).  Each implicit
step is a nonlinear system solved by damped Picard iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .hamiltonians import RampFunction, bar_hamiltonian, quote_hamiltonian
from .model import ModelParams, running_penalty, terminal_penalty

log = logging.getLogger(__name__)

ZERO_RATE_TOL = 1e-9


class SolverError(RuntimeError):
    """Inner iteration failed to reach tolerance."""

    def __init__(self, message, time_index=None, residual=None):
        super().__init__(message)
        self.time_index = time_index
        self.residual = residual


@dataclass(frozen=True)
class SolverSettings:
    n_steps: int = 500
    tol: float = 1e-10
    max_iter: int = 500
    damping: float = 0.5

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class InventoryGrid:
    q_nodes: np.ndarray
    step: float

    @classmethod
    def uniform(cls, q_max: float, n_nodes: int = 201) -> "InventoryGrid":
        if n_nodes < 3 or n_nodes % 2 == 0:
            raise ValueError("n_nodes must be odd and >= 3 so that 0 is a node")
        half = (n_nodes - 1) // 2
        step = q_max / half
        q = step * np.arange(-half, half + 1, dtype=float)
        q[0], q[-1], q[half] = -q_max, q_max, 0.0
        return cls(q, step)

    @property
    def size(self) -> int:
        return len(self.q_nodes)

    @property
    def q_max(self) -> float:
        return float(self.q_nodes[-1])

    def offsets(self, sizes) -> list[int]:
        """Node offsets of each trade size; every size must sit on the lattice."""
        out = []
        for z in sizes:
            m = round(z / self.step)
            if m < 1 or abs(m * self.step - z) > 1e-9 * max(1.0, z):
                raise ValueError(f"trade size {z} is not a multiple of the grid step {self.step}")
            out.append(int(m))
        return out

    def index_of(self, q: float) -> int:
        """Nearest node index."""
        i = int(round((q + self.q_max) / self.step))
        return min(max(i, 0), self.size - 1)


@dataclass
class StepDiagnostics:
    time_index: int
    iterations: int
    residual: float


@dataclass
class ValueSurface:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), n_nodes)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.time_index(t)]

    def time_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


@dataclass
class PolicyTable:
    q_nodes: np.ndarray
    sizes: tuple[float, ...]
    bid_quotes: np.ndarray  # (n_nodes, n_sizes); NaN where the fill is inadmissible
    ask_quotes: np.ndarray
    exec_rate: np.ndarray
    snapshot_time: float


@dataclass(frozen=True)
class InternalizationZone:
    q_low: float
    q_high: float
    width: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.q_low + self.q_high)

    def contains(self, q: float) -> bool:
        return self.width > 0 and self.q_low <= q <= self.q_high


class Scheme:
    """Discrete Hamiltonian operator on a fixed grid.

    ``operator(theta)`` returns, per node, ``-psi(q)`` plus the jump and
    execution Hamiltonian terms, so the implicit step reads
    ``theta_now = theta_next + dt * operator(theta_now)``.
    """

    def __init__(self, params: ModelParams, grid: InventoryGrid, ramp: RampFunction | None = None):
        if abs(grid.q_max - params.q_max) > 1e-9 * params.q_max:
            raise ValueError("grid does not span [-q_max, q_max]")
        self.params = params
        self.grid = grid
        self.ramp = ramp or RampFunction(grid.step)
        n = grid.size
        q = grid.q_nodes
        self.psi = running_penalty(params, q)
        self.buy_gate = self.ramp(params.q_max - q)
        self.sell_gate = self.ramp(params.q_max + q)
        self.kq = params.impact_k * q

        src, dst, z, w = [], [], [], []
        for m, zk, pk in zip(grid.offsets(params.sizes.sizes), params.sizes.sizes, params.sizes.probs):
            idx = np.arange(n - m)
            src.append(idx), dst.append(idx + m)
            z.append(np.full(n - m, zk)), w.append(np.full(n - m, pk * zk))
        # bid fills move q up by z, ask fills move q down by z
        self.bid_src = np.concatenate(src)
        self.bid_dst = np.concatenate(dst)
        self.jump_z = np.concatenate(z)
        self.jump_w = np.concatenate(w)
        self.ask_src, self.ask_dst = self.bid_dst, self.bid_src

    def bid_args(self, theta):
        return (theta[self.bid_src] - theta[self.bid_dst]) / self.jump_z

    def ask_args(self, theta):
        return (theta[self.ask_src] - theta[self.ask_dst]) / self.jump_z

    def one_sided(self, theta):
        """Forward and backward differences plus the impact shift ``k q``."""
        h = self.grid.step
        d = np.diff(theta) / h
        fwd = np.append(d, 0.0) + self.kq
        bwd = np.insert(d, 0, 0.0) + self.kq
        return fwd, bwd

    def operator(self, theta: np.ndarray) -> np.ndarray:
        p = self.params
        n = self.grid.size
        hb = quote_hamiltonian(p.bid_curve, p.delta_floor, self.bid_args(theta)).hamiltonian_value
        ha = quote_hamiltonian(p.ask_curve, p.delta_floor, self.ask_args(theta)).hamiltonian_value
        jumps = np.bincount(self.bid_src, self.jump_w * hb, minlength=n)
        jumps += np.bincount(self.ask_src, self.jump_w * ha, minlength=n)
        fwd, bwd = self.one_sided(theta)
        buy, _ = bar_hamiltonian(p.cost, np.maximum(fwd, 0.0))
        sell, _ = bar_hamiltonian(p.cost, np.minimum(bwd, 0.0))
        return jumps + self.buy_gate * buy + self.sell_gate * sell - self.psi

    def exec_rate(self, theta: np.ndarray) -> np.ndarray:
        fwd, bwd = self.one_sided(theta)
        _, v_buy = bar_hamiltonian(self.params.cost, np.maximum(fwd, 0.0))
        _, v_sell = bar_hamiltonian(self.params.cost, np.minimum(bwd, 0.0))
        return self.buy_gate * v_buy + self.sell_gate * v_sell

    def terminal(self) -> np.ndarray:
        return -terminal_penalty(self.params, self.grid.q_nodes)


def step_implicit(
    theta_next: np.ndarray,
    dt: float,
    scheme: Scheme,
    settings: SolverSettings = SolverSettings(),
    time_index: int | None = None,
    guess: np.ndarray | None = None,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One backward implicit Euler step by damped fixed-point iteration.

    ``guess`` only seeds the iteration; the converged slice does not depend on it
    beyond the tolerance.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not np.all(np.isfinite(theta_next)):
        raise ValueError("theta_next has non-finite entries")
    omega = settings.damping
    theta = theta_next.copy() if guess is None else np.array(guess, dtype=float)
    residual = math.inf
    for it in range(1, settings.max_iter + 1):
        target = theta_next + dt * scheme.operator(theta)
        gap = target - theta
        residual = float(np.max(np.abs(gap)))
        if residual < settings.tol:
            return theta, StepDiagnostics(time_index if time_index is not None else -1, it - 1, residual)
        theta = theta + omega * gap
    raise SolverError(
        f"implicit step did not converge in {settings.max_iter} iterations (residual {residual:.3e})",
        time_index=time_index,
        residual=residual,
    )


def solve(
    params: ModelParams,
    grid: InventoryGrid,
    n_steps: int | None = None,
    settings: SolverSettings | None = None,
    ramp: RampFunction | None = None,
    terminal: np.ndarray | None = None,
) -> ValueSurface:
    """Solve backward from ``theta(T, q) = -ell(q)`` (or a supplied terminal slice)."""
    settings = settings or SolverSettings()
    if n_steps is not None:
        settings = SolverSettings(n_steps, settings.tol, settings.max_iter, settings.damping)
    n_steps = settings.n_steps
    scheme = Scheme(params, grid, ramp)
    dt = params.horizon_T / n_steps
    times = np.linspace(0.0, params.horizon_T, n_steps + 1)
    values = np.empty((n_steps + 1, grid.size))
    values[-1] = scheme.terminal() if terminal is None else np.asarray(terminal, dtype=float)
    diagnostics = []
    for j in range(n_steps - 1, -1, -1):
        guess = 2.0 * values[j + 1] - values[j + 2] if j + 2 <= n_steps else None
        values[j], diag = step_implicit(values[j + 1], dt, scheme, settings, time_index=j, guess=guess)
        diagnostics.append(diag)
    diagnostics.reverse()
    log.debug("solved %d steps, max inner iterations %d", n_steps, max(d.iterations for d in diagnostics))
    return ValueSurface(times, values, diagnostics)


def extract_policy(surface: ValueSurface, params: ModelParams, grid: InventoryGrid, t: float = 0.0,
                   ramp: RampFunction | None = None) -> PolicyTable:
    """Optimal quotes per (node, size) and gated execution rate at time ``t``."""
    if not 0.0 <= t < params.horizon_T:
        raise ValueError(f"policy time must lie in [0, {params.horizon_T}), got {t}")
    scheme = Scheme(params, grid, ramp)
    theta = surface.slice_at(t)
    n, sizes = grid.size, params.sizes.sizes
    bid = np.full((n, len(sizes)), np.nan)
    ask = np.full((n, len(sizes)), np.nan)
    col = np.concatenate([np.full(n - m, k) for k, m in enumerate(grid.offsets(sizes))])
    if params.bid_curve.lambda_max > 0:
        bid[scheme.bid_src, col] = quote_hamiltonian(params.bid_curve, params.delta_floor,
                                                     scheme.bid_args(theta)).delta_star
    if params.ask_curve.lambda_max > 0:
        ask[scheme.ask_src, col] = quote_hamiltonian(params.ask_curve, params.delta_floor,
                                                     scheme.ask_args(theta)).delta_star
    return PolicyTable(grid.q_nodes.copy(), sizes, bid, ask, scheme.exec_rate(theta),
                       float(surface.times[surface.time_index(t)]))


def stationarity_gap(surface: ValueSurface, params: ModelParams, grid: InventoryGrid,
                     ramp: RampFunction | None = None) -> float:
    """Sup-distance between the controls at ``t = 0`` and ``t = T/2``.

    Rates are converted to bps-comparable units by the factor ``step / v_max``.
    """
    a = extract_policy(surface, params, grid, 0.0, ramp)
    b = extract_policy(surface, params, grid, 0.5 * params.horizon_T, ramp)
    gaps = [0.0]
    for qa, qb in ((a.bid_quotes, b.bid_quotes), (a.ask_quotes, b.ask_quotes)):
        d = np.abs(qa - qb)
        if np.any(np.isfinite(d)):
            gaps.append(float(np.nanmax(d)))
    gaps.append(float(np.max(np.abs(a.exec_rate - b.exec_rate))) * grid.step / params.cost.v_max)
    return max(gaps)


def internalization_zone(policy: PolicyTable, grid: InventoryGrid, tol: float = ZERO_RATE_TOL) -> InternalizationZone:
    """Zero-rate plateau around the sign change of the execution rate.

    Each plateau node stands for a cell of width ``step``, so the zone spans
    half a step beyond its outermost nodes and ``width = count * step``.
    """
    rate, q, h = policy.exec_rate, grid.q_nodes, grid.step
    zero = np.abs(rate) <= tol
    runs = []
    i = 0
    while i < len(rate):
        if zero[i]:
            j = i
            while j + 1 < len(rate) and zero[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    if runs:
        def brackets(run):
            a, b = run
            return (a == 0 or rate[a - 1] > 0) and (b == len(rate) - 1 or rate[b + 1] < 0)

        candidates = [r for r in runs if brackets(r)] or runs
        a, b = max(candidates, key=lambda r: (r[1] - r[0], -min(abs(q[r[0]]), abs(q[r[1]]))))
        return InternalizationZone(float(q[a] - h / 2), float(q[b] + h / 2), float((b - a + 1) * h))
    # no plateau: report the interpolated zero crossing
    crossing = np.nonzero((rate[:-1] > 0) & (rate[1:] < 0))[0]
    if len(crossing):
        i = int(crossing[np.argmin(np.abs(q[crossing]))])
        x = q[i] + h * rate[i] / (rate[i] - rate[i + 1])
    else:
        x = q[0] if rate[0] < 0 else q[-1]
    return InternalizationZone(float(x), float(x), 0.0)
