"""Quote and execution Hamiltonians with their maximisers.

For the logistic curve the first-order condition of ``sup_d L(d) (d - p)``
reduces, with ``w = beta (d - p) - 1``, to ``w + log w = x`` where
``x = -1 - alpha - beta p``.  We solve it in ``s = log w`` (convex and
increasing), starting to the right of the root so Newton converges
monotonically; a bisection pass covers anything Newton leaves unresolved.
At the optimum the Hamiltonian equals ``lambda_max * w / beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ExecutionCost, IntensityCurve, ModelParams, intensity_eval

FOC_TOL = 1e-12
_NEWTON_ITERS = 60


@dataclass(frozen=True)
class QuoteSolution:
    delta_star: np.ndarray | float
    hamiltonian_value: np.ndarray | float


@dataclass(frozen=True)
class RampFunction:
    """Piecewise-linear ramp: 0 below 0, 1 above ``epsilon``."""

    epsilon: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"ramp width must be > 0, got {self.epsilon}")

    def __call__(self, x):
        out = np.clip(np.asarray(x, dtype=float) / self.epsilon, 0.0, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.epsilon


def _solve_log_foc(x: np.ndarray) -> np.ndarray:
    """Return ``w > 0`` with ``w + log(w) = x`` (principal Lambert W of ``e^x``)."""
    # log1p(e^x) bounds W(e^x) from above, so Newton on the convex map stays right of the root
    s = np.where(x < -30.0, x, np.log(np.logaddexp(0.0, np.maximum(x, -30.0))))
    for _ in range(_NEWTON_ITERS):
        es = np.exp(s)
        f = es + s - x
        if np.all(np.abs(f) <= FOC_TOL * np.maximum(1.0, np.abs(x))):
            return np.exp(s)
        s = s - f / (es + 1.0)
    # bisection fallback; e^s + s - x < 0 at both lower-bracket choices
    lo = np.where(x <= 1.0, np.minimum(x, 1.0) - 1.0, np.log(np.maximum(x, 1.0)) - 1.0)
    hi = s + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pos = np.exp(mid) + mid - x > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return np.exp(0.5 * (lo + hi))


def quote_hamiltonian(curve: IntensityCurve, delta_floor: float, p) -> QuoteSolution:
    """Optimal quote offset and ``sup_{d >= -delta_floor} L(d) (d - p)``; vectorised in ``p``."""
    p_arr = np.asarray(p, dtype=float)
    x = -1.0 - curve.alpha - curve.beta * p_arr
    w = _solve_log_foc(x)
    delta = p_arr + (1.0 + w) / curve.beta
    value = curve.lambda_max * w / curve.beta
    floored = delta < -delta_floor
    if np.any(floored):
        d0 = -delta_floor
        delta = np.where(floored, d0, delta)
        value = np.where(floored, intensity_eval(curve, d0) * (d0 - p_arr), value)
    if np.ndim(delta) == 0:
        return QuoteSolution(float(delta), float(value))
    return QuoteSolution(delta, value)


def bar_hamiltonian(cost: ExecutionCost, r):
    """``sup_{|v| <= v_max} (r v - L(v))`` and its maximiser; vectorised in ``r``."""
    r = np.asarray(r, dtype=float)
    v = np.sign(r) * np.maximum(0.0, (np.abs(r) - cost.phi) / (2.0 * cost.eta))
    v = np.clip(v, -cost.v_max, cost.v_max)
    value = r * v - cost.eta * v * v - cost.phi * np.abs(v)
    if np.ndim(value) == 0:
        return float(value), float(v)
    return value, v


def exec_hamiltonian(params: ModelParams, ramp: RampFunction, p, q):
    """Execution Hamiltonian at marginal value ``p`` (before impact shift) and inventory ``q``.

    Returns ``(value, v_star)`` where ``v_star`` is the ungated maximiser at
    ``p + k q``; see :func:`effective_rate` for the rate actually traded.
    """
    q_arr = np.asarray(q, dtype=float)
    if np.any(np.abs(q_arr) > params.q_max * (1 + 1e-12)):
        raise ValueError(f"inventory outside [-{params.q_max}, {params.q_max}]")
    r = np.asarray(p, dtype=float) + params.impact_k * q_arr
    buy, _ = bar_hamiltonian(params.cost, np.maximum(r, 0.0))
    sell, _ = bar_hamiltonian(params.cost, np.minimum(r, 0.0))
    value = ramp(params.q_max - q_arr) * buy + ramp(params.q_max + q_arr) * sell
    _, v_star = bar_hamiltonian(params.cost, r)
    if np.ndim(value) == 0:
        return float(value), float(v_star)
    return value, v_star


def effective_rate(params: ModelParams, ramp: RampFunction, v_star, q):
    """Gate an execution rate by the inventory ramp: no buying at ``+q_max``, no selling at ``-q_max``."""
    v_star = np.asarray(v_star, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.maximum(v_star, 0.0) * ramp(params.q_max - q) + np.minimum(v_star, 0.0) * ramp(params.q_max + q)
    return float(out) if np.ndim(out) == 0 else out
