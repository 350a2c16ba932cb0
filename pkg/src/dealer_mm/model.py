"""Model primitives: intensity curves, trade-size buckets, execution costs, penalties.

Units throughout: prices and quote offsets in bps of the initial price,
inventories and sizes in M$, time in days.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit


class ModelError(ValueError):
    """Raised when a parameter set violates a model invariant."""


@dataclass(frozen=True)
class IntensityCurve:
    """Logistic fill intensity ``lambda_max / (1 + exp(alpha + beta * delta))``.

    ``lambda_max = 0`` is accepted as the degenerate no-flow curve.
    """

    lambda_max: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda_max) and self.lambda_max >= 0):
            raise ModelError(f"IntensityCurve.lambda_max must be >= 0, got {self.lambda_max}")
        if not math.isfinite(self.alpha):
            raise ModelError(f"IntensityCurve.alpha must be finite, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ModelError(f"IntensityCurve.beta must be > 0, got {self.beta}")

    def __call__(self, delta):
        return intensity_eval(self, delta)

    def derivative(self, delta):
        """First derivative of the intensity in ``delta``."""
        s = expit(-(self.alpha + self.beta * np.asarray(delta, dtype=float)))
        return -self.lambda_max * self.beta * s * (1.0 - s)

    def second_derivative(self, delta):
        s = expit(-(self.alpha + self.beta * np.asarray(delta, dtype=float)))
        return self.lambda_max * self.beta**2 * s * (1.0 - s) * (1.0 - 2.0 * s)

    def scaled(self, factor: float) -> "IntensityCurve":
        return IntensityCurve(self.lambda_max * factor, self.alpha, self.beta)


@dataclass(frozen=True)
class SizeGrid:
    """Discrete trade-size distribution: sizes ``z^k`` (M$) with probabilities ``p^k``."""

    sizes: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(float(z) for z in self.sizes)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)
        if len(sizes) == 0 or len(sizes) != len(probs):
            raise ModelError("SizeGrid: sizes and probs must be non-empty and of equal length")
        if any(not math.isfinite(z) or z <= 0 for z in sizes):
            raise ModelError("SizeGrid: sizes must be finite and strictly positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ModelError("SizeGrid: sizes must be strictly increasing")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ModelError("SizeGrid: probs must be nonnegative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ModelError(f"SizeGrid: probs must sum to 1 (got {math.fsum(probs)!r})")

    @property
    def mean(self) -> float:
        return mean_size(self)


@dataclass(frozen=True)
class ExecutionCost:
    """Execution cost ``L(v) = eta v^2 + phi |v|`` with rate cap ``|v| <= v_max``."""

    eta: float
    phi: float
    v_max: float = 5000.0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ModelError(f"ExecutionCost.eta must be > 0, got {self.eta}")
        if not (math.isfinite(self.phi) and self.phi >= 0):
            raise ModelError(f"ExecutionCost.phi must be >= 0, got {self.phi}")
        if not (math.isfinite(self.v_max) and self.v_max > 0):
            raise ModelError(f"ExecutionCost.v_max must be > 0, got {self.v_max}")

    def __call__(self, v):
        return exec_cost_eval(self, v)


@dataclass(frozen=True)
class ModelParams:
    sigma: float
    impact_k: float
    gamma: float
    horizon_T: float
    q_max: float
    bid_curve: IntensityCurve
    ask_curve: IntensityCurve
    sizes: SizeGrid
    cost: ExecutionCost
    delta_floor: float = 10.0

    def __post_init__(self):
        checks = [
            ("sigma", self.sigma >= 0),
            ("impact_k", self.impact_k >= 0),
            ("gamma", self.gamma >= 0),
            ("horizon_T", self.horizon_T > 0),
            ("q_max", self.q_max > 0),
            ("delta_floor", self.delta_floor > 0),
        ]
        for name, ok in checks:
            value = getattr(self, name)
            if not (math.isfinite(value) and ok):
                raise ModelError(f"ModelParams.{name} violates its constraint: {value!r}")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def intensity_eval(curve: IntensityCurve, delta):
    """Fill rate (trades/day) for quote offset ``delta`` (bps); vectorised."""
    u = curve.alpha + curve.beta * np.asarray(delta, dtype=float)
    out = curve.lambda_max * expit(-u)
    return float(out) if np.ndim(out) == 0 else out


def exec_cost_eval(cost: ExecutionCost, v):
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(v) > cost.v_max * (1 + 1e-12)):
        raise ModelError(f"execution rate exceeds the cap v_max={cost.v_max}")
    out = cost.eta * v * v + cost.phi * np.abs(v)
    return float(out) if np.ndim(out) == 0 else out


def running_penalty(params: ModelParams, q):
    """Inventory risk penalty rate ``(gamma/2) sigma^2 q^2``."""
    q = np.asarray(q, dtype=float)
    out = 0.5 * params.gamma * params.sigma**2 * q * q
    return float(out) if np.ndim(out) == 0 else out


def terminal_penalty(params: ModelParams, q):
    """Liquidation penalty ``(k/2) q^2``; the terminal value is its negative."""
    q = np.asarray(q, dtype=float)
    out = 0.5 * params.impact_k * q * q
    return float(out) if np.ndim(out) == 0 else out


def mean_size(grid: SizeGrid) -> float:
    return math.fsum(z * p for z, p in zip(grid.sizes, grid.probs))


def reference_params(**overrides) -> ModelParams:
    """USDCNH parameter set used for the numerical experiments."""
    curve = IntensityCurve(lambda_max=1000.0, alpha=-1.0, beta=10.0)
    base = dict(
        sigma=50.0,
        impact_k=0.005,
        gamma=0.0005,
        horizon_T=0.05,
        q_max=100.0,
        delta_floor=10.0,
        bid_curve=curve,
        ask_curve=curve,
        sizes=SizeGrid((1.0, 5.0, 10.0, 20.0), (0.76, 0.15, 0.075, 0.015)),
        cost=ExecutionCost(eta=1e-5, phi=0.1, v_max=5000.0),
    )
    base.update(overrides)
    return ModelParams(**base)
