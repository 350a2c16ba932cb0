from pathlib import Path

import pytest

from dealer_mm.model import ExecutionCost, IntensityCurve, SizeGrid, reference_params
from dealer_mm.solver import InventoryGrid, extract_policy, solve

ROOT = Path(__file__).resolve().parents[1]
BASE_CONFIG = ROOT / "configs" / "base.json"


@pytest.fixture(scope="session")
def ref():
    return reference_params()


@pytest.fixture(scope="session")
def ref_grid():
    return InventoryGrid.uniform(100.0, 201)


@pytest.fixture(scope="session")
def ref_surface(ref, ref_grid):
    return solve(ref, ref_grid)


@pytest.fixture(scope="session")
def ref_policy(ref_surface, ref, ref_grid):
    return extract_policy(ref_surface, ref, ref_grid, 0.0)


def small_params(**overrides):
    """Cheap model on [-20, 20] with two size buckets, for property tests."""
    base = dict(
        q_max=20.0,
        horizon_T=0.005,
        sizes=SizeGrid((1.0, 5.0), (0.8, 0.2)),
    )
    base.update(overrides)
    return reference_params(**base)


@pytest.fixture
def small():
    return small_params()


@pytest.fixture
def small_grid():
    return InventoryGrid.uniform(20.0, 41)


def zero_flow_params(**overrides):
    """No client flow, no risk aversion, no impact and prohibitive proportional costs."""
    dead = IntensityCurve(0.0, -1.0, 10.0)
    base = dict(bid_curve=dead, ask_curve=dead, gamma=0.0, impact_k=0.0,
                cost=ExecutionCost(eta=1e-5, phi=1e6, v_max=5000.0))
    base.update(overrides)
    return reference_params(**base)
