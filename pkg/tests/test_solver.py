import numpy as np
import pytest
from scipy.special import lambertw

from conftest import small_params, zero_flow_params
from dealer_mm.hamiltonians import quote_hamiltonian
from dealer_mm.model import ExecutionCost, IntensityCurve, reference_params, terminal_penalty
from dealer_mm.solver import (
    InventoryGrid,
    PolicyTable,
    Scheme,
    SolverError,
    SolverSettings,
    extract_policy,
    internalization_zone,
    solve,
    stationarity_gap,
    step_implicit,
)


# ---------------------------------------------------------------- oracle

def oracle_quote_value(curve, floor, p):
    x = -1.0 - curve.alpha - curve.beta * p
    w = float(np.real(lambertw(np.exp(x)))) if x < 700 else x - np.log(x)
    delta = p + (1.0 + w) / curve.beta
    if delta < -floor:
        return curve(-floor) * (-floor - p)
    return curve.lambda_max * w / curve.beta


def oracle_bar(cost, r):
    v = np.sign(r) * max(0.0, (abs(r) - cost.phi) / (2 * cost.eta))
    v = min(max(v, -cost.v_max), cost.v_max)
    return r * v - cost.eta * v * v - cost.phi * abs(v)


def oracle_operator(params, q, h, theta):
    """Node-by-node loop, written independently of the vectorised scheme."""
    n = len(q)
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for z, pz in zip(params.sizes.sizes, params.sizes.probs):
            m = int(round(z / h))
            if i + m < n:
                acc += pz * z * oracle_quote_value(params.bid_curve, params.delta_floor, (theta[i] - theta[i + m]) / z)
            if i - m >= 0:
                acc += pz * z * oracle_quote_value(params.ask_curve, params.delta_floor, (theta[i] - theta[i - m]) / z)
        kq = params.impact_k * q[i]
        fwd = (theta[i + 1] - theta[i]) / h + kq if i < n - 1 else kq
        bwd = (theta[i] - theta[i - 1]) / h + kq if i > 0 else kq
        up = min(max((params.q_max - q[i]) / h, 0.0), 1.0)
        down = min(max((params.q_max + q[i]) / h, 0.0), 1.0)
        acc += up * oracle_bar(params.cost, max(fwd, 0.0)) + down * oracle_bar(params.cost, min(bwd, 0.0))
        acc -= 0.5 * params.gamma * params.sigma**2 * q[i] ** 2
        out[i] = acc
    return out


def oracle_step(params, grid, theta_next, dt, tol=1e-13):
    theta = theta_next.copy()
    for _ in range(5000):
        new = theta_next + dt * oracle_operator(params, grid.q_nodes, grid.step, theta)
        if np.max(np.abs(new - theta)) < tol:
            return new
        theta = theta + 0.5 * (new - theta)
    raise AssertionError("oracle did not converge")


# ---------------------------------------------------------------- grid

def test_uniform_grid_layout():
    g = InventoryGrid.uniform(100.0, 201)
    assert g.step == 1.0 and g.size == 201
    assert g.q_nodes[100] == 0.0 and g.q_nodes[0] == -100.0 and g.q_nodes[-1] == 100.0
    assert g.offsets((1, 5, 10, 20)) == [1, 5, 10, 20]
    assert g.index_of(-100) == 0 and g.index_of(3.2) == 103
    with pytest.raises(ValueError):
        InventoryGrid.uniform(100.0, 200)
    with pytest.raises(ValueError):
        InventoryGrid.uniform(100.0, 81).offsets((1,))


# ---------------------------------------------------------------- single step

def test_one_step_matches_independent_oracle(small, small_grid):
    scheme = Scheme(small, small_grid)
    theta_next = scheme.terminal()
    dt = small.horizon_T / 50
    theta, diag = step_implicit(theta_next, dt, scheme, SolverSettings(tol=1e-13, max_iter=5000))
    expected = oracle_step(small, small_grid, theta_next, dt)
    assert np.max(np.abs(theta - expected)) < 1e-8
    assert diag.residual < 1e-13


def test_operator_matches_oracle_on_rough_slice(small, small_grid):
    rng = np.random.default_rng(7)
    theta = -0.1 * small_grid.q_nodes**2 + rng.normal(0, 2.0, small_grid.size)
    got = Scheme(small, small_grid).operator(theta)
    want = oracle_operator(small, small_grid.q_nodes, small_grid.step, theta)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-9)


def test_solver_error_when_iteration_budget_too_small(small, small_grid):
    with pytest.raises(SolverError) as err:
        solve(small, small_grid, settings=SolverSettings(n_steps=10, max_iter=1))
    assert err.value.time_index == 9
    assert err.value.residual > 1e-10


# ---------------------------------------------------------------- structural properties

def test_zero_model_keeps_terminal_slice():
    params = zero_flow_params(q_max=20.0, horizon_T=0.005)
    grid = InventoryGrid.uniform(20.0, 41)
    surface = solve(params, grid, n_steps=20)
    assert np.max(np.abs(surface.values - surface.values[-1])) == 0.0
    policy = extract_policy(surface, params, grid, 0.0)
    assert np.all(np.isnan(policy.bid_quotes)) and np.all(np.isnan(policy.ask_quotes))
    assert np.all(policy.exec_rate == 0.0)
    assert stationarity_gap(surface, params, grid) == 0.0


def test_terminal_slice_is_exact(ref_surface, ref, ref_grid):
    q = ref_grid.q_nodes
    assert np.array_equal(ref_surface.values[-1], -terminal_penalty(ref, q))
    np.testing.assert_allclose(ref_surface.values[-1], -0.5 * ref.impact_k * q**2, rtol=1e-15)


def test_symmetric_model_gives_even_value(ref_surface):
    for row in (ref_surface.values[0], ref_surface.values[250]):
        assert np.max(np.abs(row - row[::-1])) < 1e-9


def test_value_bounds(ref_surface, ref, ref_grid):
    q = ref_grid.q_nodes
    mean = ref.sizes.mean
    hb = quote_hamiltonian(ref.bid_curve, ref.delta_floor, 0.0).hamiltonian_value
    ha = quote_hamiltonian(ref.ask_curve, ref.delta_floor, 0.0).hamiltonian_value
    psi = 0.5 * ref.gamma * ref.sigma**2 * q**2
    ell = 0.5 * ref.impact_k * q**2
    for j in (0, 100, 400):
        tau = ref.horizon_T - ref_surface.times[j]
        upper = tau * (mean * hb + mean * ha + ref.impact_k * ref.cost.v_max * ref.q_max)
        lower = -tau * psi - ell
        assert np.all(ref_surface.values[j] <= upper + 1e-9)
        assert np.all(ref_surface.values[j] >= lower - 1e-9)


def test_value_concave_around_flat_inventory(ref_surface):
    theta = ref_surface.values[0]
    second = theta[:-2] - 2 * theta[1:-1] + theta[2:]
    assert np.all(second[100 - 30:100 + 30] <= 1e-9)


def test_comparison_principle(small, small_grid):
    scheme = Scheme(small, small_grid)
    low = scheme.terminal()
    high = low + np.abs(np.sin(small_grid.q_nodes))
    a = solve(small, small_grid, n_steps=25, terminal=low).values
    b = solve(small, small_grid, n_steps=25, terminal=high).values
    assert np.all(b >= a - 1e-9)


def test_constant_shift_commutes(small, small_grid):
    base = Scheme(small, small_grid).terminal()
    a = solve(small, small_grid, n_steps=25, terminal=base).values
    b = solve(small, small_grid, n_steps=25, terminal=base + 3.0).values
    assert np.max(np.abs(b - a - 3.0)) < 1e-8


# ---------------------------------------------------------------- policy

def test_policy_symmetry_and_monotone_quotes(ref_policy):
    bid, ask = ref_policy.bid_quotes, ref_policy.ask_quotes
    np.testing.assert_allclose(bid[::-1], ask, atol=1e-8, equal_nan=True)
    for k in range(bid.shape[1]):
        b = bid[:, k][np.isfinite(bid[:, k])]
        a = ask[:, k][np.isfinite(ask[:, k])]
        assert np.all(np.diff(b) >= -1e-12)
        assert np.all(np.diff(a) <= 1e-12)


def test_inadmissible_fills_are_nan(ref_policy):
    assert np.isnan(ref_policy.bid_quotes[-1, 0]) and np.isfinite(ref_policy.bid_quotes[-2, 0])
    assert np.all(np.isnan(ref_policy.ask_quotes[:20, 3])) and np.isfinite(ref_policy.ask_quotes[20, 3])


def test_spread_at_flat_inventory(ref_policy):
    spread = ref_policy.bid_quotes[100, 0] + ref_policy.ask_quotes[100, 0]
    assert spread == pytest.approx(0.32, abs=0.03)


def test_exec_rate_nonincreasing_and_odd(ref_policy):
    rate = ref_policy.exec_rate
    assert np.all(np.diff(rate) <= 1e-9)
    np.testing.assert_allclose(rate, -rate[::-1], atol=1e-6)
    assert np.max(np.abs(rate)) <= 5000.0


def test_dead_zone_characterization(ref_surface, ref, ref_grid, ref_policy):
    theta, h = ref_surface.values[0], ref_grid.step
    kq = ref.impact_k * ref_grid.q_nodes
    fwd = np.append(np.diff(theta) / h, 0.0) + kq
    bwd = np.insert(np.diff(theta) / h, 0, 0.0) + kq
    inside = (fwd <= ref.cost.phi) & (bwd >= -ref.cost.phi)
    assert np.array_equal(ref_policy.exec_rate == 0.0, inside)


def test_extract_policy_rejects_horizon(ref_surface, ref, ref_grid):
    with pytest.raises(ValueError):
        extract_policy(ref_surface, ref, ref_grid, ref.horizon_T)


# ---------------------------------------------------------------- zone

def _zone_of(rate, q_max=5.0):
    grid = InventoryGrid.uniform(q_max, len(rate))
    policy = PolicyTable(grid.q_nodes, (1.0,), np.zeros((len(rate), 1)), np.zeros((len(rate), 1)),
                         np.asarray(rate, dtype=float), 0.0)
    return internalization_zone(policy, grid)


def test_zone_plateau_counts_cells():
    zone = _zone_of([5, 3, 0, 0, 0, -1, -4, -6, -7, -8, -9])
    assert (zone.q_low, zone.q_high, zone.width) == (-3.5, -0.5, 3.0)
    assert zone.contains(-2.0) and not zone.contains(1.0)


def test_zone_single_crossing_without_plateau():
    zone = _zone_of([4, 3, 2, 1, 1, -1, -2, -3, -4, -5, -6])
    assert zone.width == 0.0 and zone.q_low == zone.q_high == pytest.approx(-0.5)


def test_zone_widens_with_proportional_cost(small_grid):
    widths = []
    for phi in (0.05, 0.1, 0.3):
        params = small_params(cost=ExecutionCost(1e-5, phi, 5000.0))
        surface = solve(params, small_grid, n_steps=50)
        widths.append(internalization_zone(extract_policy(surface, params, small_grid), small_grid).width)
    assert widths[0] <= widths[1] <= widths[2]
    assert widths[2] > widths[0]


def test_asymmetric_flow_shifts_zone(small_grid):
    params = small_params(bid_curve=IntensityCurve(2500.0, -1.0, 10.0), ask_curve=IntensityCurve(500.0, -1.0, 10.0))
    surface = solve(params, small_grid, n_steps=50)
    policy = extract_policy(surface, params, small_grid)
    zone = internalization_zone(policy, small_grid)
    assert zone.midpoint < 0
    assert policy.exec_rate[small_grid.index_of(0.0)] <= 0


# ---------------------------------------------------------------- horizon and refinement

def test_stationarity_gap_shrinks_with_horizon(small_grid):
    short = small_params(horizon_T=0.005)
    long = small_params(horizon_T=0.05)
    g_short = stationarity_gap(solve(short, small_grid, n_steps=50), short, small_grid)
    g_long = stationarity_gap(solve(long, small_grid, n_steps=500), long, small_grid)
    assert g_long <= g_short


@pytest.mark.slow
def test_grid_refinement_is_stable(ref, ref_surface, ref_policy):
    fine = InventoryGrid.uniform(100.0, 401)
    surface = solve(ref, fine)
    policy = extract_policy(surface, ref, fine)
    theta_coarse = ref_surface.values[0][::20]
    theta_fine = surface.values[0][::40]
    assert np.max(np.abs(theta_fine - theta_coarse)) <= 0.01 * np.max(np.abs(theta_coarse))
    s_coarse = ref_policy.bid_quotes[100, 0] + ref_policy.ask_quotes[100, 0]
    s_fine = policy.bid_quotes[200, 0] + policy.ask_quotes[200, 0]
    assert s_fine == pytest.approx(s_coarse, rel=0.01)
