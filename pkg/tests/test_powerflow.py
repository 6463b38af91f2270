import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lraid.powerflow import (UnbalancedInjections, measure_impact, solve_dc_flow)

from conftest import injections, ring_grid, two_bus_grid


def test_single_branch_carries_all_power():
    grid = two_bus_grid()
    state = solve_dc_flow(grid, injections(grid, {0: 100.0, 1: -100.0}))
    assert state.flows[0] == pytest.approx(100.0, abs=1e-9)
    assert state.angles[grid.reference_bus] == 0.0


def test_ring_splits_by_path_reactance():
    # equal reactances: the two-branch path carries half the direct path's share
    grid = ring_grid()
    state = solve_dc_flow(grid, injections(grid, {0: 90.0, 1: -90.0}))
    assert state.flows[0] == pytest.approx(60.0, abs=1e-8)   # 1-2 direct
    assert state.flows[2] == pytest.approx(30.0, abs=1e-8)   # 1-3 leg
    assert state.flows[1] == pytest.approx(-30.0, abs=1e-8)  # 2-3 leg, towards 2


def test_zero_injections_zero_state():
    grid = ring_grid()
    state = solve_dc_flow(grid, np.zeros(3))
    np.testing.assert_allclose(state.angles, 0.0)
    np.testing.assert_allclose(state.flows, 0.0)


def test_unbalanced_injections_rejected():
    grid = two_bus_grid()
    with pytest.raises(UnbalancedInjections):
        solve_dc_flow(grid, injections(grid, {0: 100.0, 1: -99.0}))


def test_nodal_balance_residual(rts65):
    rng = np.random.default_rng(7)
    inj = rng.normal(0.0, 50.0, rts65.n_buses)
    inj -= inj.mean()
    state = solve_dc_flow(rts65, inj)
    residual = inj - rts65.incidence().T @ state.flows
    assert np.max(np.abs(residual)) < 1e-8


def test_reference_bus_independence(rts65):
    rng = np.random.default_rng(11)
    inj = rng.normal(0.0, 50.0, rts65.n_buses)
    inj -= inj.mean()
    flows = [solve_dc_flow(rts65, inj, reference=r).flows for r in (0, 5, 23)]
    assert np.max(np.abs(flows[0] - flows[1])) < 1e-8
    assert np.max(np.abs(flows[0] - flows[2])) < 1e-8


def test_linearity(rts65):
    rng = np.random.default_rng(13)
    x = rng.normal(0.0, 40.0, rts65.n_buses)
    x -= x.mean()
    y = rng.normal(0.0, 40.0, rts65.n_buses)
    y -= y.mean()
    fx = solve_dc_flow(rts65, x).flows
    fy = solve_dc_flow(rts65, y).flows
    fxy = solve_dc_flow(rts65, 2.0 * x - 0.5 * y).flows
    assert np.max(np.abs(fxy - (2.0 * fx - 0.5 * fy))) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-100.0, 100.0), min_size=3, max_size=3),
       st.sampled_from([0, 1, 2]))
def test_flow_definition_invariant(raw, ref):
    grid = ring_grid()
    inj = np.array(raw)
    inj -= inj.mean()
    state = solve_dc_flow(grid, inj, reference=ref)
    b = grid.susceptances()
    for i, br in enumerate(grid.branches):
        expected = b[i] * (state.angles[br.from_bus] - state.angles[br.to_bus])
        assert state.flows[i] == pytest.approx(expected, abs=1e-8)


def test_overload_listing_and_excess():
    grid = two_bus_grid(capacity=100.0)
    report = measure_impact(grid, np.array([109.1]), 1.05)
    assert report.count_above_threshold == 1
    over = report.overloaded[0]
    assert over.loading_ratio == pytest.approx(1.091)
    assert over.excess == pytest.approx(9.1)
    assert over.measurable_excess == pytest.approx(4.1)
    assert report.total_impact == pytest.approx(4.1)


def test_sub_threshold_excluded():
    grid = two_bus_grid(capacity=100.0)
    report = measure_impact(grid, np.array([103.0]), 1.05)
    assert report.count_above_threshold == 0
    assert report.total_impact == 0.0
    assert len(report.sub_threshold) == 1
    assert report.sub_threshold[0].loading_ratio == pytest.approx(1.03)


def test_secure_state_empty_report():
    grid = two_bus_grid(capacity=100.0)
    report = measure_impact(grid, np.array([-99.0]), 1.05)
    assert not report.overloaded
    assert not report.sub_threshold
    assert report.total_impact == 0.0


def test_negative_direction_flagged():
    grid = two_bus_grid(capacity=100.0)
    report = measure_impact(grid, np.array([-110.0]), 1.05)
    assert report.overloaded[0].direction == -1
    assert report.overloaded[0].excess == pytest.approx(10.0)


def test_threshold_must_be_at_least_one():
    grid = two_bus_grid()
    with pytest.raises(ValueError):
        measure_impact(grid, np.array([0.0]), 0.9)


def test_impact_monotone_in_flow_scaling(rts65):
    rng = np.random.default_rng(17)
    flows = rng.normal(0.0, 150.0, rts65.n_branches)
    counts, totals = [], []
    for k in (1.0, 1.2, 1.5, 2.0):
        report = measure_impact(rts65, k * flows, 1.05)
        counts.append(report.count_above_threshold)
        totals.append(report.total_impact)
    assert counts == sorted(counts)
    assert totals == sorted(totals)
