import numpy as np
import pytest

from lraid.grid import DisconnectedGraph
from lraid.matpower import (MalformedRow, MissingTable, NonNumericToken,
                            NonPositiveCapacity, NonPositiveReactance,
                            build_grid, load_case, parse_case)

from conftest import CASE3_TEXT


def test_minimal_case_row_counts(case3_path):
    tables = parse_case(case3_path.read_text())
    assert tables.base_mva == 100.0
    assert tables.bus_table.shape[0] == 3
    assert tables.gen_table.shape[0] == 2
    assert tables.branch_table.shape[0] == 3
    assert tables.gencost_table.shape[0] == 2


def test_rts_row_counts(rts_path):
    tables = parse_case(rts_path.read_text())
    assert tables.bus_table.shape[0] == 24
    assert tables.branch_table.shape[0] == 38
    assert tables.gen_table.shape[0] == 33


def test_rts_grid_dimensions(rts_path):
    grid = load_case(rts_path)
    assert grid.n_buses == 24
    assert grid.n_branches == 38
    assert grid.n_generators == 33
    assert grid.demands().sum() == pytest.approx(2850.0)
    assert grid.buses[grid.reference_bus].ext_id == 13


def test_missing_table():
    text = CASE3_TEXT.replace("mpc.bus", "mpc.busx")
    with pytest.raises(MissingTable) as err:
        parse_case(text)
    assert err.value.name == "bus"


def test_missing_base_mva():
    text = CASE3_TEXT.replace("mpc.baseMVA", "mpc.nothing")
    with pytest.raises(MissingTable):
        parse_case(text)


def test_non_numeric_token():
    text = CASE3_TEXT.replace("\t100\t0\t0\t0\t1\t1\t0\t135", "\tabc\t0\t0\t0\t1\t1\t0\t135", 1)
    with pytest.raises(NonNumericToken):
        parse_case(text)


def test_ragged_row_rejected():
    lines = CASE3_TEXT.splitlines()
    idx = next(i for i, l in enumerate(lines) if l.startswith("\t1\t2\t0.01"))
    lines[idx] = "\t1\t2\t0.01\t0.1\t0\t150;"
    with pytest.raises(MalformedRow):
        parse_case("\n".join(lines))


def test_comment_insensitivity(case3_path):
    text = case3_path.read_text()
    commented = text.replace("mpc.bus = [", "% leading note\nmpc.bus = [  % trailing")
    assert build_grid(parse_case(commented)) == build_grid(parse_case(text))


def test_capacity_scaling_property(rts_path):
    tables = parse_case(rts_path.read_text())
    full = build_grid(tables, 1.0)
    scaled = build_grid(tables, 0.65)
    np.testing.assert_allclose(scaled.capacities(), 0.65 * full.capacities())
    np.testing.assert_allclose(scaled.reactances(), full.reactances())


def test_rts_capacity_at_65(rts_path):
    grid = load_case(rts_path, 0.65)
    # branch rows 12 and 23 (1-based) carry the RTS 175 and 500 MVA ratings
    assert grid.branches[11].capacity == pytest.approx(0.65 * 175)
    assert grid.branches[22].capacity == pytest.approx(0.65 * 500)


def test_identity_scale_is_rate_a(case3_path):
    grid = load_case(case3_path, 1.0)
    assert [br.capacity for br in grid.branches] == [92.0, 40.0, 20.0]


def test_zero_reactance_rejected():
    text = CASE3_TEXT.replace("\t1\t2\t0.01\t0.1", "\t1\t2\t0.01\t0.0", 1)
    with pytest.raises(NonPositiveReactance):
        build_grid(parse_case(text))


def test_zero_capacity_rejected():
    text = CASE3_TEXT.replace("\t0.1\t0\t92", "\t0.1\t0\t0", 1)
    with pytest.raises(NonPositiveCapacity):
        build_grid(parse_case(text))


def test_out_of_service_branch_dropped_and_disconnection_detected():
    # dropping both bus-3 connections disconnects the graph
    text = CASE3_TEXT.replace("\t2\t3\t0.01\t0.1\t0\t40\t40\t40\t0\t0\t1",
                              "\t2\t3\t0.01\t0.1\t0\t40\t40\t40\t0\t0\t0")
    text = text.replace("\t1\t3\t0.01\t0.1\t0\t20\t20\t20\t0\t0\t1",
                        "\t1\t3\t0.01\t0.1\t0\t20\t20\t20\t0\t0\t0")
    with pytest.raises(DisconnectedGraph):
        build_grid(parse_case(text))


def test_out_of_service_generator_dropped():
    text = CASE3_TEXT.replace("\t3\t120\t0\t50\t-50\t1\t100\t1\t150",
                              "\t3\t120\t0\t50\t-50\t1\t100\t0\t150")
    grid = build_grid(parse_case(text))
    assert grid.n_generators == 1


def test_deterministic_build(case3_path):
    text = case3_path.read_text()
    assert build_grid(parse_case(text)) == build_grid(parse_case(text))


def test_linear_cost_from_quadratic_row(rts_path):
    grid = load_case(rts_path)
    costs = sorted(set(round(g.cost, 4) for g in grid.generators))
    # distinct marginal costs of the RTS unit classes
    assert costs == [0.0, 0.001, 4.4231, 11.8495, 12.3883, 16.0811,
                     43.6615, 48.5804, 56.564, 130.0]


def test_scientific_notation_accepted():
    text = CASE3_TEXT.replace("\t0.01\t0.1", "\t1e-2\t1.0e-1", 1)
    grid = build_grid(parse_case(text))
    assert grid.branches[0].reactance == pytest.approx(0.1)
