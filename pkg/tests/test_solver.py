import numpy as np
import pytest

from lraid.solver import (BINARY, EQUAL, GREATER, INF, LESS, Model, ModelError,
                          SolverSettings, SolveStatus, dual_objective, solve)


def simple_lp() -> Model:
    m = Model("one_var")
    m.add_variable("x", -INF, INF)
    m.add_constraint("floor", {"x": 1.0}, GREATER, 3.0)
    m.set_objective({"x": 1.0}, "min")
    return m


def test_one_variable_lp():
    out = solve(simple_lp())
    assert out.status == SolveStatus.OPTIMAL
    assert out.objective == pytest.approx(3.0)
    assert out.value("x") == pytest.approx(3.0)


def test_one_constraint_milp():
    m = Model("knapsackish")
    m.add_variable("x", 0.0, 1.0, BINARY)
    m.add_variable("y", 0.0, 1.0, BINARY)
    m.add_constraint("cap", {"x": 1.0, "y": 1.0}, LESS, 1.0)
    m.set_objective({"x": 1.0, "y": 1.0}, "max")
    out = solve(m)
    assert out.status == SolveStatus.OPTIMAL
    assert out.objective == pytest.approx(1.0)
    assert out.value("x") + out.value("y") == pytest.approx(1.0)


def test_infeasible_contradiction():
    m = Model("contradiction")
    m.add_variable("x", -INF, INF)
    m.add_constraint("ge2", {"x": 1.0}, GREATER, 2.0)
    m.add_constraint("le1", {"x": 1.0}, LESS, 1.0)
    m.set_objective({"x": 1.0}, "min")
    assert solve(m).status == SolveStatus.INFEASIBLE


def test_unbounded_detected():
    m = Model("unbounded")
    m.add_variable("x", -INF, INF)
    m.set_objective({"x": 1.0}, "min")
    assert solve(m).status in (SolveStatus.UNBOUNDED, SolveStatus.NUMERIC_FAILURE)


def test_validation_errors():
    m = Model("bad")
    m.add_variable("x")
    with pytest.raises(ModelError):
        m.add_variable("x")
    with pytest.raises(ModelError):
        m.add_constraint("c", {"nope": 1.0}, LESS, 0.0)
    with pytest.raises(ModelError):
        m.add_constraint("c", {"x": 1.0}, "<", 0.0)
    with pytest.raises(ModelError):
        m.add_variable("b", -0.5, 1.0, BINARY)
    with pytest.raises(ModelError):
        m.set_objective({"gone": 1.0})


def random_lp(seed: int) -> Model:
    rng = np.random.default_rng(seed)
    m = Model(f"random_{seed}")
    n = 6
    for j in range(n):
        m.add_variable(f"x{j}", 0.0, float(rng.uniform(1.0, 10.0)))
    for i in range(4):
        terms = {f"x{j}": float(rng.normal()) for j in range(n)}
        sense = (LESS, GREATER, EQUAL)[i % 3]
        m.add_constraint(f"c{i}", terms, sense, float(rng.normal() * 2.0))
    m.set_objective({f"x{j}": float(rng.normal()) for j in range(n)},
                    "min" if seed % 2 else "max")
    return m


@pytest.mark.parametrize("seed", [1, 2, 3, 5, 8])
def test_lp_strong_duality(seed):
    m = random_lp(seed)
    out = solve(m)
    if out.status != SolveStatus.OPTIMAL:
        pytest.skip("randomly infeasible instance")
    gap = abs(out.objective - dual_objective(m, out))
    assert gap <= 1e-6 * max(1.0, abs(out.objective))


@pytest.mark.parametrize("seed", [1, 4, 9])
def test_lp_format_round_trip(seed):
    m = random_lp(seed)
    clone = Model.from_lp(m.to_lp())
    a, b = solve(m), solve(clone)
    assert a.status == b.status
    if a.status == SolveStatus.OPTIMAL:
        assert abs(a.objective - b.objective) <= 1e-9 * max(1.0, abs(a.objective))


def test_lp_round_trip_with_binaries():
    m = Model("mixed")
    m.add_variable("x", 0.0, 4.0)
    m.add_variable("z", 0.0, 1.0, BINARY)
    m.add_variable("free_var", -INF, INF)
    m.add_constraint("link", {"x": 1.0, "z": -4.0}, LESS, 0.0)
    m.add_constraint("pin", {"free_var": 1.0, "x": -1.0}, EQUAL, 0.0)
    m.set_objective({"x": 1.0, "free_var": 0.5}, "max")
    clone = Model.from_lp(m.to_lp())
    assert clone.variables["z"][2] == BINARY
    a, b = solve(m), solve(clone)
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_deterministic_repeat():
    m = random_lp(3)
    first = solve(m, SolverSettings(deterministic=True, seed=42))
    second = solve(m, SolverSettings(deterministic=True, seed=42))
    assert first.values == second.values


def test_fix_binaries_produces_lp():
    m = Model("fixing")
    m.add_variable("x", 0.0, 10.0)
    m.add_variable("z", 0.0, 1.0, BINARY)
    m.add_constraint("link", {"x": 1.0, "z": -10.0}, LESS, 0.0)
    m.set_objective({"x": 1.0}, "max")
    out = solve(m)
    assert out.objective == pytest.approx(10.0)
    fixed = m.fix_binaries({"z": out.value("z")})
    assert not fixed.has_free_binaries
    refined = solve(fixed)
    assert refined.status == SolveStatus.OPTIMAL
    assert refined.duals is not None
    assert refined.objective == pytest.approx(10.0)


def test_time_limit_status():
    # tiny limit on a nontrivial MILP; accept either a fast optimal or a
    # truthful time-limit report
    rng = np.random.default_rng(0)
    m = Model("clock")
    n = 30
    for j in range(n):
        m.add_variable(f"z{j}", 0.0, 1.0, BINARY)
    for i in range(15):
        terms = {f"z{j}": float(rng.integers(1, 9)) for j in range(n)}
        m.add_constraint(f"c{i}", terms, LESS, float(rng.integers(20, 60)))
    m.set_objective({f"z{j}": float(rng.uniform(1, 3)) for j in range(n)}, "max")
    out = solve(m, SolverSettings(time_limit=1e-4))
    assert out.status in (SolveStatus.OPTIMAL, SolveStatus.TIME_LIMIT)
