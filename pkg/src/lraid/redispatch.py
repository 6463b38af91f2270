"""Grid-operator reaction model and base-dispatch resolution.

The operator reacts to the load measurements it sees (true demand plus any
injected falsification) by buying the cheapest upward redispatch that keeps
all its perceived flows within branch capacities. Downward moves are free.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import solver
from .grid import GridCase
from .powerflow import measure_impact, solve_dc_flow
from .solver import EQUAL, GREATER, INF, LESS, Model, SolverSettings, SolveStatus


class OperatorStatus(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


class NumericFailure(RuntimeError):
    """Solver reported neither a solution nor a clean infeasibility."""


class InfeasibleBaseDispatch(ValueError):
    pass


@dataclass(frozen=True)
class OperatorResponse:
    redispatch: np.ndarray       # p*_g, MW, signed
    upward: np.ndarray           # pi_g, MW, >= max(0, p*_g)
    flows: np.ndarray            # operator-perceived flows, MW
    angles: np.ndarray           # radians
    status: OperatorStatus
    redispatch_cost: float

    @classmethod
    def infeasible(cls, n_gen: int, n_branch: int, n_bus: int) -> "OperatorResponse":
        return cls(
            redispatch=np.zeros(n_gen),
            upward=np.zeros(n_gen),
            flows=np.zeros(n_branch),
            angles=np.zeros(n_bus),
            status=OperatorStatus.INFEASIBLE,
            redispatch_cost=float("nan"),
        )


def _add_dc_network(model: Model, grid: GridCase, loads: np.ndarray,
                    injections_var: str, flow_var: str, angle_var: str) -> None:
    """Nodal balance, flow definition and reference-angle constraints."""
    b = grid.susceptances()
    gen_at_bus: list[list[int]] = [[] for _ in range(grid.n_buses)]
    for g, gen in enumerate(grid.generators):
        gen_at_bus[gen.bus].append(g)

    for n in range(grid.n_buses):
        terms: dict[str, float] = {}
        for g in gen_at_bus[n]:
            terms[f"{injections_var}_{g}"] = 1.0
        for i, br in enumerate(grid.branches):
            if br.from_bus == n:
                terms[f"{flow_var}_{i}"] = terms.get(f"{flow_var}_{i}", 0.0) - 1.0
            elif br.to_bus == n:
                terms[f"{flow_var}_{i}"] = terms.get(f"{flow_var}_{i}", 0.0) + 1.0
        model.add_constraint(f"bal_{n}", terms, EQUAL, float(loads[n]))

    for i, br in enumerate(grid.branches):
        model.add_constraint(
            f"fdef_{i}",
            {f"{flow_var}_{i}": 1.0,
             f"{angle_var}_{br.from_bus}": -b[i],
             f"{angle_var}_{br.to_bus}": b[i]},
            EQUAL,
            0.0,
        )


def react(grid: GridCase, attack: np.ndarray | None = None,
          settings: SolverSettings | None = None) -> OperatorResponse:
    """Cost-minimal upward redispatch against loads d + e on the given grid.

    With an all-zero attack and a branch-feasible base point the analytic
    zero response is returned directly; no LP is solved.
    """
    demands = grid.demands()
    e = np.zeros(grid.n_buses) if attack is None else np.asarray(attack, dtype=float)
    if e.shape != (grid.n_buses,):
        raise ValueError(f"attack vector has shape {e.shape}, expected ({grid.n_buses},)")
    if abs(float(e.sum())) > 1e-6:
        raise ValueError(f"attack vector sums to {e.sum():.6g} MW, expected 0")

    base_injections = grid.base_injections()
    if not e.any() and abs(float(base_injections.sum())) <= 1e-6:
        base = solve_dc_flow(grid, base_injections)
        if not measure_impact(grid, base, 1.0).overloaded:
            return OperatorResponse(
                redispatch=np.zeros(grid.n_generators),
                upward=np.zeros(grid.n_generators),
                flows=base.flows,
                angles=base.angles,
                status=OperatorStatus.FEASIBLE,
                redispatch_cost=0.0,
            )
        del base

    model = Model("operator_redispatch")
    pg0 = grid.base_dispatch()
    costs = grid.gen_costs()
    for g, gen in enumerate(grid.generators):
        model.add_variable(f"p_{g}", gen.min_output - pg0[g], gen.max_output - pg0[g])
        model.add_variable(f"pi_{g}", 0.0, INF)
        model.add_constraint(f"up_{g}", {f"pi_{g}": 1.0, f"p_{g}": -1.0}, GREATER, 0.0)
    for i, br in enumerate(grid.branches):
        model.add_variable(f"f_{i}", -br.capacity, br.capacity)
    for n in range(grid.n_buses):
        if n == grid.reference_bus:
            model.add_variable(f"th_{n}", 0.0, 0.0)
        else:
            model.add_variable(f"th_{n}", -INF, INF)

    # loads seen by the operator, net of base generation
    seen = demands + e
    gen_offset = np.zeros(grid.n_buses)
    for g, gen in enumerate(grid.generators):
        gen_offset[gen.bus] += pg0[g]
    _add_dc_network(model, grid, seen - gen_offset, "p", "f", "th")
    model.set_objective({f"pi_{g}": float(costs[g]) for g in range(grid.n_generators)}, "min")

    out = solver.solve(model, settings)
    if out.status == SolveStatus.INFEASIBLE:
        return OperatorResponse.infeasible(grid.n_generators, grid.n_branches, grid.n_buses)
    if out.status != SolveStatus.OPTIMAL:
        raise NumericFailure(f"operator LP: {out.status.value}: {out.message}")

    redispatch = np.array([out.value(f"p_{g}") for g in range(grid.n_generators)])
    upward = np.array([out.value(f"pi_{g}") for g in range(grid.n_generators)])
    flows = np.array([out.value(f"f_{i}") for i in range(grid.n_branches)])
    angles = np.array([out.value(f"th_{n}") for n in range(grid.n_buses)])
    return OperatorResponse(
        redispatch=redispatch,
        upward=upward,
        flows=flows,
        angles=angles,
        status=OperatorStatus.FEASIBLE,
        redispatch_cost=float(out.objective),
    )


def check_operator_response(grid: GridCase, attack: np.ndarray,
                            resp: OperatorResponse, tol: float = 1e-5) -> list[str]:
    """Arithmetic feasibility check of a response, independent of the solver."""
    problems = []
    pg0 = grid.base_dispatch()
    for g, gen in enumerate(grid.generators):
        if resp.upward[g] < -tol or resp.upward[g] < resp.redispatch[g] - tol:
            problems.append(f"gen {g}: upward {resp.upward[g]:.6g} below max(0, p*)")
        if not (gen.min_output - pg0[g] - tol <= resp.redispatch[g]
                <= gen.max_output - pg0[g] + tol):
            problems.append(f"gen {g}: redispatch {resp.redispatch[g]:.6g} out of range")
    b = grid.susceptances()
    for i, br in enumerate(grid.branches):
        expected = b[i] * (resp.angles[br.from_bus] - resp.angles[br.to_bus])
        if abs(resp.flows[i] - expected) > tol:
            problems.append(f"branch {i}: flow {resp.flows[i]:.6g} != B*dtheta {expected:.6g}")
        if abs(resp.flows[i]) > br.capacity + tol:
            problems.append(f"branch {i}: perceived flow exceeds capacity")
    seen = grid.demands() + attack
    lam = grid.incidence()
    inj = np.zeros(grid.n_buses)
    for g, gen in enumerate(grid.generators):
        inj[gen.bus] += pg0[g] + resp.redispatch[g]
    residual = inj - lam.T @ resp.flows - seen
    worst = float(np.max(np.abs(residual)))
    if worst > tol:
        problems.append(f"nodal balance residual {worst:.6g} MW")
    return problems


def resolve_base_dispatch(grid: GridCase, mode: str = "opf",
                          settings: SolverSettings | None = None) -> GridCase:
    """Return the grid with a balanced base dispatch.

    ``opf``: cost-minimal DC dispatch of the grid itself (always balanced
    and branch-feasible when one exists). ``case-pg``: the case file's PG
    column, rescaled proportionally so total generation matches total
    demand; generator limits must still hold after rescaling.
    """
    total_demand = float(grid.demands().sum())
    if mode == "case-pg":
        pg = grid.base_dispatch()
        total_pg = float(pg.sum())
        if total_pg <= 0:
            raise InfeasibleBaseDispatch("case PG column sums to zero; cannot rescale")
        scaled = pg * (total_demand / total_pg)
        for g, gen in enumerate(grid.generators):
            if not (gen.min_output - 1e-9 <= scaled[g] <= gen.max_output + 1e-9):
                raise InfeasibleBaseDispatch(
                    f"rescaled PG for generator {g} ({scaled[g]:.3f} MW) violates "
                    f"[{gen.min_output}, {gen.max_output}]"
                )
        return grid.with_base_dispatch(scaled)

    if mode != "opf":
        raise ValueError(f"unknown base dispatch mode {mode!r}")

    model = Model("base_dcopf")
    for g, gen in enumerate(grid.generators):
        model.add_variable(f"p_{g}", gen.min_output, gen.max_output)
    for i, br in enumerate(grid.branches):
        model.add_variable(f"f_{i}", -br.capacity, br.capacity)
    for n in range(grid.n_buses):
        if n == grid.reference_bus:
            model.add_variable(f"th_{n}", 0.0, 0.0)
        else:
            model.add_variable(f"th_{n}", -INF, INF)
    _add_dc_network(model, grid, grid.demands(), "p", "f", "th")
    model.set_objective(
        {f"p_{g}": float(gen.cost) for g, gen in enumerate(grid.generators)}, "min"
    )
    out = solver.solve(model, settings)
    if out.status == SolveStatus.INFEASIBLE:
        raise InfeasibleBaseDispatch("no feasible dispatch within branch capacities")
    if out.status != SolveStatus.OPTIMAL:
        raise NumericFailure(f"base OPF: {out.status.value}: {out.message}")
    dispatch = np.array([out.value(f"p_{g}") for g in range(grid.n_generators)])
    return grid.with_base_dispatch(dispatch)
