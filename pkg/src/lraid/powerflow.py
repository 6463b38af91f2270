"""DC power flow and overload measurement on a GridCase.

Flows are solved from the reduced nodal susceptance system (reference row
and column removed, dense factorization); grids at this scale need nothing
sparser. All flows are in MW.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INJECTION_TOL_MW = 1e-6


class PowerFlowError(ValueError):
    pass


class UnbalancedInjections(PowerFlowError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"injections sum to {residual:.6g} MW, expected 0")


class SingularSystem(PowerFlowError):
    pass


@dataclass(frozen=True)
class FlowState:
    angles: np.ndarray        # radians per bus, 0 at reference
    flows: np.ndarray         # MW per branch, positive from -> to
    reference_bus: int


@dataclass(frozen=True)
class Overload:
    branch: int
    direction: int            # +1 or -1, sign of the flow
    loading_ratio: float      # |f| / capacity
    excess: float             # |f| - capacity, MW
    measurable_excess: float  # |f| - threshold * capacity, MW


@dataclass(frozen=True)
class ImpactReport:
    """Overloads of a flow state against branch capacities and thresholds.

    ``overloaded`` lists branches at or above the per-branch threshold ratio.
    ``total_impact`` is the summed measurable excess, i.e. the flow magnitude
    beyond threshold * capacity, which is the quantity the attacker's
    objective counts. Overloads below the threshold are kept visible in
    ``sub_threshold`` but contribute nothing.
    """

    overloaded: tuple[Overload, ...]
    count_above_threshold: int
    total_impact: float
    sub_threshold: tuple[Overload, ...] = field(default_factory=tuple)

    def branch_set(self) -> frozenset[int]:
        return frozenset(o.branch for o in self.overloaded)


def nodal_susceptance(grid) -> np.ndarray:
    """Dense bus susceptance matrix in MW per radian."""
    n = grid.n_buses
    b = grid.susceptances()
    mat = np.zeros((n, n))
    for i, br in enumerate(grid.branches):
        f, t = br.from_bus, br.to_bus
        mat[f, f] += b[i]
        mat[t, t] += b[i]
        mat[f, t] -= b[i]
        mat[t, f] -= b[i]
    return mat


def ptdf_matrix(grid, reference: int | None = None) -> np.ndarray:
    """Branch x bus sensitivities of flows to injections (reference absorbs)."""
    ref = grid.reference_bus if reference is None else reference
    n = grid.n_buses
    keep = [i for i in range(n) if i != ref]
    mat = nodal_susceptance(grid)
    try:
        inv = np.linalg.inv(mat[np.ix_(keep, keep)])
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    theta = np.zeros((n, n))
    theta[np.ix_(keep, keep)] = inv
    b = grid.susceptances()
    ptdf = np.zeros((grid.n_branches, n))
    for i, br in enumerate(grid.branches):
        ptdf[i] = b[i] * (theta[br.from_bus] - theta[br.to_bus])
    return ptdf


def solve_dc_flow(grid, injections: np.ndarray, reference: int | None = None) -> FlowState:
    """Solve angles and branch flows for the given net MW injections."""
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (grid.n_buses,):
        raise PowerFlowError(
            f"expected {grid.n_buses} injections, got shape {injections.shape}"
        )
    residual = float(injections.sum())
    if abs(residual) > INJECTION_TOL_MW:
        raise UnbalancedInjections(residual)
    ref = grid.reference_bus if reference is None else reference

    mat = nodal_susceptance(grid)
    keep = [i for i in range(grid.n_buses) if i != ref]
    reduced = mat[np.ix_(keep, keep)]
    try:
        theta_reduced = np.linalg.solve(reduced, injections[keep])
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc

    angles = np.zeros(grid.n_buses)
    angles[keep] = theta_reduced
    b = grid.susceptances()
    flows = np.array(
        [b[i] * (angles[br.from_bus] - angles[br.to_bus]) for i, br in enumerate(grid.branches)]
    )
    return FlowState(angles=angles, flows=flows, reference_bus=ref)


def measure_impact(grid, flows: FlowState | np.ndarray, thresholds) -> ImpactReport:
    """Classify branch loadings against capacity and overload thresholds.

    ``thresholds`` is a scalar ratio >= 1 or a per-branch array of ratios.
    """
    f = flows.flows if isinstance(flows, FlowState) else np.asarray(flows, dtype=float)
    rho = np.broadcast_to(np.asarray(thresholds, dtype=float), (grid.n_branches,))
    if np.any(rho < 1.0):
        raise ValueError("overload thresholds must be >= 1")
    cap = grid.capacities()

    overloaded: list[Overload] = []
    sub: list[Overload] = []
    for i in range(grid.n_branches):
        magnitude = abs(f[i])
        if magnitude <= cap[i]:
            continue
        record = Overload(
            branch=i,
            direction=1 if f[i] >= 0 else -1,
            loading_ratio=magnitude / cap[i],
            excess=magnitude - cap[i],
            measurable_excess=magnitude - rho[i] * cap[i],
        )
        if magnitude >= rho[i] * cap[i]:
            overloaded.append(record)
        else:
            sub.append(record)
    return ImpactReport(
        overloaded=tuple(overloaded),
        count_above_threshold=len(overloaded),
        total_impact=float(sum(o.measurable_excess for o in overloaded)),
        sub_threshold=tuple(sub),
    )
