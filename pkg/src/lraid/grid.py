"""Core grid data model shared by every stage of the pipeline.

All quantities are kept in physical units: demands, dispatches and flows in
MW, reactances in per-unit on ``base_mva``. A grid carries a provenance tag
("true" or "perceived") so that the attacker never accidentally optimizes
on the true data and the operator never reacts on falsified data.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

TRUE = "true"
PERCEIVED = "perceived"

BALANCE_TOL_MW = 1e-6


class GridError(ValueError):
    """Invalid grid data."""


class DisconnectedGraph(GridError):
    def __init__(self, components: list[list[int]]):
        self.components = components
        super().__init__(f"grid graph is disconnected: {len(components)} components")


class UnbalancedDispatch(GridError):
    def __init__(self, residual_mw: float):
        self.residual_mw = residual_mw
        super().__init__(f"total dispatch differs from total demand by {residual_mw:.6g} MW")


@dataclass(frozen=True)
class Bus:
    ext_id: int          # bus number as given in the case file
    demand: float        # active power demand d_n, MW


@dataclass(frozen=True)
class Branch:
    from_bus: int        # internal bus index
    to_bus: int          # internal bus index
    reactance: float     # X_l, per-unit on base_mva
    capacity: float      # flow limit, MW


@dataclass(frozen=True)
class Generator:
    bus: int             # internal bus index
    base_dispatch: float  # p_g0, MW
    min_output: float    # MW
    max_output: float    # MW
    cost: float          # upward redispatch marginal cost, currency/MWh


@dataclass(frozen=True)
class GridCase:
    """Immutable grid description, either the true data or an attacker's copy."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    reference_bus: int = 0
    provenance: str = TRUE

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    def demands(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=float)

    def reactances(self) -> np.ndarray:
        return np.array([br.reactance for br in self.branches], dtype=float)

    def capacities(self) -> np.ndarray:
        return np.array([br.capacity for br in self.branches], dtype=float)

    def susceptances(self) -> np.ndarray:
        """Branch susceptances in MW per radian (base_mva / X_l)."""
        return self.base_mva / self.reactances()

    def base_dispatch(self) -> np.ndarray:
        return np.array([g.base_dispatch for g in self.generators], dtype=float)

    def gen_costs(self) -> np.ndarray:
        return np.array([g.cost for g in self.generators], dtype=float)

    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    def base_injections(self) -> np.ndarray:
        """Net MW injection per bus at the base dispatch (generation minus demand)."""
        inj = -self.demands()
        for g in self.generators:
            inj[g.bus] += g.base_dispatch
        return inj

    def incidence(self) -> np.ndarray:
        """Branch-bus incidence: +1 at from_bus, -1 at to_bus."""
        lam = np.zeros((self.n_branches, self.n_buses))
        for i, br in enumerate(self.branches):
            lam[i, br.from_bus] = 1.0
            lam[i, br.to_bus] = -1.0
        return lam

    def with_provenance(self, provenance: str) -> "GridCase":
        return dataclasses.replace(self, provenance=provenance)

    def with_base_dispatch(self, dispatch: np.ndarray) -> "GridCase":
        gens = tuple(
            dataclasses.replace(g, base_dispatch=float(p))
            for g, p in zip(self.generators, dispatch)
        )
        return dataclasses.replace(self, generators=gens)


def connected_components(grid: GridCase) -> list[list[int]]:
    """Connected components of the branch graph, as lists of internal bus indices."""
    adjacency: list[list[int]] = [[] for _ in range(grid.n_buses)]
    for br in grid.branches:
        adjacency[br.from_bus].append(br.to_bus)
        adjacency[br.to_bus].append(br.from_bus)
    seen = [False] * grid.n_buses
    components = []
    for start in range(grid.n_buses):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt in adjacency[node]:
                if not seen[nxt]:
                    seen[nxt] = True
                    stack.append(nxt)
        components.append(sorted(comp))
    return components


def validate_grid(grid: GridCase, require_balance: bool = False) -> None:
    """Check structural invariants; optionally require dispatch/demand balance."""
    if grid.base_mva <= 0:
        raise GridError("base_mva must be positive")
    for i, br in enumerate(grid.branches):
        if br.reactance <= 0:
            raise GridError(f"branch {i}: non-positive reactance {br.reactance}")
        if br.capacity <= 0:
            raise GridError(f"branch {i}: non-positive capacity {br.capacity}")
    for i, b in enumerate(grid.buses):
        if b.demand < 0:
            raise GridError(f"bus {i}: negative demand {b.demand}")
    for i, g in enumerate(grid.generators):
        if not (g.min_output <= g.base_dispatch <= g.max_output + 1e-9):
            raise GridError(
                f"generator {i}: dispatch {g.base_dispatch} outside "
                f"[{g.min_output}, {g.max_output}]"
            )
        if g.cost < 0:
            raise GridError(f"generator {i}: negative cost {g.cost}")
    components = connected_components(grid)
    if len(components) != 1:
        raise DisconnectedGraph(components)
    if require_balance:
        residual = float(grid.base_dispatch().sum() - grid.demands().sum())
        if abs(residual) > BALANCE_TOL_MW:
            raise UnbalancedDispatch(residual)
