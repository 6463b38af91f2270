import dataclasses
from pathlib import Path

import numpy as np
import pytest

from lraid.grid import Branch, Bus, Generator, GridCase
from lraid.matpower import bundled_case_path, load_case

# A 3-bus ring small enough for sub-second attacker MILPs. Branches 1-3 and
# 2-3 sit exactly at their limits at the base point; shifting reported load
# from bus 2 to bus 3 forces the operator to raise the expensive unit, and
# the true flows then push branch 2-3 past its threshold.
CASE3_TEXT = """function mpc = case3_attack
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t135\t1\t1.05\t0.95;
\t2\t1\t100\t0\t0\t0\t1\t1\t0\t135\t1\t1.05\t0.95;
\t3\t1\t100\t0\t0\t0\t1\t1\t0\t135\t1\t1.05\t0.95;
];
mpc.gen = [
\t1\t80\t0\t50\t-50\t1\t100\t1\t300\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0;
\t3\t120\t0\t50\t-50\t1\t100\t1\t150\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0\t0;
];
mpc.branch = [
\t1\t2\t0.01\t0.1\t0\t92\t92\t92\t0\t0\t1\t-360\t360;
\t2\t3\t0.01\t0.1\t0\t40\t40\t40\t0\t0\t1\t-360\t360;
\t1\t3\t0.01\t0.1\t0\t20\t20\t20\t0\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t3\t0\t1\t0;
\t2\t0\t0\t3\t0\t10\t0;
];
"""


@pytest.fixture(scope="session")
def case3_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cases") / "case3_attack.m"
    path.write_text(CASE3_TEXT)
    return path


@pytest.fixture(scope="session")
def case3(case3_path) -> GridCase:
    return load_case(case3_path)


@pytest.fixture(scope="session")
def rts_path() -> Path:
    return bundled_case_path()


@pytest.fixture(scope="session")
def rts65(rts_path) -> GridCase:
    """Stressed RTS-96: 65% capacities, raw PG dispatch, zero minimum output."""
    grid = load_case(rts_path, capacity_scale=0.65)
    gens = tuple(dataclasses.replace(g, min_output=0.0) for g in grid.generators)
    return dataclasses.replace(grid, generators=gens)


def two_bus_grid(capacity: float = 150.0, x: float = 0.1) -> GridCase:
    """One generator at bus 0 feeding 100 MW at bus 1 over a single branch."""
    return GridCase(
        base_mva=100.0,
        buses=(Bus(1, 0.0), Bus(2, 100.0)),
        branches=(Branch(0, 1, x, capacity),),
        generators=(Generator(0, 100.0, 0.0, 200.0, 5.0),),
        reference_bus=0,
    )


def ring_grid() -> GridCase:
    """Three equal-reactance branches in a ring, used for hand-solved flows."""
    return GridCase(
        base_mva=100.0,
        buses=(Bus(1, 0.0), Bus(2, 90.0), Bus(3, 0.0)),
        branches=(Branch(0, 1, 0.1, 100.0), Branch(1, 2, 0.1, 100.0),
                  Branch(0, 2, 0.1, 100.0)),
        generators=(Generator(0, 90.0, 0.0, 200.0, 1.0),),
        reference_bus=0,
    )


def injections(grid: GridCase, values: dict[int, float]) -> np.ndarray:
    vec = np.zeros(grid.n_buses)
    for bus, val in values.items():
        vec[bus] = val
    return vec
