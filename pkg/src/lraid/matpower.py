"""MATPOWER case file parsing and grid construction.

Reads the subset of the MATPOWER ``.m`` format needed for DC studies:
``mpc.baseMVA`` and the ``mpc.bus``, ``mpc.gen``, ``mpc.branch`` and
``mpc.gencost`` matrices. Everything else (version strings, AC-only data,
unknown ``mpc.*`` fields) is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import Branch, Bus, DisconnectedGraph, Generator, GridCase, connected_components

# Bus table columns
BUS_I, BUS_TYPE, PD = 0, 1, 2
REF_BUS_TYPE = 3
# Gen table columns
GEN_BUS, PG, GEN_STATUS, PMAX, PMIN = 0, 1, 7, 8, 9
# Branch table columns
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
# Gencost columns
COST_MODEL, NCOST = 0, 3
POLYNOMIAL = 2
PIECEWISE = 1

_MIN_COLUMNS = {"bus": 13, "gen": 21, "branch": 13, "gencost": 4}
_TABLES = ("bus", "gen", "branch", "gencost")


class CaseFormatError(ValueError):
    """Base class for case file format problems."""


class MissingTable(CaseFormatError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"case file has no mpc.{name} table")


class MalformedRow(CaseFormatError):
    def __init__(self, table: str, row: int, reason: str):
        self.table, self.row, self.reason = table, row, reason
        super().__init__(f"mpc.{table} row {row}: {reason}")


class NonNumericToken(CaseFormatError):
    def __init__(self, location: str, token: str):
        self.location, self.token = location, token
        super().__init__(f"non-numeric token {token!r} at {location}")


class NonPositiveReactance(CaseFormatError):
    def __init__(self, branch: int, value: float):
        self.branch, self.value = branch, value
        super().__init__(f"branch row {branch}: reactance {value} must be positive")


class NonPositiveCapacity(CaseFormatError):
    def __init__(self, branch: int, value: float):
        self.branch, self.value = branch, value
        super().__init__(f"branch row {branch}: capacity {value} must be positive")


@dataclass(frozen=True)
class RawCaseTables:
    """Numeric tables as read from the file, before any interpretation."""

    base_mva: float
    bus_table: np.ndarray
    gen_table: np.ndarray
    branch_table: np.ndarray
    gencost_table: np.ndarray


def _strip_comments(text: str) -> str:
    return re.sub(r"%[^\n]*", "", text)


_NUMBER = re.compile(r"[-+0-9.eE]+$")


def _parse_matrix(name: str, block: str) -> np.ndarray:
    rows: list[list[float]] = []
    # Rows end at ';' or at a newline; both separators appear in the wild.
    for raw in re.split(r"[;\n]", block):
        tokens = raw.split()
        if not tokens:
            continue
        values = []
        for tok in tokens:
            try:
                values.append(float(tok))
            except ValueError:
                raise NonNumericToken(f"mpc.{name} row {len(rows)}", tok) from None
        rows.append(values)
    if not rows:
        raise MissingTable(name)
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise MalformedRow(name, i, f"expected {width} columns, found {len(row)}")
    if width < _MIN_COLUMNS[name]:
        raise MalformedRow(name, 0, f"expected >= {_MIN_COLUMNS[name]} columns, found {width}")
    return np.array(rows, dtype=float)


def parse_case(text: str) -> RawCaseTables:
    """Parse MATPOWER case text into raw numeric tables."""
    text = _strip_comments(text)

    match = re.search(r"mpc\.baseMVA\s*=\s*([^;\s]+)\s*;", text)
    if not match:
        raise MissingTable("baseMVA")
    try:
        base_mva = float(match.group(1))
    except ValueError:
        raise NonNumericToken("mpc.baseMVA", match.group(1)) from None
    if base_mva <= 0:
        raise MalformedRow("baseMVA", 0, f"base MVA {base_mva} must be positive")

    tables: dict[str, np.ndarray] = {}
    for match in re.finditer(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", text, re.DOTALL):
        name, block = match.group(1), match.group(2)
        if name in _TABLES:
            tables[name] = _parse_matrix(name, block)
    for name in _TABLES:
        if name not in tables:
            raise MissingTable(name)

    return RawCaseTables(
        base_mva=base_mva,
        bus_table=tables["bus"],
        gen_table=tables["gen"],
        branch_table=tables["branch"],
        gencost_table=tables["gencost"],
    )


def _linear_cost(gencost_row: np.ndarray, gen_row_index: int) -> float:
    """First-order cost coefficient in currency/MWh.

    Polynomial rows use the linear term; piecewise-linear rows use the slope
    of the first segment. The lower-level redispatch problem is linear in the
    upward move, so higher-order terms are dropped.
    """
    model = int(gencost_row[COST_MODEL])
    n = int(gencost_row[NCOST])
    coeffs = gencost_row[4 : 4 + (2 * n if model == PIECEWISE else n)]
    if model == POLYNOMIAL:
        if n < 2:
            return 0.0
        return float(coeffs[n - 2])
    if model == PIECEWISE:
        if n < 2:
            raise MalformedRow("gencost", gen_row_index, "piecewise row needs >= 2 points")
        x0, y0, x1, y1 = coeffs[0], coeffs[1], coeffs[2], coeffs[3]
        if x1 == x0:
            raise MalformedRow("gencost", gen_row_index, "zero-width piecewise segment")
        return float((y1 - y0) / (x1 - x0))
    raise MalformedRow("gencost", gen_row_index, f"unknown cost model {model}")


def build_grid(tables: RawCaseTables, capacity_scale: float = 1.0) -> GridCase:
    """Build a GridCase from raw tables, scaling all branch capacities.

    Out-of-service branches and generators are dropped. Base dispatch is
    taken verbatim from the PG column; balancing it against total demand is
    a separate step (see ``lraid.redispatch.resolve_base_dispatch``).
    """
    if not (0.0 < capacity_scale <= 1.0):
        raise ValueError(f"capacity_scale {capacity_scale} outside (0, 1]")

    bus_ids = [int(v) for v in tables.bus_table[:, BUS_I]]
    if len(set(bus_ids)) != len(bus_ids):
        raise MalformedRow("bus", 0, "duplicate bus ids")
    index_of = {ext: i for i, ext in enumerate(bus_ids)}
    buses = tuple(
        Bus(ext_id=int(row[BUS_I]), demand=float(row[PD])) for row in tables.bus_table
    )

    reference = 0
    ref_rows = np.flatnonzero(tables.bus_table[:, BUS_TYPE].astype(int) == REF_BUS_TYPE)
    if ref_rows.size:
        reference = int(ref_rows[0])

    branches = []
    for i, row in enumerate(tables.branch_table):
        if int(row[BR_STATUS]) == 0:
            continue
        x = float(row[BR_X])
        if x <= 0:
            raise NonPositiveReactance(i, x)
        rate = float(row[RATE_A])
        if rate <= 0:
            raise NonPositiveCapacity(i, rate)
        for end in (F_BUS, T_BUS):
            if int(row[end]) not in index_of:
                raise MalformedRow("branch", i, f"unknown bus id {int(row[end])}")
        branches.append(
            Branch(
                from_bus=index_of[int(row[F_BUS])],
                to_bus=index_of[int(row[T_BUS])],
                reactance=x,
                capacity=capacity_scale * rate,
            )
        )

    if len(tables.gencost_table) < len(tables.gen_table):
        raise MalformedRow(
            "gencost",
            len(tables.gencost_table),
            f"{len(tables.gen_table)} generators but {len(tables.gencost_table)} cost rows",
        )
    generators = []
    for i, row in enumerate(tables.gen_table):
        if int(row[GEN_STATUS]) <= 0:
            continue
        if int(row[GEN_BUS]) not in index_of:
            raise MalformedRow("gen", i, f"unknown bus id {int(row[GEN_BUS])}")
        cost = _linear_cost(tables.gencost_table[i], i)
        if cost < 0:
            raise MalformedRow("gencost", i, f"negative marginal cost {cost}")
        generators.append(
            Generator(
                bus=index_of[int(row[GEN_BUS])],
                base_dispatch=float(row[PG]),
                min_output=float(row[PMIN]),
                max_output=float(row[PMAX]),
                cost=cost,
            )
        )

    grid = GridCase(
        base_mva=tables.base_mva,
        buses=buses,
        branches=tuple(branches),
        generators=tuple(generators),
        reference_bus=reference,
        provenance="true",
    )
    components = connected_components(grid)
    if len(components) != 1:
        raise DisconnectedGraph(components)
    return grid


def load_case(path: str | Path, capacity_scale: float = 1.0) -> GridCase:
    """Parse a case file from disk and build the grid."""
    text = Path(path).read_text(encoding="utf-8", errors="ignore")
    return build_grid(parse_case(text), capacity_scale)


def bundled_case_path(name: str = "case24_ieee_rts") -> Path:
    """Path to a case file shipped with the package."""
    return Path(str(resources.files("lraid").joinpath("data", f"{name}.m")))
