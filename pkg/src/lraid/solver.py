"""Thin abstraction over the LP/MILP solver.

Model building stays solver-agnostic; the single backend here is HiGHS as
shipped inside scipy (``linprog`` for pure LPs, ``milp`` when any binary is
present). HiGHS runs single-threaded and deterministically for identical
input, which is what campaign reproducibility relies on; the ``seed`` in
``SolverSettings`` is recorded for provenance but the backend ignores it.

Models can be dumped to and re-read from CPLEX-style LP text for debugging.
Variable and constraint names must therefore stay within ``[A-Za-z_][\\w]*``.
"""

from __future__ import annotations

import enum
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

try:
    from scipy.optimize import Bounds, LinearConstraint, linprog, milp
except ImportError as exc:  # pragma: no cover
    raise ImportError("scipy >= 1.11 with HiGHS is required") from exc

CONTINUOUS = "continuous"
BINARY = "binary"

LESS, EQUAL, GREATER = "<=", "=", ">="

INF = math.inf


class ModelError(ValueError):
    """Ill-formed model: unknown variable, bad sense, duplicate name."""


class BackendUnavailable(RuntimeError):
    pass


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIME_LIMIT = "time_limit"
    NUMERIC_FAILURE = "numeric_failure"


@dataclass
class SolverSettings:
    time_limit: float = 60.0
    mip_gap: float = 1e-9
    deterministic: bool = True
    seed: int = 0


@dataclass
class SolveOutcome:
    status: SolveStatus
    objective: float | None = None
    values: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] | None = None          # LP only: constraint name -> marginal
    bound_duals: dict[str, tuple[float, float]] | None = None  # LP only: (lower, upper)
    message: str = ""

    def value(self, name: str) -> float:
        return self.values[name]


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


class Model:
    """A named LP/MILP: variables with bounds, linear constraints, objective."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: dict[str, tuple[float, float, str]] = {}
        self.constraints: dict[str, tuple[dict[str, float], str, float]] = {}
        self.objective: dict[str, float] = {}
        self.sense: str = "min"

    def add_variable(self, name: str, lb: float = 0.0, ub: float = INF,
                     kind: str = CONTINUOUS) -> str:
        if name in self.variables:
            raise ModelError(f"duplicate variable {name}")
        if not _NAME_RE.match(name):
            raise ModelError(f"invalid variable name {name!r}")
        if kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY and not (0.0 <= lb and ub <= 1.0):
            raise ModelError(f"binary variable {name} must have bounds within [0, 1]")
        if lb > ub:
            raise ModelError(f"variable {name}: lower bound {lb} above upper bound {ub}")
        self.variables[name] = (lb, ub, kind)
        return name

    def add_constraint(self, name: str, terms: dict[str, float], sense: str,
                       rhs: float) -> str:
        if name in self.constraints:
            raise ModelError(f"duplicate constraint {name}")
        if not _NAME_RE.match(name):
            raise ModelError(f"invalid constraint name {name!r}")
        if sense not in (LESS, EQUAL, GREATER):
            raise ModelError(f"unknown sense {sense!r}")
        for var in terms:
            if var not in self.variables:
                raise ModelError(f"constraint {name} references unknown variable {var}")
        self.constraints[name] = (dict(terms), sense, float(rhs))
        return name

    def set_objective(self, terms: dict[str, float], sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"objective sense must be min or max, got {sense!r}")
        for var in terms:
            if var not in self.variables:
                raise ModelError(f"objective references unknown variable {var}")
        self.objective = dict(terms)
        self.sense = sense

    @property
    def has_free_binaries(self) -> bool:
        return any(kind == BINARY and lb != ub
                   for lb, ub, kind in self.variables.values())

    def fix_binaries(self, values: dict[str, float]) -> "Model":
        """Copy of the model with the given binaries pinned as continuous."""
        clone = Model(self.name + "_fixed")
        for name, (lb, ub, kind) in self.variables.items():
            if kind == BINARY:
                v = float(round(values[name])) if name in values else None
                if v is None:
                    clone.variables[name] = (lb, ub, kind)
                else:
                    clone.variables[name] = (v, v, CONTINUOUS)
            else:
                clone.variables[name] = (lb, ub, kind)
        clone.constraints = {k: (dict(t), s, r) for k, (t, s, r) in self.constraints.items()}
        clone.objective = dict(self.objective)
        clone.sense = self.sense
        return clone

    # ---------------- LP text format ----------------

    def to_lp(self) -> str:
        lines = [f"\\ {self.name}"]
        lines.append("Maximize" if self.sense == "max" else "Minimize")
        lines.append(" obj:" + _terms_to_lp(self.objective))
        lines.append("Subject To")
        for name, (terms, sense, rhs) in self.constraints.items():
            lines.append(f" {name}:{_terms_to_lp(terms)} {sense} {rhs!r}")
        lines.append("Bounds")
        binaries = []
        for name, (lb, ub, kind) in self.variables.items():
            if kind == BINARY:
                binaries.append(name)
                if lb == ub:
                    lines.append(f" {name} = {lb!r}")
                continue
            if lb == -INF and ub == INF:
                lines.append(f" {name} free")
            elif lb == ub:
                lines.append(f" {name} = {lb!r}")
            elif lb == -INF:
                lines.append(f" {name} <= {ub!r}")
            elif ub == INF:
                lines.append(f" {name} >= {lb!r}")
            else:
                lines.append(f" {lb!r} <= {name} <= {ub!r}")
        if binaries:
            lines.append("Binary")
            for name in binaries:
                lines.append(f" {name}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_lp(cls, text: str) -> "Model":
        return _parse_lp(cls, text)


def _terms_to_lp(terms: dict[str, float]) -> str:
    parts = []
    for var, coef in terms.items():
        sign = "-" if coef < 0 else "+"
        parts.append(f" {sign} {abs(coef)!r} {var}")
    return "".join(parts) if parts else " 0 __zero__"


_TERM_RE = re.compile(
    r"\s*([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*([A-Za-z_][A-Za-z0-9_]*)"
)


def _parse_terms(expr: str, where: str) -> dict[str, float]:
    terms: dict[str, float] = {}
    pos = 0
    while pos < len(expr):
        match = _TERM_RE.match(expr, pos)
        if not match:
            if expr[pos:].strip():
                raise ModelError(f"cannot parse terms near {expr[pos:]!r} in {where}")
            break
        sign, coef, var = match.groups()
        value = float(coef) if coef else 1.0
        if sign == "-":
            value = -value
        if var != "__zero__":
            terms[var] = terms.get(var, 0.0) + value
        pos = match.end()
    return terms


def _parse_lp(cls, text: str) -> Model:
    model = cls()
    lines = []
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].rstrip()
        if line.strip():
            lines.append(line)

    section = None
    seen_vars: dict[str, tuple[float, float, str]] = {}
    constraint_rows: list[tuple[str, dict[str, float], str, float]] = []
    objective: dict[str, float] = {}
    binaries: list[str] = []
    pending = ""  # constraints may wrap across lines

    def flush_constraint(buffer: str) -> None:
        if not buffer.strip():
            return
        name, _, body = buffer.partition(":")
        match = re.search(r"(<=|>=|=)\s*([-+0-9.eE]+)\s*$", body)
        if not match:
            raise ModelError(f"constraint {name.strip()!r} has no sense/rhs")
        terms = _parse_terms(body[: match.start()], name.strip())
        constraint_rows.append((name.strip(), terms, match.group(1), float(match.group(2))))

    for line in lines:
        lowered = line.strip().lower()
        if lowered in ("minimize", "maximize"):
            model.sense = "min" if lowered == "minimize" else "max"
            section = "objective"
            continue
        if lowered in ("subject to", "st", "s.t."):
            flush_constraint(pending)
            pending = ""
            section = "constraints"
            continue
        if lowered == "bounds":
            flush_constraint(pending)
            pending = ""
            section = "bounds"
            continue
        if lowered in ("binary", "binaries"):
            section = "binary"
            continue
        if lowered == "end":
            flush_constraint(pending)
            pending = ""
            break

        if section == "objective":
            body = line.partition(":")[2] if ":" in line else line
            objective.update(_parse_terms(body, "objective"))
        elif section == "constraints":
            if ":" in line and pending:
                flush_constraint(pending)
                pending = line
            else:
                pending += " " + line
        elif section == "bounds":
            stripped = line.strip()
            if stripped.lower().endswith(" free"):
                seen_vars[stripped[: -len(" free")].strip()] = (-INF, INF, CONTINUOUS)
                continue
            two_sided = re.match(
                r"([-+0-9.eE]+)\s*<=\s*([A-Za-z_][A-Za-z0-9_]*)\s*<=\s*([-+0-9.eE]+)$",
                stripped,
            )
            if two_sided:
                lo, name, hi = two_sided.groups()
                seen_vars[name] = (float(lo), float(hi), CONTINUOUS)
                continue
            one_sided = re.match(
                r"([A-Za-z_][A-Za-z0-9_]*)\s*(<=|>=|=)\s*([-+0-9.eE]+)$", stripped
            )
            if not one_sided:
                raise ModelError(f"cannot parse bound line {stripped!r}")
            name, sense, value = one_sided.groups()
            v = float(value)
            if sense == "<=":
                seen_vars[name] = (-INF, v, CONTINUOUS)
            elif sense == ">=":
                seen_vars[name] = (v, INF, CONTINUOUS)
            else:
                seen_vars[name] = (v, v, CONTINUOUS)
        elif section == "binary":
            binaries.extend(line.split())

    # Collect every referenced variable; LP default bounds are [0, inf).
    referenced: list[str] = []
    for var in objective:
        referenced.append(var)
    for _, terms, _, _ in constraint_rows:
        referenced.extend(terms)
    for var in referenced:
        if var not in seen_vars:
            seen_vars[var] = (0.0, INF, CONTINUOUS)
    for name in binaries:
        lb, ub, _ = seen_vars.get(name, (0.0, 1.0, BINARY))
        lb = max(lb, 0.0) if lb != -INF else 0.0
        ub = min(ub, 1.0)
        seen_vars[name] = (lb, ub, BINARY)

    for name, (lb, ub, kind) in seen_vars.items():
        model.add_variable(name, lb, ub, kind)
    for name, terms, sense, rhs in constraint_rows:
        model.add_constraint(name, terms, sense, rhs)
    model.set_objective(objective, model.sense)
    return model


# ---------------- solving ----------------

_STATUS_MAP = {
    0: SolveStatus.OPTIMAL,
    1: SolveStatus.TIME_LIMIT,
    2: SolveStatus.INFEASIBLE,
    3: SolveStatus.UNBOUNDED,
    4: SolveStatus.NUMERIC_FAILURE,
}


def _matrices(model: Model):
    names = list(model.variables)
    index = {n: i for i, n in enumerate(names)}
    lb = np.array([model.variables[n][0] for n in names])
    ub = np.array([model.variables[n][1] for n in names])
    integrality = np.array(
        [1 if model.variables[n][2] == BINARY else 0 for n in names]
    )
    c = np.zeros(len(names))
    for var, coef in model.objective.items():
        c[index[var]] = coef
    if model.sense == "max":
        c = -c
    return names, index, lb, ub, integrality, c


def solve(model: Model, settings: SolverSettings | None = None) -> SolveOutcome:
    """Solve the model; routes to HiGHS MILP or LP depending on binaries."""
    settings = settings or SolverSettings()
    if model.has_free_binaries:
        return _solve_milp(model, settings)
    return _solve_lp(model, settings)


def _solve_milp(model: Model, settings: SolverSettings) -> SolveOutcome:
    names, index, lb, ub, integrality, c = _matrices(model)
    rows, cols, data = [], [], []
    clb, cub = [], []
    for r, (terms, sense, rhs) in enumerate(model.constraints.values()):
        for var, coef in terms.items():
            rows.append(r)
            cols.append(index[var])
            data.append(coef)
        if sense == LESS:
            clb.append(-INF)
            cub.append(rhs)
        elif sense == GREATER:
            clb.append(rhs)
            cub.append(INF)
        else:
            clb.append(rhs)
            cub.append(rhs)
    n_rows = len(model.constraints)
    a = sp.csr_matrix((data, (rows, cols)), shape=(n_rows, len(names)))
    # Default HiGHS MIP tolerances (1e-6) let presolve prune legitimate
    # optima of big-M models; pin them tight. The unrecognized-option
    # passthrough triggers a RuntimeWarning from scipy, which is expected.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = milp(
            c,
            constraints=LinearConstraint(a, np.array(clb), np.array(cub)),
            integrality=integrality,
            bounds=Bounds(lb, ub),
            options={
                "time_limit": settings.time_limit,
                "mip_rel_gap": settings.mip_gap,
                "disp": False,
                "mip_feasibility_tolerance": 1e-8,
                "primal_feasibility_tolerance": 1e-8,
                "random_seed": int(settings.seed) % (2**31 - 1),
            },
        )
    status = _STATUS_MAP.get(res.status, SolveStatus.NUMERIC_FAILURE)
    values: dict[str, float] = {}
    objective = None
    if res.x is not None:
        values = {n: float(v) for n, v in zip(names, res.x)}
        objective = float(res.fun) if model.sense == "min" else -float(res.fun)
    elif status == SolveStatus.OPTIMAL:
        status = SolveStatus.NUMERIC_FAILURE
    return SolveOutcome(status=status, objective=objective, values=values,
                        message=str(res.message))


def _solve_lp(model: Model, settings: SolverSettings) -> SolveOutcome:
    names, index, lb, ub, _, c = _matrices(model)
    ub_rows: list[tuple[str, float, float]] = []  # name, rhs, orientation
    eq_rows: list[tuple[str, float]] = []
    ub_coo: tuple[list, list, list] = ([], [], [])
    eq_coo: tuple[list, list, list] = ([], [], [])
    for name, (terms, sense, rhs) in model.constraints.items():
        if sense == EQUAL:
            r = len(eq_rows)
            for var, coef in terms.items():
                eq_coo[0].append(r)
                eq_coo[1].append(index[var])
                eq_coo[2].append(coef)
            eq_rows.append((name, rhs))
        else:
            orient = 1.0 if sense == LESS else -1.0
            r = len(ub_rows)
            for var, coef in terms.items():
                ub_coo[0].append(r)
                ub_coo[1].append(index[var])
                ub_coo[2].append(orient * coef)
            ub_rows.append((name, orient * rhs, orient))

    n = len(names)
    a_ub = sp.csr_matrix((ub_coo[2], (ub_coo[0], ub_coo[1])),
                         shape=(len(ub_rows), n)) if ub_rows else None
    b_ub = np.array([b for _, b, _ in ub_rows]) if ub_rows else None
    a_eq = sp.csr_matrix((eq_coo[2], (eq_coo[0], eq_coo[1])),
                         shape=(len(eq_rows), n)) if eq_rows else None
    b_eq = np.array([b for _, b in eq_rows]) if eq_rows else None

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = linprog(
            c,
            A_ub=a_ub,
            b_ub=b_ub,
            A_eq=a_eq,
            b_eq=b_eq,
            bounds=np.column_stack([lb, ub]),
            method="highs",
            options={
                "time_limit": settings.time_limit,
                "disp": False,
                "primal_feasibility_tolerance": 1e-9,
                "dual_feasibility_tolerance": 1e-9,
            },
        )
    status = _STATUS_MAP.get(res.status, SolveStatus.NUMERIC_FAILURE)
    if status != SolveStatus.OPTIMAL:
        return SolveOutcome(status=status, message=str(res.message))

    values = {n: float(v) for n, v in zip(names, res.x)}
    objective = float(res.fun) if model.sense == "min" else -float(res.fun)
    # Marginals are sensitivities of the minimized objective; normalize them
    # to the model's declared sense and original constraint orientation.
    flip = -1.0 if model.sense == "max" else 1.0
    duals: dict[str, float] = {}
    if ub_rows:
        for (name, _, orient), m in zip(ub_rows, res.ineqlin.marginals):
            duals[name] = flip * orient * float(m)
    if eq_rows:
        for (name, _), m in zip(eq_rows, res.eqlin.marginals):
            duals[name] = flip * float(m)
    bound_duals = {
        n: (flip * float(lo), flip * float(hi))
        for n, lo, hi in zip(names, res.lower.marginals, res.upper.marginals)
    }
    return SolveOutcome(
        status=status,
        objective=objective,
        values=values,
        duals=duals,
        bound_duals=bound_duals,
        message=str(res.message),
    )


def dual_objective(model: Model, outcome: SolveOutcome) -> float:
    """Dual objective implied by the returned marginals (LP duality check)."""
    if outcome.duals is None or outcome.bound_duals is None:
        raise ValueError("dual values are only available for pure-LP solves")
    total = 0.0
    for name, (_, sense, rhs) in model.constraints.items():
        total += outcome.duals.get(name, 0.0) * rhs
    for name, (lb, ub, _) in model.variables.items():
        low, high = outcome.bound_duals[name]
        if low != 0.0 and lb != -INF:
            total += low * lb
        if high != 0.0 and ub != INF:
            total += high * ub
    return total
