"""Attacker's bilevel load-redistribution problem as a single-level MILP.

The attacker picks which load meters to falsify and by how much, anticipating
that the operator will redispatch against the falsified loads, so that the
resulting flows (on the attacker's copy of the grid data) overload at least a
minimum number of branches beyond a threshold ratio. The operator's LP is
embedded through its KKT conditions; complementary slackness is linearized
with a fresh binary and a big-M pair per lower-level inequality.

Overload bookkeeping per branch: three exclusive flags (positive overload,
negative overload, none). A flag may only be raised when the flow magnitude
reaches ``rho * capacity``, and the measured overload ``r`` equals the flow
magnitude beyond that threshold, which is what the objective maximizes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import solver
from .grid import GridCase
from .redispatch import NumericFailure, OperatorResponse, OperatorStatus
from .solver import EQUAL, GREATER, INF, LESS, Model, SolverSettings, SolveStatus

RECHECK_TOL_MW = 1e-5
PERFECT_MATCH_TOL_MW = 1e-3  # attack vectors closer than this count as equal


class ConfigError(ValueError):
    pass


class SolverTimeLimit(RuntimeError):
    def __init__(self, message: str, incumbent: "AttackerSolution | None" = None):
        super().__init__(message)
        self.incumbent = incumbent


class AttackStatus(enum.Enum):
    FOUND = "found"
    NO_FEASIBLE_ATTACK = "no_feasible_attack"


@dataclass(frozen=True)
class AttackerConfig:
    """Attacker resources and intent.

    min_overloads may be 0 to disable the minimum-overload constraint (used
    by diagnostic solves); campaigns use >= 1.
    """

    min_overloads: int = 2          # U
    budget: int = 10                # A, max falsified meters
    epsilon: float = 0.20           # max relative false data per meter
    rho: float = 1.05               # overload threshold ratio, >= 1
    kkt_dual_big_m: float = 1e4     # cap on lower-level duals
    big_m_scale: float = 1.0        # uniform inflation, doubled on retry

    def __post_init__(self):
        if self.min_overloads < 0:
            raise ConfigError(f"min_overloads {self.min_overloads} must be >= 0")
        if self.budget < 0:
            raise ConfigError(f"budget {self.budget} must be >= 0")
        if not (0.0 <= self.epsilon < 1.0):
            raise ConfigError(f"epsilon {self.epsilon} outside [0, 1)")
        if self.rho < 1.0:
            raise ConfigError(f"rho {self.rho} must be >= 1")
        if self.kkt_dual_big_m <= 0 or self.big_m_scale <= 0:
            raise ConfigError("big-M values must be positive")

    def doubled(self) -> "AttackerConfig":
        return replace(self, big_m_scale=2.0 * self.big_m_scale)


@dataclass(frozen=True)
class AttackerSolution:
    status: AttackStatus
    meter_flags: np.ndarray | None = None       # a_n, 0/1 ints
    injections: np.ndarray | None = None        # e_n, MW
    perceived_flows: np.ndarray | None = None   # f_ca, MW
    perceived_angles: np.ndarray | None = None
    overload_pos: np.ndarray | None = None      # u+_l
    overload_neg: np.ndarray | None = None      # u-_l
    overload_none: np.ndarray | None = None     # u0_l
    perceived_excess: np.ndarray | None = None  # r_l, MW beyond rho*cap
    perceived_objective: float = 0.0
    embedded_response: OperatorResponse | None = None
    big_m_tight: bool = False

    @property
    def found(self) -> bool:
        return self.status == AttackStatus.FOUND

    def attack_key(self, tol: float = PERFECT_MATCH_TOL_MW) -> tuple:
        """Hashable (a, rounded e) identity for uniqueness counting."""
        decimals = max(0, int(round(-np.log10(tol))))
        return (
            tuple(int(v) for v in self.meter_flags),
            tuple(float(np.round(v, decimals)) + 0.0 for v in self.injections),
        )


def no_attack_solution(grid: GridCase) -> AttackerSolution:
    return AttackerSolution(
        status=AttackStatus.NO_FEASIBLE_ATTACK,
        meter_flags=np.zeros(grid.n_buses, dtype=int),
        injections=np.zeros(grid.n_buses),
    )


def attack_flow_shift(demands: np.ndarray, config: AttackerConfig) -> float:
    """Bound on how far any perceived flow can drift from an operator flow.

    The attacker's flows and the operator's flows solve the same network with
    demands differing by the balanced falsification e, so they differ by the
    flow response to e. A balanced injection decomposes into source-sink
    transfers totalling sum|e|/2, and a unit transfer loads no branch with
    more than one unit; sum|e| is capped by epsilon times the budget's
    largest demands.
    """
    d = np.sort(np.asarray(demands, dtype=float))[::-1]
    return config.epsilon * float(d[: config.budget].sum()) / 2.0


def perceived_flow_bound(grid: GridCase, demands: np.ndarray,
                         config: AttackerConfig) -> np.ndarray:
    """Valid per-branch bound on |perceived flow|.

    Operator flows respect branch capacity; the attack shifts them by the
    network response to the balanced falsification e, which per branch is at
    most the PTDF row spread times sum|e|/2 (centering the row exploits the
    zero balance). The coarse transfer bounds apply as well; take the
    smallest.
    """
    from .powerflow import ptdf_matrix

    shift = attack_flow_shift(demands, config)
    sum_abs_e = 2.0 * shift
    spread = np.ptp(ptdf_matrix(grid), axis=1)
    per_branch = np.minimum(shift, 0.5 * spread * sum_abs_e)
    shifted = grid.capacities() + per_branch
    return np.minimum(shifted, float(np.sum(demands)))


def flag_big_m(grid: GridCase, demands: np.ndarray,
               config: AttackerConfig) -> np.ndarray:
    """Per-branch big-M for the overload flagging and measurement block.

    2B + rho*cap dominates every disjunction given |perceived flow| <= B
    (the binding case is the overload measure under the opposite-direction
    flag). Scaled by the retry inflation factor.
    """
    bound = perceived_flow_bound(grid, demands, config)
    return config.big_m_scale * (2.0 * bound + config.rho * grid.capacities())


def _gen_groups(grid: GridCase) -> list[list[int]]:
    """Generators grouped by (bus, cost), in file order.

    For the linear-cost lower level, same-bus same-cost units are exactly
    interchangeable; aggregating them removes a large symmetric degeneracy
    from the complementarity search without changing the optimal value.
    """
    groups: dict[tuple[int, float], list[int]] = {}
    for g, gen in enumerate(grid.generators):
        groups.setdefault((gen.bus, gen.cost), []).append(g)
    return list(groups.values())


def _disaggregate(grid: GridCase, base_dispatch: np.ndarray,
                  groups: list[list[int]], group_move: np.ndarray) -> np.ndarray:
    """Split aggregate group redispatch over members, file order, same sign."""
    moves = np.zeros(grid.n_generators)
    for k, members in enumerate(groups):
        remaining = float(group_move[k])
        for g in members:
            if remaining >= 0:
                room = grid.generators[g].max_output - base_dispatch[g]
                step = min(remaining, max(room, 0.0))
            else:
                room = grid.generators[g].min_output - base_dispatch[g]
                step = max(remaining, min(room, 0.0))
            moves[g] = step
            remaining -= step
        if abs(remaining) > 1e-6:
            moves[members[-1]] += remaining  # numerical crumbs stay in-group
    return moves


def build_single_level(grid_perceived: GridCase,
                       demands: np.ndarray,
                       base_dispatch: np.ndarray,
                       config: AttackerConfig,
                       fixed_attack: np.ndarray | None = None) -> Model:
    """Assemble the single-level MILP on the attacker's grid data.

    ``fixed_attack`` pins the injection vector (used by the KKT oracle);
    meter flags follow its nonzero pattern and the overload-count constraint
    should then be disabled via ``min_overloads=0``.
    """
    grid = grid_perceived
    d = np.asarray(demands, dtype=float)
    pg0 = np.asarray(base_dispatch, dtype=float)
    if d.shape != (grid.n_buses,):
        raise ConfigError(f"expected {grid.n_buses} demands, got {d.shape}")
    if pg0.shape != (grid.n_generators,):
        raise ConfigError(f"expected {grid.n_generators} dispatches, got {pg0.shape}")

    n_bus, n_br = grid.n_buses, grid.n_branches
    b = grid.susceptances()
    cap = grid.capacities()
    rho_cap = config.rho * cap
    ref = grid.reference_bus

    groups = _gen_groups(grid)
    n_grp = len(groups)
    costs = np.array([grid.generators[members[0]].cost for members in groups])
    lo = np.array([sum(grid.generators[g].min_output - pg0[g] for g in members)
                   for members in groups])
    hi = np.array([sum(grid.generators[g].max_output - pg0[g] for g in members)
                   for members in groups])
    grp_bus = np.array([grid.generators[members[0]].bus for members in groups])

    m_flag = flag_big_m(grid, d, config)
    m_dual = config.kkt_dual_big_m * config.big_m_scale
    m_pi = np.maximum(hi, 0.0) + 1.0
    m_up = m_pi + np.maximum(-lo, 0.0) + 1.0
    m_range = (hi - lo) + 1.0
    m_cap = 2.0 * cap + 1.0

    # Valid bounds that tighten the LP relaxation without cutting solutions;
    # angle spreads are bounded by the flow bounds over the least-stiff path.
    flow_bound = perceived_flow_bound(grid, d, config)
    theta_cap = float(np.sum(flow_bound * grid.reactances())) / grid.base_mva + 1.0

    model = Model("attacker_single_level")

    # ---- upper-level variables
    for n in range(n_bus):
        if fixed_attack is not None:
            a_fix = 1.0 if abs(fixed_attack[n]) > 1e-12 else 0.0
            model.add_variable(f"a_{n}", a_fix, a_fix, solver.BINARY)
            model.add_variable(f"e_{n}", float(fixed_attack[n]), float(fixed_attack[n]))
        elif d[n] == 0.0:
            # nothing to falsify at a zero-demand bus; freeing the flag would
            # only burn budget nondeterministically
            model.add_variable(f"a_{n}", 0.0, 0.0, solver.BINARY)
            model.add_variable(f"e_{n}", 0.0, 0.0)
        else:
            model.add_variable(f"a_{n}", 0.0, 1.0, solver.BINARY)
            bound = config.epsilon * d[n]
            model.add_variable(f"e_{n}", -bound, bound)
    for i in range(n_br):
        model.add_variable(f"fca_{i}", -float(flow_bound[i]), float(flow_bound[i]))
        if flow_bound[i] < rho_cap[i] - 1e-9:
            # no attack within budget can push this branch to its threshold
            model.add_variable(f"up_{i}", 0.0, 0.0, solver.BINARY)
            model.add_variable(f"um_{i}", 0.0, 0.0, solver.BINARY)
            model.add_variable(f"u0_{i}", 1.0, 1.0, solver.BINARY)
        else:
            model.add_variable(f"up_{i}", 0.0, 1.0, solver.BINARY)
            model.add_variable(f"um_{i}", 0.0, 1.0, solver.BINARY)
            model.add_variable(f"u0_{i}", 0.0, 1.0, solver.BINARY)
        model.add_variable(f"r_{i}", 0.0,
                           max(float(flow_bound[i] - rho_cap[i]), 0.0))
    for n in range(n_bus):
        fix = n == ref
        model.add_variable(f"thca_{n}", 0.0 if fix else -theta_cap,
                           0.0 if fix else theta_cap)

    # ---- lower-level primal and dual variables, one block per generator
    # group. Every lower-level restriction is an explicit constraint owning a
    # named dual; variable bounds below only mirror those constraints (or are
    # implied by complementarity), so the KKT system is unaffected.
    for k in range(n_grp):
        model.add_variable(f"pstar_{k}", float(lo[k]), float(hi[k]))
        model.add_variable(f"pi_{k}", 0.0, float(m_pi[k]))
        model.add_variable(f"dal_{k}", 0.0, float(costs[k]))
        model.add_variable(f"dbe_{k}", 0.0, float(costs[k]))
        model.add_variable(f"dglo_{k}", 0.0, m_dual)
        model.add_variable(f"dghi_{k}", 0.0, m_dual)
    for i, br in enumerate(grid.branches):
        model.add_variable(f"fgo_{i}", -br.capacity, br.capacity)
        model.add_variable(f"dom_{i}", -INF, INF)
        model.add_variable(f"dplo_{i}", 0.0, m_dual)
        model.add_variable(f"dphi_{i}", 0.0, m_dual)
    for n in range(n_bus):
        fix = n == ref
        model.add_variable(f"thgo_{n}", 0.0 if fix else -theta_cap,
                           0.0 if fix else theta_cap)
        model.add_variable(f"dnu_{n}", -INF, INF)
    model.add_variable("dsg", -INF, INF)

    # complementarity selectors
    for k in range(n_grp):
        for tag in ("z20", "z21", "z22lo", "z22hi"):
            model.add_variable(f"{tag}_{k}", 0.0, 1.0, solver.BINARY)
    for i in range(n_br):
        for tag in ("z25lo", "z25hi"):
            model.add_variable(f"{tag}_{i}", 0.0, 1.0, solver.BINARY)

    # ---- attack resource constraints
    if config.min_overloads > 0:
        model.add_constraint(
            "min_overloads",
            {f"up_{i}": 1.0 for i in range(n_br)} | {f"um_{i}": 1.0 for i in range(n_br)},
            GREATER,
            float(config.min_overloads),
        )
    model.add_constraint("budget", {f"a_{n}": 1.0 for n in range(n_bus)},
                         LESS, float(config.budget))
    model.add_constraint("attack_balance", {f"e_{n}": 1.0 for n in range(n_bus)},
                         EQUAL, 0.0)
    for n in range(n_bus):
        lim = config.epsilon * d[n]
        model.add_constraint(f"einj_hi_{n}", {f"e_{n}": 1.0, f"a_{n}": -lim}, LESS, 0.0)
        model.add_constraint(f"einj_lo_{n}", {f"e_{n}": -1.0, f"a_{n}": -lim}, LESS, 0.0)

    grp_at_bus: list[list[int]] = [[] for _ in range(n_bus)]
    for k in range(n_grp):
        grp_at_bus[grp_bus[k]].append(k)
    gen_offset = np.zeros(n_bus)
    for g, gen in enumerate(grid.generators):
        gen_offset[gen.bus] += pg0[g]

    # ---- attacker's perceived physics: true demand, redispatched generation
    for n in range(n_bus):
        terms: dict[str, float] = {f"pstar_{k}": 1.0 for k in grp_at_bus[n]}
        for i, br in enumerate(grid.branches):
            if br.from_bus == n:
                terms[f"fca_{i}"] = terms.get(f"fca_{i}", 0.0) - 1.0
            elif br.to_bus == n:
                terms[f"fca_{i}"] = terms.get(f"fca_{i}", 0.0) + 1.0
        model.add_constraint(f"pb_ca_{n}", terms, EQUAL, float(d[n] - gen_offset[n]))
    for i, br in enumerate(grid.branches):
        model.add_constraint(
            f"fdef_ca_{i}",
            {f"fca_{i}": 1.0, f"thca_{br.from_bus}": -b[i], f"thca_{br.to_bus}": b[i]},
            EQUAL,
            0.0,
        )

    # ---- overload flags: exactly one of (+, -, none); a flag can be raised
    # iff the flow magnitude is at or beyond rho*cap
    for i in range(n_br):
        m = float(m_flag[i])
        t = float(rho_cap[i])
        model.add_constraint(f"flag_one_{i}",
                             {f"up_{i}": 1.0, f"um_{i}": 1.0, f"u0_{i}": 1.0}, EQUAL, 1.0)
        model.add_constraint(f"flag_pos_on_{i}",
                             {f"fca_{i}": 1.0, f"up_{i}": -m}, LESS, t)
        model.add_constraint(f"flag_pos_off_{i}",
                             {f"fca_{i}": 1.0, f"up_{i}": -m}, GREATER, t - m)
        model.add_constraint(f"flag_neg_on_{i}",
                             {f"fca_{i}": -1.0, f"um_{i}": -m}, LESS, t)
        model.add_constraint(f"flag_neg_off_{i}",
                             {f"fca_{i}": 1.0, f"um_{i}": m}, LESS, m - t)

        # measured overload r: flow magnitude beyond the threshold, zero when
        # unflagged
        model.add_constraint(f"r_zero_{i}", {f"r_{i}": 1.0, f"u0_{i}": m}, LESS, m)
        model.add_constraint(f"r_pos_lo_{i}",
                             {f"fca_{i}": 1.0, f"r_{i}": -1.0, f"up_{i}": m}, LESS, m + t)
        model.add_constraint(f"r_pos_hi_{i}",
                             {f"r_{i}": 1.0, f"fca_{i}": -1.0, f"up_{i}": m}, LESS, m - t)
        model.add_constraint(f"r_neg_lo_{i}",
                             {f"fca_{i}": -1.0, f"r_{i}": -1.0, f"um_{i}": m}, LESS, m + t)
        model.add_constraint(f"r_neg_hi_{i}",
                             {f"r_{i}": 1.0, f"fca_{i}": 1.0, f"um_{i}": m}, LESS, m - t)

    # ---- lower level, primal feasibility (operator sees d + e)
    for k in range(n_grp):
        model.add_constraint(f"ll_pi_nn_{k}", {f"pi_{k}": -1.0}, LESS, 0.0)
        model.add_constraint(f"ll_pi_up_{k}", {f"pstar_{k}": 1.0, f"pi_{k}": -1.0}, LESS, 0.0)
        model.add_constraint(f"ll_p_lo_{k}", {f"pstar_{k}": -1.0}, LESS, float(-lo[k]))
        model.add_constraint(f"ll_p_hi_{k}", {f"pstar_{k}": 1.0}, LESS, float(hi[k]))
    for n in range(n_bus):
        terms = {f"e_{n}": 1.0}
        for k in grp_at_bus[n]:
            terms[f"pstar_{k}"] = -1.0
        for i, br in enumerate(grid.branches):
            if br.from_bus == n:
                terms[f"fgo_{i}"] = terms.get(f"fgo_{i}", 0.0) + 1.0
            elif br.to_bus == n:
                terms[f"fgo_{i}"] = terms.get(f"fgo_{i}", 0.0) - 1.0
        model.add_constraint(f"ll_bal_{n}", terms, EQUAL, float(gen_offset[n] - d[n]))
    for i, br in enumerate(grid.branches):
        model.add_constraint(
            f"ll_fdef_{i}",
            {f"fgo_{i}": 1.0, f"thgo_{br.from_bus}": -b[i], f"thgo_{br.to_bus}": b[i]},
            EQUAL,
            0.0,
        )
        model.add_constraint(f"ll_f_lo_{i}", {f"fgo_{i}": -1.0}, LESS, float(cap[i]))
        model.add_constraint(f"ll_f_hi_{i}", {f"fgo_{i}": 1.0}, LESS, float(cap[i]))
    model.add_constraint("ll_ref", {f"thgo_{ref}": 1.0}, EQUAL, 0.0)

    # ---- stationarity of the lower-level Lagrangian
    for k in range(n_grp):
        model.add_constraint(f"st_pi_{k}", {f"dal_{k}": 1.0, f"dbe_{k}": 1.0},
                             EQUAL, float(costs[k]))
        model.add_constraint(
            f"st_p_{k}",
            {f"dbe_{k}": 1.0, f"dglo_{k}": -1.0, f"dghi_{k}": 1.0,
             f"dnu_{grp_bus[k]}": -1.0},
            EQUAL,
            0.0,
        )
    for i, br in enumerate(grid.branches):
        model.add_constraint(
            f"st_f_{i}",
            {f"dnu_{br.from_bus}": 1.0, f"dnu_{br.to_bus}": -1.0,
             f"dom_{i}": 1.0, f"dplo_{i}": -1.0, f"dphi_{i}": 1.0},
            EQUAL,
            0.0,
        )
    for n in range(n_bus):
        terms = {}
        for i, br in enumerate(grid.branches):
            if br.from_bus == n:
                terms[f"dom_{i}"] = terms.get(f"dom_{i}", 0.0) - b[i]
            elif br.to_bus == n:
                terms[f"dom_{i}"] = terms.get(f"dom_{i}", 0.0) + b[i]
        if n == ref:
            terms["dsg"] = 1.0
        model.add_constraint(f"st_th_{n}", terms, EQUAL, 0.0)

    # ---- complementary slackness, one disjunction per inequality:
    # slack <= M (1 - z), dual <= M z. The pi-related duals are capped by the
    # generator cost (stationarity gives dal + dbe = c), so their disjunction
    # uses that exact cap instead of the generic dual big-M.
    def comp(name: str, slack_terms: dict[str, float], slack_rhs: float,
             slack_m: float, dual_var: str, z_var: str,
             dual_m: float | None = None) -> None:
        terms = dict(slack_terms)
        terms[z_var] = slack_m
        model.add_constraint(f"cs_{name}_s", terms, LESS, slack_rhs + slack_m)
        model.add_constraint(f"cs_{name}_d",
                             {dual_var: 1.0, z_var: -(dual_m if dual_m is not None
                                                      else m_dual)}, LESS, 0.0)

    for k in range(n_grp):
        comp(f"20_{k}", {f"pi_{k}": 1.0}, 0.0, float(m_pi[k]), f"dal_{k}", f"z20_{k}",
             dual_m=float(costs[k]))
        comp(f"21_{k}", {f"pi_{k}": 1.0, f"pstar_{k}": -1.0}, 0.0, float(m_up[k]),
             f"dbe_{k}", f"z21_{k}", dual_m=float(costs[k]))
        comp(f"22lo_{k}", {f"pstar_{k}": 1.0}, float(lo[k]),
             float(m_range[k]), f"dglo_{k}", f"z22lo_{k}")
        comp(f"22hi_{k}", {f"pstar_{k}": -1.0}, float(-hi[k]),
             float(m_range[k]), f"dghi_{k}", f"z22hi_{k}")
    for i in range(n_br):
        comp(f"25lo_{i}", {f"fgo_{i}": 1.0}, float(-cap[i]), float(m_cap[i]),
             f"dplo_{i}", f"z25lo_{i}")
        comp(f"25hi_{i}", {f"fgo_{i}": -1.0}, float(-cap[i]), float(m_cap[i]),
             f"dphi_{i}", f"z25hi_{i}")

    model.set_objective({f"r_{i}": 1.0 for i in range(n_br)}, "max")
    return model


def _extract_solution(grid: GridCase, base_dispatch: np.ndarray,
                      values: dict[str, float], objective: float) -> AttackerSolution:
    n_bus, n_br = grid.n_buses, grid.n_branches
    pull = lambda fmt, count: np.array([values[fmt.format(i)] for i in range(count)])
    groups = _gen_groups(grid)
    group_moves = pull("pstar_{}", len(groups))
    redispatch = _disaggregate(grid, base_dispatch, groups, group_moves)
    upward = np.maximum(redispatch, 0.0)
    embedded = OperatorResponse(
        redispatch=redispatch,
        upward=upward,
        flows=pull("fgo_{}", n_br),
        angles=pull("thgo_{}", n_bus),
        status=OperatorStatus.FEASIBLE,
        redispatch_cost=float(
            sum(upward[g] * grid.generators[g].cost for g in range(grid.n_generators))
        ),
    )
    return AttackerSolution(
        status=AttackStatus.FOUND,
        meter_flags=np.array([int(round(values[f"a_{n}"])) for n in range(n_bus)]),
        injections=pull("e_{}", n_bus),
        perceived_flows=pull("fca_{}", n_br),
        perceived_angles=pull("thca_{}", n_bus),
        overload_pos=np.array([int(round(values[f"up_{i}"])) for i in range(n_br)]),
        overload_neg=np.array([int(round(values[f"um_{i}"])) for i in range(n_br)]),
        overload_none=np.array([int(round(values[f"u0_{i}"])) for i in range(n_br)]),
        perceived_excess=pull("r_{}", n_br),
        perceived_objective=float(objective),
        embedded_response=embedded,
    )


def _audit_big_m(grid: GridCase, demands: np.ndarray, config: AttackerConfig,
                 values: dict[str, float]) -> bool:
    """True when any flow or big-M-capped dual sits within 1% of its cap.

    dal/dbe are excluded: their cap is the exact generator cost, which they
    legitimately reach whenever the corresponding constraint prices out.
    """
    m_flag = flag_big_m(grid, demands, config)
    m_dual = config.kkt_dual_big_m * config.big_m_scale
    for i in range(grid.n_branches):
        if abs(values[f"fca_{i}"]) >= 0.99 * m_flag[i]:
            return True
        for tag in ("dplo", "dphi"):
            if values[f"{tag}_{i}"] >= 0.99 * m_dual:
                return True
    for k in range(len(_gen_groups(grid))):
        for tag in ("dglo", "dghi"):
            if values[f"{tag}_{k}"] >= 0.99 * m_dual:
                return True
    return False


def check_attacker_solution(grid_perceived: GridCase, demands: np.ndarray,
                            base_dispatch: np.ndarray, config: AttackerConfig,
                            sol: AttackerSolution,
                            tol: float = RECHECK_TOL_MW) -> list[str]:
    """Re-verify every upper-level constraint arithmetically, outside the solver."""
    if not sol.found:
        return []
    problems: list[str] = []
    grid = grid_perceived
    d = np.asarray(demands, dtype=float)
    cap = grid.capacities()
    rho_cap = config.rho * cap
    a, e = sol.meter_flags, sol.injections
    up, um, u0 = sol.overload_pos, sol.overload_neg, sol.overload_none
    f, r = sol.perceived_flows, sol.perceived_excess

    if config.min_overloads > 0 and int(up.sum() + um.sum()) < config.min_overloads:
        problems.append("fewer threshold overloads than required")
    if int(a.sum()) > config.budget:
        problems.append("meter budget exceeded")
    if abs(float(e.sum())) > tol:
        problems.append(f"attack injections sum to {e.sum():.6g} MW")
    for n in range(grid.n_buses):
        if abs(e[n]) > a[n] * config.epsilon * d[n] + tol:
            problems.append(f"bus {n}: injection {e[n]:.6g} beyond epsilon bound")

    pg = np.asarray(base_dispatch, dtype=float) + sol.embedded_response.redispatch
    inj = -d.copy()
    for g, gen in enumerate(grid.generators):
        inj[gen.bus] += pg[g]
    residual = inj - grid.incidence().T @ f
    if float(np.max(np.abs(residual))) > tol:
        problems.append(f"perceived balance residual {np.max(np.abs(residual)):.6g} MW")
    b = grid.susceptances()
    for i, br in enumerate(grid.branches):
        expected = b[i] * (sol.perceived_angles[br.from_bus] - sol.perceived_angles[br.to_bus])
        if abs(f[i] - expected) > tol:
            problems.append(f"branch {i}: perceived flow != susceptance * angle diff")

    for i in range(grid.n_branches):
        if up[i] + um[i] + u0[i] != 1:
            problems.append(f"branch {i}: overload flags not exclusive")
        if up[i] and f[i] < rho_cap[i] - tol:
            problems.append(f"branch {i}: positive flag below threshold flow")
        if um[i] and f[i] > -rho_cap[i] + tol:
            problems.append(f"branch {i}: negative flag above -threshold flow")
        if not up[i] and f[i] > rho_cap[i] + tol:
            problems.append(f"branch {i}: unflagged flow above threshold")
        if not um[i] and f[i] < -rho_cap[i] - tol:
            problems.append(f"branch {i}: unflagged flow below -threshold")
        if r[i] < -tol:
            problems.append(f"branch {i}: negative overload measure")
        if u0[i] and r[i] > tol:
            problems.append(f"branch {i}: unflagged branch with nonzero measure")
        if up[i] and abs(r[i] - (f[i] - rho_cap[i])) > tol:
            problems.append(f"branch {i}: positive overload measure mismatch")
        if um[i] and abs(r[i] - (-f[i] - rho_cap[i])) > tol:
            problems.append(f"branch {i}: negative overload measure mismatch")
    if abs(float(r.sum()) - sol.perceived_objective) > max(tol, 1e-9 * abs(r.sum())):
        problems.append("objective differs from sum of overload measures")
    return problems


def solve_attack(grid_perceived: GridCase,
                 config: AttackerConfig,
                 settings: SolverSettings | None = None,
                 demands: np.ndarray | None = None,
                 base_dispatch: np.ndarray | None = None,
                 fixed_attack: np.ndarray | None = None) -> AttackerSolution:
    """Solve the attacker MILP on the perceived grid.

    After the MILP, the binaries are pinned and the continuous part is
    re-solved as an LP so reported flows, injections and duals come from a
    clean simplex solution rather than branch-and-bound tolerances.
    """
    grid = grid_perceived
    d = grid.demands() if demands is None else np.asarray(demands, dtype=float)
    pg0 = grid.base_dispatch() if base_dispatch is None else np.asarray(base_dispatch,
                                                                        dtype=float)
    settings = settings or SolverSettings()
    model = build_single_level(grid, d, pg0, config, fixed_attack=fixed_attack)
    out = solver.solve(model, settings)

    if out.status == SolveStatus.INFEASIBLE:
        return no_attack_solution(grid)
    if out.status == SolveStatus.TIME_LIMIT:
        incumbent = None
        if out.values:
            incumbent = _finish_solution(grid, d, pg0, config, model, out, settings)
        raise SolverTimeLimit(
            f"attacker MILP hit the {settings.time_limit:.0f}s time limit", incumbent
        )
    if out.status != SolveStatus.OPTIMAL:
        raise NumericFailure(f"attacker MILP: {out.status.value}: {out.message}")
    return _finish_solution(grid, d, pg0, config, model, out, settings)


def _finish_solution(grid: GridCase, d: np.ndarray, pg0: np.ndarray,
                     config: AttackerConfig, model: Model, out,
                     settings: SolverSettings) -> AttackerSolution:
    binaries = {name: out.values[name]
                for name, (_, _, kind) in model.variables.items()
                if kind == solver.BINARY}
    refined = solver.solve(model.fix_binaries(binaries), settings)
    values, objective = out.values, out.objective
    if refined.status == SolveStatus.OPTIMAL:
        values = dict(refined.values)
        values.update(binaries)
        objective = refined.objective
    sol = _extract_solution(grid, pg0, values, objective)
    if _audit_big_m(grid, d, config, values):
        sol = replace(sol, big_m_tight=True)
    problems = check_attacker_solution(grid, d, pg0, config, sol)
    if problems:
        raise NumericFailure("attacker solution failed recheck: " + "; ".join(problems))
    return sol


def verify_kkt(grid_perceived: GridCase, attack: np.ndarray,
               embedded_response: OperatorResponse) -> float:
    """Relative gap between the embedded lower-level cost and a standalone solve.

    The attacker's embedded operator model must price out exactly like the
    operator LP solved directly on the same (perceived) data; this is the
    correctness oracle for the KKT reformulation.
    """
    from .redispatch import react

    standalone = react(grid_perceived, attack)
    if standalone.status != OperatorStatus.FEASIBLE:
        return float("inf")
    gap = abs(embedded_response.redispatch_cost - standalone.redispatch_cost)
    return gap / max(1.0, abs(standalone.redispatch_cost))


def embedded_response_for(grid_perceived: GridCase, attack: np.ndarray,
                          config: AttackerConfig,
                          settings: SolverSettings | None = None) -> OperatorResponse:
    """Embedded operator response the MILP machinery produces for a fixed attack."""
    sol = solve_attack(
        grid_perceived,
        replace(config, min_overloads=0),
        settings,
        fixed_attack=np.asarray(attack, dtype=float),
    )
    if not sol.found:
        raise NumericFailure("KKT block infeasible for a feasible fixed attack")
    return sol.embedded_response


def random_feasible_attack(grid: GridCase, config: AttackerConfig,
                           rng: np.random.Generator) -> np.ndarray:
    """Random vector satisfying the budget, balance and magnitude constraints.

    Draws a random meter subset within budget, fills with uniform injections,
    then shifts within per-meter headroom to restore zero balance.
    """
    d = grid.demands()
    candidates = np.flatnonzero(d > 0)
    k = int(min(config.budget, candidates.size))
    if k < 2:
        return np.zeros(grid.n_buses)
    chosen = rng.choice(candidates, size=rng.integers(2, k + 1), replace=False)
    e = np.zeros(grid.n_buses)
    limits = config.epsilon * d
    e[chosen] = rng.uniform(-1.0, 1.0, size=chosen.size) * limits[chosen]
    # push the imbalance back into the chosen meters, largest headroom first
    imbalance = e.sum()
    order = sorted(chosen, key=lambda n: -limits[n])
    for n in order:
        if abs(imbalance) <= 1e-12:
            break
        room = (-limits[n] - e[n]) if imbalance > 0 else (limits[n] - e[n])
        move = np.sign(room) * min(abs(room), abs(imbalance))
        e[n] += move
        imbalance += move
    if abs(imbalance) > 1e-9:
        # not enough headroom in this draw; fall back to a balanced pair
        e[:] = 0.0
        first, second = chosen[0], chosen[1]
        m = min(limits[first], limits[second]) * rng.uniform(0.1, 1.0)
        e[first], e[second] = m, -m
    return e

