"""Load redistribution attacks on power grids under imperfect attacker information.

Pipeline: parse a MATPOWER case, solve the attacker's bilevel MILP on the
(possibly mis-perceived) grid data, replay the operator's redispatch and the
true physics, and aggregate Monte Carlo campaigns into risk-assessment
categories and risk-management rankings.
"""

from .attacker import (AttackerConfig, AttackerSolution, AttackStatus,
                       build_single_level, solve_attack, verify_kkt)
from .grid import Branch, Bus, Generator, GridCase, validate_grid
from .matpower import RawCaseTables, build_grid, bundled_case_path, load_case, parse_case
from .metrics import (Category, ManagementReport, PerfectBaseline, RiskSummary,
                      classify, management_report, summarize)
from .montecarlo import CampaignResult, SampleRecord, run_campaign, run_sample
from .powerflow import FlowState, ImpactReport, measure_impact, solve_dc_flow
from .redispatch import OperatorResponse, react, resolve_base_dispatch
from .sampling import ErrorDraw, ErrorSpec, ErrorTarget, apply, draw
from .solver import Model, SolveOutcome, SolverSettings, solve

__version__ = "0.1.0"

__all__ = [
    "AttackerConfig", "AttackerSolution", "AttackStatus", "Branch", "Bus",
    "CampaignResult", "Category", "ErrorDraw", "ErrorSpec", "ErrorTarget",
    "FlowState", "Generator", "GridCase", "ImpactReport", "ManagementReport",
    "Model", "OperatorResponse", "PerfectBaseline", "RawCaseTables",
    "RiskSummary", "SampleRecord", "SolveOutcome", "SolverSettings",
    "apply", "build_grid", "build_single_level", "bundled_case_path",
    "classify", "draw", "load_case", "management_report", "measure_impact",
    "parse_case", "react", "resolve_base_dispatch", "run_campaign",
    "run_sample", "solve", "solve_attack", "solve_dc_flow", "summarize",
    "validate_grid", "verify_kkt",
]
