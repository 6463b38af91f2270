"""Command-line entry point: perfect-attack, campaign, and report commands."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matpower, metrics, montecarlo
from .attacker import AttackerConfig, ConfigError, SolverTimeLimit
from .grid import GridCase, GridError, validate_grid
from .matpower import CaseFormatError
from .metrics import Category, PerfectBaseline
from .montecarlo import CampaignConfigChanged, PartialCampaign, read_campaign
from .redispatch import InfeasibleBaseDispatch, NumericFailure, resolve_base_dispatch
from .sampling import ErrorSpec, ErrorTarget
from .solver import SolverSettings

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_NO_ATTACK = 4
EXIT_PARTIAL = 5
EXIT_SCHEMA = 6

BASE_DISPATCH_MODES = ("case-pg-raw", "opf", "case-pg")
GEN_MIN_MODES = ("zero", "case")


@dataclass
class RunConfig:
    """Effective configuration; defaults reproduce the stressed RTS-96 study."""

    case_path: str | None = None          # None -> bundled case24_ieee_rts
    capacity_scale: float = 0.65
    u: int = 2
    budget: int = 10
    epsilon: float = 0.20
    rho: float = 1.05
    error_target: str = "admittance"
    half_range: float = 0.10
    samples: int = 10000
    master_seed: int = 1
    base_dispatch: str = "case-pg-raw"
    gen_min: str = "zero"
    time_limit: float = 60.0
    mip_gap: float = 1e-9
    solver_seed: int = 0
    output_dir: str = "out"
    jobs: int = 0                          # 0 -> cpu count
    bin_width: float = 5.0

    def attacker_config(self) -> AttackerConfig:
        return AttackerConfig(min_overloads=self.u, budget=self.budget,
                              epsilon=self.epsilon, rho=self.rho)

    def error_spec(self) -> ErrorSpec:
        return ErrorSpec(target=ErrorTarget(self.error_target),
                         half_range=self.half_range,
                         sample_count=self.samples,
                         master_seed=self.master_seed)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(time_limit=self.time_limit, mip_gap=self.mip_gap,
                              deterministic=True, seed=self.solver_seed)

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


_FILE_KEYS = {
    "case_path": str, "capacity_scale": float, "u": int, "budget": int,
    "epsilon": float, "rho": float, "error_target": str, "half_range": float,
    "samples": int, "master_seed": int, "base_dispatch": str, "gen_min": str,
    "time_limit": float, "mip_gap": float, "solver_seed": int,
    "output_dir": str, "jobs": int, "bin_width": float,
}


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then config-file values, then command-line flags."""
    cfg = RunConfig()
    if path:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(_FILE_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in data.items():
            setattr(cfg, key, _FILE_KEYS[key](value) if value is not None else None)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.base_dispatch not in BASE_DISPATCH_MODES:
        raise ConfigError(f"base_dispatch must be one of {BASE_DISPATCH_MODES}")
    if cfg.gen_min not in GEN_MIN_MODES:
        raise ConfigError(f"gen_min must be one of {GEN_MIN_MODES}")
    return cfg


def resolve_grid(cfg: RunConfig) -> GridCase:
    """Parse the case, scale capacities, and settle the base dispatch."""
    path = Path(cfg.case_path) if cfg.case_path else matpower.bundled_case_path()
    grid = matpower.load_case(path, cfg.capacity_scale)
    if cfg.gen_min == "zero":
        gens = tuple(dataclasses.replace(g, min_output=0.0) for g in grid.generators)
        grid = dataclasses.replace(grid, generators=gens)
    if cfg.base_dispatch == "case-pg-raw":
        # dispatch exactly as in the case file; the operator model absorbs
        # any imbalance through free downward redispatch
        validate_grid(grid, require_balance=False)
        return grid
    grid = resolve_base_dispatch(grid, cfg.base_dispatch, cfg.solver_settings())
    validate_grid(grid, require_balance=True)
    return grid


def write_resolved_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {key: getattr(cfg, key) for key in _FILE_KEYS}
    (out_dir / "resolved_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


# ---------------- commands ----------------

def cmd_perfect_attack(cfg: RunConfig) -> int:
    grid = resolve_grid(cfg)
    out_dir = Path(cfg.output_dir)
    write_resolved_config(cfg, out_dir)
    config = cfg.attacker_config()
    settings = cfg.solver_settings()
    spec = cfg.error_spec()
    digest = montecarlo._campaign_digest(grid, config, spec, settings)

    baseline, solution, response, impact = montecarlo.compute_baseline(
        grid, config, settings, digest
    )
    (out_dir / "baseline.json").write_text(
        json.dumps(baseline.to_json(), indent=2) + "\n"
    )
    if not baseline.feasible:
        print("no feasible attack: the bilevel problem is infeasible "
              "for this case and attacker configuration")
        return EXIT_NO_ATTACK

    demands = grid.demands()
    attacked = [n for n, a in enumerate(solution.meter_flags) if a]
    print(f"perfect-information attack (base dispatch: {cfg.base_dispatch}, "
          f"U={config.min_overloads}, A={config.budget}, "
          f"eps={config.epsilon:.2f}, rho={config.rho:.2f})")
    print(f"attacked meters ({len(attacked)}/{config.budget} budget):")
    for n in attacked:
        e = solution.injections[n]
        pct = 100.0 * e / demands[n] if demands[n] else 0.0
        print(f"  bus {grid.buses[n].ext_id:>3}: {pct:+6.1f}%  ({e:+8.2f} MW)")
    print(f"perceived measurable overload: {solution.perceived_objective:.2f} MW")
    print(f"operator redispatch cost: {response.redispatch_cost:.2f}")
    print(f"true impact: {impact.count_above_threshold} branches at or above "
          f"{config.rho:.2f} x capacity")
    for o in impact.overloaded:
        br = grid.branches[o.branch]
        print(f"  branch {o.branch + 1} "
              f"({grid.buses[br.from_bus].ext_id}-{grid.buses[br.to_bus].ext_id}): "
              f"{100 * o.loading_ratio:.1f}% of {br.capacity:.2f} MW, "
              f"measurable excess {o.measurable_excess:.2f} MW")
    for o in impact.sub_threshold:
        print(f"  (sub-threshold: branch {o.branch + 1} at "
              f"{100 * o.loading_ratio:.1f}%)")
    print(f"total measurable overload: {impact.total_impact:.2f} MW")
    print(f"baseline written to {out_dir / 'baseline.json'}")
    return EXIT_OK


def _print_summary(summary: metrics.RiskSummary, unique_vectors: int,
                   unique_meters: int) -> None:
    print("risk assessment summary")
    print(f"  {'category':<15} {'count':>7} {'share':>8}")
    for cat in Category:
        print(f"  {cat.value:<15} {summary.counts[cat.value]:>7} "
              f"{100 * summary.shares[cat.value]:>7.1f}%")
    print(f"  mean impact: {summary.mean_impact:.2f} MW")
    print(f"  share with >=1 threshold overload: "
          f"{100 * summary.share_at_least_one:.1f}%")
    print(f"  share with >=target overloads:     "
          f"{100 * summary.share_at_least_target:.1f}%")
    print(f"  unique attack vectors: {unique_vectors} "
          f"(unique meter sets: {unique_meters})")


def cmd_campaign(cfg: RunConfig) -> int:
    grid = resolve_grid(cfg)
    out_dir = Path(cfg.output_dir)
    write_resolved_config(cfg, out_dir)
    config = cfg.attacker_config()
    settings = cfg.solver_settings()
    spec = cfg.error_spec()
    digest = montecarlo._campaign_digest(grid, config, spec, settings)

    baseline = None
    baseline_path = out_dir / "baseline.json"
    if baseline_path.exists():
        stored = PerfectBaseline.from_json(json.loads(baseline_path.read_text()))
        if stored.config_digest == digest:
            baseline = stored
    if baseline is None:
        baseline, _, _, _ = montecarlo.compute_baseline(grid, config, settings, digest)
        baseline_path.parent.mkdir(parents=True, exist_ok=True)
        baseline_path.write_text(json.dumps(baseline.to_json(), indent=2) + "\n")

    def progress(done: int, total: int) -> None:
        if done % 25 == 0 or done == total:
            print(f"  {done}/{total} samples", file=sys.stderr, flush=True)

    montecarlo.run_campaign(
        grid, config, spec,
        parallelism=cfg.effective_jobs(),
        out_path=out_dir / "campaign.jsonl",
        settings=settings,
        baseline=baseline,
        progress=progress,
    )
    # report from the persisted records so a later `report` run regenerates
    # byte-identical CSVs
    _, records = read_campaign(out_dir / "campaign.jsonl")
    summary = metrics.summarize(records, cfg.bin_width)
    unique_vectors, unique_meters = metrics.unique_attack_counts(records)
    mgmt = metrics.management_report(records, baseline,
                                     [b.ext_id for b in grid.buses])
    metrics.write_reports(out_dir, summary, mgmt, unique_vectors, unique_meters)
    _print_summary(summary, unique_vectors, unique_meters)
    print(f"records: {out_dir / 'campaign.jsonl'}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, campaign_path: str) -> int:
    header, records = read_campaign(campaign_path)
    expected = header.get("n_samples", 0)
    if not records:
        print("campaign file contains a header but no records", file=sys.stderr)
        return EXIT_SCHEMA
    if len(records) < expected:
        print(f"warning: {expected - len(records)} of {expected} records missing; "
              f"reporting over the {len(records)} present", file=sys.stderr)
    baseline = PerfectBaseline.from_json(header["baseline"])
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = metrics.summarize(records, cfg.bin_width)
    unique_vectors, unique_meters = metrics.unique_attack_counts(records)
    # bus ids are not persisted; report on internal indices when the case
    # is unavailable, otherwise use the configured case
    try:
        grid = resolve_grid(cfg)
        bus_ids = [b.ext_id for b in grid.buses]
        if len(bus_ids) != header["n_buses"]:
            bus_ids = list(range(header["n_buses"]))
    except (CaseFormatError, GridError, OSError):
        bus_ids = list(range(header["n_buses"]))
    mgmt = metrics.management_report(records, baseline, bus_ids)
    metrics.write_reports(out_dir, summary, mgmt, unique_vectors, unique_meters)
    _print_summary(summary, unique_vectors, unique_meters)
    return EXIT_OK


# ---------------- argument parsing ----------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lraid",
        description="Load redistribution attacks under imperfect attacker "
                    "information: perfect-information baseline, Monte Carlo "
                    "risk campaigns, and report generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--case", dest="case_path", help="MATPOWER case file "
                       "(default: bundled case24_ieee_rts)")
        p.add_argument("--capacity-scale", dest="capacity_scale", type=float)
        p.add_argument("--u", dest="u", type=int,
                       help="minimum number of threshold overloads targeted")
        p.add_argument("--budget", dest="budget", type=int,
                       help="max number of falsified load meters")
        p.add_argument("--epsilon", dest="epsilon", type=float,
                       help="max relative false data per meter")
        p.add_argument("--rho", dest="rho", type=float,
                       help="overload threshold ratio (>= 1)")
        p.add_argument("--base-dispatch", dest="base_dispatch",
                       choices=BASE_DISPATCH_MODES)
        p.add_argument("--gen-min", dest="gen_min", choices=GEN_MIN_MODES,
                       help="lower redispatch bound: case Pmin or zero")
        p.add_argument("--time-limit", dest="time_limit", type=float)
        p.add_argument("--mip-gap", dest="mip_gap", type=float)
        p.add_argument("--solver-seed", dest="solver_seed", type=int)
        p.add_argument("--out", dest="output_dir")
        p.add_argument("--bin-width", dest="bin_width", type=float,
                       help="impact histogram bin width, MW")

    p_perfect = sub.add_parser("perfect-attack",
                               help="solve the perfect-information attack")
    add_common(p_perfect)

    p_camp = sub.add_parser("campaign", help="run a Monte Carlo campaign")
    add_common(p_camp)
    p_camp.add_argument("--error", dest="error_target",
                        choices=[t.value for t in ErrorTarget])
    p_camp.add_argument("--half-range", dest="half_range", type=float,
                        help="uniform error half range, e.g. 0.10")
    p_camp.add_argument("--samples", dest="samples", type=int)
    p_camp.add_argument("--seed", dest="master_seed", type=int)
    p_camp.add_argument("--jobs", dest="jobs", type=int)

    p_rep = sub.add_parser("report", help="regenerate reports from campaign.jsonl")
    add_common(p_rep)
    p_rep.add_argument("campaign", help="path to campaign.jsonl")

    return parser


_CONFIG_KEYS = tuple(_FILE_KEYS)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "perfect-attack":
            return cmd_perfect_attack(cfg)
        if args.command == "campaign":
            return cmd_campaign(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.campaign)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, CaseFormatError, GridError, InfeasibleBaseDispatch,
            json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CampaignConfigChanged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except PartialCampaign as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (NumericFailure, SolverTimeLimit) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
