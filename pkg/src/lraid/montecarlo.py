"""Per-sample attack/reaction/physics sequence and Monte Carlo campaigns.

Each sample runs three layers on its own data: the attacker optimizes on the
perceived grid, the operator reacts to the falsified loads on the true grid,
and the physical flows are evaluated with the true loads. Records persist to
JSON Lines (header first, then one record per sample in index order) with
floats rounded to six significant digits, so identical campaigns produce
byte-identical files regardless of worker count.

Wall-clock timings stay on the in-memory records only; persisting them would
break the byte-identical reproducibility contract.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics
from .attacker import (AttackerConfig, AttackerSolution, SolverTimeLimit,
                       no_attack_solution, solve_attack)
from .grid import GridCase
from .metrics import Category, PerfectBaseline, classify, config_digest
from .powerflow import ImpactReport, Overload, measure_impact, solve_dc_flow
from .redispatch import NumericFailure, OperatorResponse, OperatorStatus, react
from .sampling import ErrorSpec, ErrorTarget, apply, draw
from .solver import SolverSettings

SCHEMA = "lraid-campaign-v1"


class StageError(RuntimeError):
    def __init__(self, stage: str, sample_index: int, cause: Exception):
        self.stage, self.sample_index, self.cause = stage, sample_index, cause
        super().__init__(f"sample {sample_index} failed in {stage}: {cause}")


class PartialCampaign(RuntimeError):
    def __init__(self, failed: dict[int, str]):
        self.failed = failed
        super().__init__(
            f"{len(failed)} samples failed: indices {sorted(failed)[:10]}"
        )


class CampaignConfigChanged(ValueError):
    pass


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass
class SampleRecord:
    sample_index: int
    multipliers: tuple[float, ...]
    found: bool
    meter_flags: tuple[int, ...]
    injections: tuple[float, ...]
    perceived_objective: float
    operator_status: str
    redispatch_cost: float
    redispatch: tuple[float, ...]
    overloads: tuple[tuple[int, float, float, float], ...]  # branch, ratio, excess, measurable
    sub_threshold: tuple[tuple[int, float], ...]
    count_above_threshold: int
    total_impact: float
    meets_target: bool
    category: str
    big_m_tight: bool = False
    retried: bool = False
    timings: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def overloaded_branches(self) -> frozenset[int]:
        return frozenset(o[0] for o in self.overloads)

    def to_json(self) -> dict:
        return {
            "i": self.sample_index,
            "multipliers": [_sig6(m) for m in self.multipliers],
            "found": self.found,
            "meters": [n for n, a in enumerate(self.meter_flags) if a],
            "injections": [[n, _sig6(e)] for n, e in enumerate(self.injections)
                           if abs(e) > 0.0],
            "perceived_objective": _sig6(self.perceived_objective),
            "operator": {
                "status": self.operator_status,
                "cost": _sig6(self.redispatch_cost),
                "redispatch": [[g, _sig6(p)] for g, p in enumerate(self.redispatch)
                               if abs(p) > 1e-9],
            },
            "impact": {
                "count": self.count_above_threshold,
                "total": _sig6(self.total_impact),
                "overloads": [[b, _sig6(r), _sig6(x), _sig6(m)]
                              for b, r, x, m in self.overloads],
                "sub_threshold": [[b, _sig6(r)] for b, r in self.sub_threshold],
            },
            "meets_target": self.meets_target,
            "category": self.category,
            "big_m_tight": self.big_m_tight,
            "retried": self.retried,
        }

    @classmethod
    def from_json(cls, data: dict, n_bus: int, n_gen: int) -> "SampleRecord":
        meters = set(data["meters"])
        inj = dict((int(k), float(v)) for k, v in data["injections"])
        redisp = dict((int(k), float(v)) for k, v in data["operator"]["redispatch"])
        return cls(
            sample_index=int(data["i"]),
            multipliers=tuple(float(m) for m in data["multipliers"]),
            found=bool(data["found"]),
            meter_flags=tuple(1 if n in meters else 0 for n in range(n_bus)),
            injections=tuple(inj.get(n, 0.0) for n in range(n_bus)),
            perceived_objective=float(data["perceived_objective"]),
            operator_status=str(data["operator"]["status"]),
            redispatch_cost=float(data["operator"]["cost"]),
            redispatch=tuple(redisp.get(g, 0.0) for g in range(n_gen)),
            overloads=tuple(
                (int(b), float(r), float(x), float(m))
                for b, r, x, m in data["impact"]["overloads"]
            ),
            sub_threshold=tuple(
                (int(b), float(r)) for b, r in data["impact"]["sub_threshold"]
            ),
            count_above_threshold=int(data["impact"]["count"]),
            total_impact=float(data["impact"]["total"]),
            meets_target=bool(data["meets_target"]),
            category=str(data["category"]),
            big_m_tight=bool(data.get("big_m_tight", False)),
            retried=bool(data.get("retried", False)),
        )


@dataclass(frozen=True)
class BaseState:
    """Zero-attack operator response and physical impact (NoAttempt samples)."""

    response: OperatorResponse
    impact: ImpactReport


@dataclass
class CampaignResult:
    digest: str
    spec: ErrorSpec
    config: AttackerConfig
    baseline: PerfectBaseline
    records: list[SampleRecord]
    unique_attack_vectors: int
    unique_meter_sets: int
    mean_impact: float


def _campaign_digest(grid: GridCase, config: AttackerConfig, spec: ErrorSpec,
                     settings: SolverSettings) -> str:
    payload = {
        "grid": {
            "base_mva": grid.base_mva,
            "demands": [_sig6(b.demand) for b in grid.buses],
            "branches": [[br.from_bus, br.to_bus, _sig6(br.reactance),
                          _sig6(br.capacity)] for br in grid.branches],
            "generators": [[g.bus, _sig6(g.base_dispatch), _sig6(g.min_output),
                            _sig6(g.max_output), _sig6(g.cost)]
                           for g in grid.generators],
            "reference_bus": grid.reference_bus,
        },
        "attacker": {
            "min_overloads": config.min_overloads,
            "budget": config.budget,
            "epsilon": config.epsilon,
            "rho": config.rho,
            "kkt_dual_big_m": config.kkt_dual_big_m,
        },
        "error": {
            "target": spec.target.value,
            "half_range": spec.half_range,
            "sample_count": spec.sample_count,
            "master_seed": spec.master_seed,
        },
        "solver": {"time_limit": settings.time_limit, "mip_gap": settings.mip_gap},
    }
    return config_digest(payload)


def _true_impact(grid_true: GridCase, response: OperatorResponse,
                 rho: float) -> ImpactReport:
    dispatch = grid_true.base_dispatch() + response.redispatch
    injections = -grid_true.demands()
    for g, gen in enumerate(grid_true.generators):
        injections[gen.bus] += dispatch[g]
    flows = solve_dc_flow(grid_true, injections)
    return measure_impact(grid_true, flows, rho)


def compute_base_state(grid_true: GridCase, config: AttackerConfig,
                       settings: SolverSettings | None = None) -> BaseState:
    response = react(grid_true, np.zeros(grid_true.n_buses), settings)
    if response.status != OperatorStatus.FEASIBLE:
        raise NumericFailure("zero-attack operator reaction is infeasible")
    return BaseState(response=response,
                     impact=_true_impact(grid_true, response, config.rho))


def compute_baseline(grid_true: GridCase, config: AttackerConfig,
                     settings: SolverSettings | None = None,
                     digest: str = "") -> tuple[PerfectBaseline, AttackerSolution,
                                                 OperatorResponse | None,
                                                 ImpactReport | None]:
    """Perfect-information attack on the true data and its true consequences."""
    perceived = grid_true.with_provenance("perceived")
    solution = solve_attack(perceived, config, settings)
    if not solution.found:
        empty = PerfectBaseline(
            meter_flags=tuple([0] * grid_true.n_buses),
            injections=tuple([0.0] * grid_true.n_buses),
            overloaded_branches=frozenset(),
            total_impact=0.0,
            count_above_threshold=0,
            config_digest=digest,
            feasible=False,
        )
        return empty, solution, None, None
    response = react(grid_true, np.asarray(solution.injections), settings)
    impact = _true_impact(grid_true, response, config.rho)
    baseline = PerfectBaseline(
        meter_flags=tuple(int(v) for v in solution.meter_flags),
        injections=tuple(float(v) for v in solution.injections),
        overloaded_branches=impact.branch_set(),
        total_impact=impact.total_impact,
        count_above_threshold=impact.count_above_threshold,
        config_digest=digest,
    )
    return baseline, solution, response, impact


def run_sample(grid_true: GridCase,
               config: AttackerConfig,
               spec: ErrorSpec,
               sample_index: int,
               baseline: PerfectBaseline,
               base_state: BaseState,
               settings: SolverSettings | None = None) -> SampleRecord:
    """The three-layer sequence for one Monte Carlo sample."""
    if grid_true.provenance != "true":
        raise ValueError("run_sample needs the true grid")
    settings = settings or SolverSettings()
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    error_draw = draw(spec, grid_true.n_branches, sample_index)
    perceived = apply(grid_true, error_draw, spec.target)
    timings["perturb"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    retried = False
    try:
        solution = solve_attack(perceived, config, settings)
        if solution.big_m_tight:
            retried = True
            solution = solve_attack(perceived, config.doubled(), settings)
    except NumericFailure:
        retried = True
        try:
            solution = solve_attack(perceived, config.doubled(), settings)
        except (NumericFailure, SolverTimeLimit) as exc:
            raise StageError("attacker", sample_index, exc) from exc
    except SolverTimeLimit as exc:
        raise StageError("attacker", sample_index, exc) from exc
    timings["attack"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    operator_infeasible = False
    if solution.found:
        try:
            response = react(grid_true, np.asarray(solution.injections), settings)
        except NumericFailure as exc:
            raise StageError("operator", sample_index, exc) from exc
        if response.status != OperatorStatus.FEASIBLE:
            operator_infeasible = True
            response = base_state.response
            impact = base_state.impact
        else:
            impact = _true_impact(grid_true, response, config.rho)
    else:
        response = base_state.response
        impact = base_state.impact
    timings["react"] = time.perf_counter() - t0

    category = classify(
        found=solution.found,
        meter_flags=solution.meter_flags,
        injections=solution.injections,
        count_above_threshold=impact.count_above_threshold,
        baseline=baseline,
        min_overloads=config.min_overloads,
    )

    sol = solution if solution.found else no_attack_solution(grid_true)
    return SampleRecord(
        sample_index=sample_index,
        multipliers=error_draw.multipliers,
        found=solution.found,
        meter_flags=tuple(int(v) for v in sol.meter_flags),
        injections=tuple(float(v) for v in sol.injections),
        perceived_objective=float(sol.perceived_objective),
        operator_status="infeasible" if operator_infeasible else response.status.value,
        redispatch_cost=float(response.redispatch_cost)
        if response.status == OperatorStatus.FEASIBLE else float("nan"),
        redispatch=tuple(float(p) for p in response.redispatch),
        overloads=tuple((o.branch, o.loading_ratio, o.excess, o.measurable_excess)
                        for o in impact.overloaded),
        sub_threshold=tuple((o.branch, o.loading_ratio) for o in impact.sub_threshold),
        count_above_threshold=impact.count_above_threshold,
        total_impact=float(impact.total_impact),
        meets_target=impact.count_above_threshold >= max(config.min_overloads, 1),
        category=category.value,
        big_m_tight=solution.big_m_tight,
        retried=retried,
        timings=timings,
    )


# ---------------- campaign persistence ----------------

def _header(grid: GridCase, config: AttackerConfig, spec: ErrorSpec,
            settings: SolverSettings, digest: str,
            baseline: PerfectBaseline) -> dict:
    return {
        "schema": SCHEMA,
        "config_digest": digest,
        "n_samples": spec.sample_count,
        "n_buses": grid.n_buses,
        "n_branches": grid.n_branches,
        "n_generators": grid.n_generators,
        "error": {
            "target": spec.target.value,
            "half_range": spec.half_range,
            "master_seed": spec.master_seed,
        },
        "attacker": {
            "min_overloads": config.min_overloads,
            "budget": config.budget,
            "epsilon": config.epsilon,
            "rho": config.rho,
        },
        "baseline": baseline.to_json(),
    }


def read_campaign(path: str | Path) -> tuple[dict, list[SampleRecord]]:
    """Header and records from a campaign file; tolerates a truncated tail."""
    path = Path(path)
    records = []
    header = None
    with path.open() as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError:
                break  # truncated write; resume recomputes from here
            if line_no == 0:
                if data.get("schema") != SCHEMA:
                    raise CampaignConfigChanged(
                        f"unrecognized campaign schema {data.get('schema')!r}"
                    )
                header = data
                continue
            records.append(
                SampleRecord.from_json(data, header["n_buses"], header["n_generators"])
            )
    if header is None:
        raise CampaignConfigChanged(f"{path} has no campaign header")
    return header, records


_WORKER: dict = {}


def _worker_init(grid, config, spec, baseline, base_state, settings):
    _WORKER.update(grid=grid, config=config, spec=spec, baseline=baseline,
                   base_state=base_state, settings=settings)


def _worker_run(index: int):
    return run_sample(_WORKER["grid"], _WORKER["config"], _WORKER["spec"], index,
                      _WORKER["baseline"], _WORKER["base_state"], _WORKER["settings"])


def run_campaign(grid_true: GridCase,
                 config: AttackerConfig,
                 spec: ErrorSpec,
                 parallelism: int = 1,
                 out_path: str | Path | None = None,
                 settings: SolverSettings | None = None,
                 baseline: PerfectBaseline | None = None,
                 progress: Callable[[int, int], None] | None = None) -> CampaignResult:
    """Run (or resume) a Monte Carlo campaign and persist records in order.

    An existing output file is resumed when its config digest matches;
    completed records are never recomputed.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    settings = settings or SolverSettings()
    digest = _campaign_digest(grid_true, config, spec, settings)

    if baseline is None:
        baseline, _, _, _ = compute_baseline(grid_true, config, settings, digest)
    elif baseline.config_digest and baseline.config_digest != digest:
        raise CampaignConfigChanged(
            f"baseline digest {baseline.config_digest} != campaign digest {digest}"
        )
    base_state = compute_base_state(grid_true, config, settings)

    done: dict[int, SampleRecord] = {}
    sink = None
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if out_path.exists() and out_path.stat().st_size > 0:
            header, existing = read_campaign(out_path)
            if header["config_digest"] != digest:
                raise CampaignConfigChanged(
                    f"existing campaign at {out_path} was produced with a "
                    f"different configuration"
                )
            for rec in existing:
                done[rec.sample_index] = rec
            # rewrite the contiguous prefix; anything after a gap re-appends
            # in order once the gap is settled
            with out_path.open("w") as fh:
                fh.write(json.dumps(_header(grid_true, config, spec, settings,
                                            digest, baseline),
                                    separators=(",", ":")) + "\n")
                idx = 0
                while idx in done:
                    fh.write(json.dumps(done[idx].to_json(),
                                        separators=(",", ":")) + "\n")
                    idx += 1
        else:
            with out_path.open("w") as fh:
                fh.write(json.dumps(_header(grid_true, config, spec, settings,
                                            digest, baseline),
                                    separators=(",", ":")) + "\n")
        sink = out_path.open("a")

    pending = [i for i in range(spec.sample_count) if i not in done]
    failed: dict[int, str] = {}
    persisted_through = -1
    while persisted_through + 1 in done:  # records already rewritten above
        persisted_through += 1

    def flush_in_order():
        # append each record as soon as everything before it is settled;
        # failed indices leave no line and are recomputed on resume
        nonlocal persisted_through
        idx = persisted_through + 1
        while idx < spec.sample_count:
            if idx in done:
                if sink is not None:
                    sink.write(json.dumps(done[idx].to_json(),
                                          separators=(",", ":")) + "\n")
                    sink.flush()
                persisted_through = idx
            elif idx in failed:
                persisted_through = idx
            else:
                break
            idx += 1

    def settle(idx: int, rec: SampleRecord | None, error: str | None):
        if rec is not None:
            done[idx] = rec
        else:
            failed[idx] = error
        flush_in_order()
        if progress:
            progress(len(done) + len(failed), spec.sample_count)

    try:
        if parallelism == 1 or len(pending) <= 1:
            for idx in pending:
                try:
                    settle(idx, run_sample(grid_true, config, spec, idx, baseline,
                                           base_state, settings), None)
                except StageError as exc:
                    settle(idx, None, str(exc))
        else:
            with ProcessPoolExecutor(
                max_workers=parallelism,
                initializer=_worker_init,
                initargs=(grid_true, config, spec, baseline, base_state, settings),
            ) as pool:
                futures = {pool.submit(_worker_run, idx): idx for idx in pending}
                remaining = set(futures)
                while remaining:
                    finished, remaining = wait(remaining, return_when=FIRST_COMPLETED)
                    for fut in finished:
                        idx = futures[fut]
                        try:
                            settle(idx, fut.result(), None)
                        except StageError as exc:
                            settle(idx, None, str(exc))
    finally:
        if sink is not None:
            sink.close()

    if failed:
        raise PartialCampaign(failed)

    records = [done[i] for i in range(spec.sample_count)]
    unique_vectors, unique_meters = metrics.unique_attack_counts(records)
    mean_impact = float(np.mean([r.total_impact for r in records]))
    return CampaignResult(
        digest=digest,
        spec=spec,
        config=config,
        baseline=baseline,
        records=records,
        unique_attack_vectors=unique_vectors,
        unique_meter_sets=unique_meters,
        mean_impact=mean_impact,
    )
