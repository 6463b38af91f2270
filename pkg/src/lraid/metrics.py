"""Risk-assessment categories and risk-management rankings over campaign records.

Five exclusive categories per sample: the attack vector reproduces the
perfect-information one (Perfect); it still causes the targeted number of
threshold overloads (Success); at least one (PartialSuccess); none (Failure);
or the attacker found no feasible attack at all (NoAttempt).
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VECTOR_MATCH_TOL_MW = 1e-3


class Category(str, enum.Enum):
    PERFECT = "Perfect"
    SUCCESS = "Success"
    PARTIAL = "PartialSuccess"
    FAILURE = "Failure"
    NO_ATTEMPT = "NoAttempt"


class BaselineMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PerfectBaseline:
    """Zero-error attack vector and its true impact, the comparison anchor."""

    meter_flags: tuple[int, ...]
    injections: tuple[float, ...]
    overloaded_branches: frozenset[int]
    total_impact: float
    count_above_threshold: int
    config_digest: str
    feasible: bool = True

    @property
    def meter_set(self) -> frozenset[int]:
        return frozenset(n for n, a in enumerate(self.meter_flags) if a)

    def to_json(self) -> dict:
        return {
            "meter_flags": list(self.meter_flags),
            "injections": list(self.injections),
            "overloaded_branches": sorted(self.overloaded_branches),
            "total_impact": self.total_impact,
            "count_above_threshold": self.count_above_threshold,
            "config_digest": self.config_digest,
            "feasible": self.feasible,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PerfectBaseline":
        return cls(
            meter_flags=tuple(int(v) for v in data["meter_flags"]),
            injections=tuple(float(v) for v in data["injections"]),
            overloaded_branches=frozenset(int(v) for v in data["overloaded_branches"]),
            total_impact=float(data["total_impact"]),
            count_above_threshold=int(data["count_above_threshold"]),
            config_digest=str(data["config_digest"]),
            feasible=bool(data.get("feasible", True)),
        )


def config_digest(payload: dict) -> str:
    """Stable digest of the effective configuration, for baseline pairing."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def classify(found: bool,
             meter_flags: Sequence[int] | None,
             injections: Sequence[float] | None,
             count_above_threshold: int,
             baseline: PerfectBaseline,
             min_overloads: int,
             digest: str | None = None) -> Category:
    """Assign the exclusive risk category for one sample.

    Vector equality against the baseline compares the meter set exactly and
    the injections within 1e-3 MW, so solver noise below reporting precision
    cannot demote a Perfect sample.
    """
    if digest is not None and digest != baseline.config_digest:
        raise BaselineMismatch(
            f"baseline digest {baseline.config_digest} != campaign digest {digest}"
        )
    if not found:
        return Category.NO_ATTEMPT
    if baseline.feasible:
        same_meters = tuple(int(v) for v in meter_flags) == baseline.meter_flags
        if same_meters and np.allclose(
            np.asarray(injections, dtype=float),
            np.asarray(baseline.injections),
            atol=VECTOR_MATCH_TOL_MW,
            rtol=0.0,
        ):
            return Category.PERFECT
    if count_above_threshold >= max(min_overloads, 1):
        return Category.SUCCESS
    if count_above_threshold >= 1:
        return Category.PARTIAL
    return Category.FAILURE


@dataclass(frozen=True)
class RiskSummary:
    counts: dict[str, int]
    shares: dict[str, float]
    mean_impact: float
    share_at_least_one: float
    share_at_least_target: float
    histogram: tuple[tuple[float, int], ...]   # (bin left edge, count)
    bin_width: float


@dataclass(frozen=True)
class ManagementReport:
    meter_frequency: tuple[tuple[int, float], ...]       # (bus ext id, share) desc
    overlap_counts: tuple[float, ...]                    # index k-1: share >= k common
    branch_group_frequency: tuple[tuple[tuple[int, ...], float], ...]
    launched: int


def summarize(records: Iterable, bin_width: float = 5.0) -> RiskSummary:
    """Category shares, mean impact and the impact histogram over all samples."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    counts = {c.value: 0 for c in Category}
    impacts = []
    at_least_one = 0
    at_least_target = 0
    for rec in records:
        counts[rec.category] += 1
        impacts.append(rec.total_impact)
        if rec.count_above_threshold >= 1:
            at_least_one += 1
        if rec.meets_target:
            at_least_target += 1
    n = len(records)
    impacts_arr = np.asarray(impacts)
    top = float(impacts_arr.max())
    edges = np.arange(0.0, top + bin_width, bin_width)
    if len(edges) < 2:
        edges = np.array([0.0, bin_width])
    hist, _ = np.histogram(impacts_arr, bins=edges)
    return RiskSummary(
        counts=counts,
        shares={k: v / n for k, v in counts.items()},
        mean_impact=float(impacts_arr.mean()),
        share_at_least_one=at_least_one / n,
        share_at_least_target=at_least_target / n,
        histogram=tuple((float(edges[i]), int(hist[i])) for i in range(len(hist))),
        bin_width=bin_width,
    )


def management_report(records: Iterable, baseline: PerfectBaseline,
                      bus_ids: Sequence[int]) -> ManagementReport:
    """Meter ranking, baseline-overlap shares and overloaded-branch groupings.

    Meter shares are over launched attacks only; branch-group shares are over
    all samples (the empty group absorbs NoAttempt/Failure), so they sum to 1.
    """
    records = list(records)
    launched = [r for r in records if r.found]
    n_bus = len(bus_ids)
    meter_counts = np.zeros(n_bus)
    base_set = baseline.meter_set
    overlap_tallies = np.zeros(max(len(base_set), 1))
    groups: dict[tuple[int, ...], int] = {}
    for rec in records:
        key = tuple(sorted(rec.overloaded_branches))
        groups[key] = groups.get(key, 0) + 1
    for rec in launched:
        attacked = {n for n, a in enumerate(rec.meter_flags) if a}
        for n in attacked:
            meter_counts[n] += 1
        common = len(attacked & base_set)
        for k in range(1, common + 1):
            if k <= len(overlap_tallies):
                overlap_tallies[k - 1] += 1

    n_launched = len(launched)
    freq = meter_counts / n_launched if n_launched else meter_counts
    order = sorted(range(n_bus), key=lambda n: (-freq[n], bus_ids[n]))
    meter_frequency = tuple((int(bus_ids[n]), float(freq[n])) for n in order)
    overlap = tuple(
        float(t / n_launched) if n_launched else 0.0 for t in overlap_tallies
    )
    total = len(records)
    group_freq = tuple(
        (key, cnt / total)
        for key, cnt in sorted(groups.items(), key=lambda kv: (-kv[1], kv[0]))
    )
    return ManagementReport(
        meter_frequency=meter_frequency,
        overlap_counts=overlap,
        branch_group_frequency=group_freq,
        launched=n_launched,
    )


def unique_attack_counts(records: Iterable) -> tuple[int, int]:
    """Distinct (meters, rounded injections) pairs and distinct meter sets,
    over launched attacks."""
    vectors = set()
    meter_sets = set()
    for rec in records:
        if not rec.found:
            continue
        meters = tuple(int(v) for v in rec.meter_flags)
        rounded = tuple(float(np.round(v, 3)) + 0.0 for v in rec.injections)
        vectors.add((meters, rounded))
        meter_sets.add(meters)
    return len(vectors), len(meter_sets)


# ---------------- CSV emission ----------------

def write_reports(out_dir: str | Path, summary: RiskSummary,
                  mgmt: ManagementReport, unique_vectors: int,
                  unique_meter_sets: int) -> list[Path]:
    """Emit the plot-ready CSV files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for cat in Category:
            w.writerow([f"count_{cat.value}", summary.counts[cat.value]])
        for cat in Category:
            w.writerow([f"share_{cat.value}", f"{summary.shares[cat.value]:.6g}"])
        w.writerow(["mean_impact_mw", f"{summary.mean_impact:.6g}"])
        w.writerow(["share_at_least_one_overload", f"{summary.share_at_least_one:.6g}"])
        w.writerow(["share_at_least_target_overloads",
                    f"{summary.share_at_least_target:.6g}"])
        w.writerow(["unique_attack_vectors", unique_vectors])
        w.writerow(["unique_meter_sets", unique_meter_sets])
    written.append(path)

    path = out / "meters.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "attack_share"])
        for bus, share in mgmt.meter_frequency:
            w.writerow([bus, f"{share:.6g}"])
    written.append(path)

    path = out / "overlap.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["common_meters_at_least", "share_of_launched"])
        for k, share in enumerate(mgmt.overlap_counts, start=1):
            w.writerow([k, f"{share:.6g}"])
    written.append(path)

    path = out / "branch_groups.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch_group", "share_of_samples"])
        for key, share in mgmt.branch_group_frequency:
            label = "+".join(str(b + 1) for b in key) if key else "none"
            w.writerow([label, f"{share:.6g}"])
    written.append(path)

    path = out / "impact_hist.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left_mw", "count"])
        for edge, count in summary.histogram:
            w.writerow([f"{edge:.6g}", count])
    written.append(path)

    return written
