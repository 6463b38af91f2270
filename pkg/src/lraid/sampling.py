"""Random perceived grids: per-branch uniform error terms on admittance or capacity.

Draws are counter-based: every (master_seed, sample_index) pair derives its
own generator, so sample i is reproducible in isolation and parallel workers
produce identical campaigns regardless of scheduling.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .grid import GridCase, PERCEIVED


class ErrorTarget(str, enum.Enum):
    ADMITTANCE = "admittance"
    CAPACITY = "capacity"


@dataclass(frozen=True)
class ErrorSpec:
    target: ErrorTarget
    half_range: float            # e.g. 0.10 for +/-10%
    sample_count: int
    master_seed: int

    def __post_init__(self):
        if not (0.0 <= self.half_range < 1.0):
            raise ValueError(f"half_range {self.half_range} outside [0, 1)")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass(frozen=True)
class ErrorDraw:
    sample_index: int
    multipliers: tuple[float, ...]   # one per branch, in [1-h, 1+h]


def draw(spec: ErrorSpec, branch_count: int, sample_index: int) -> ErrorDraw:
    """Per-branch multipliers for one Monte Carlo sample."""
    if not (0 <= sample_index < spec.sample_count):
        raise ValueError(f"sample_index {sample_index} outside [0, {spec.sample_count})")
    seq = np.random.SeedSequence(entropy=spec.master_seed, spawn_key=(sample_index,))
    rng = np.random.default_rng(seq)
    multipliers = 1.0 + spec.half_range * rng.uniform(-1.0, 1.0, size=branch_count)
    return ErrorDraw(sample_index=sample_index, multipliers=tuple(float(m) for m in multipliers))


def apply(grid_true: GridCase, error_draw: ErrorDraw, target: ErrorTarget) -> GridCase:
    """Perceived copy of the true grid with the draw applied to one parameter.

    Admittance errors are multiplicative on 1/X (so the perceived reactance
    is X / multiplier); capacity errors multiply the branch limit. The other
    parameter and everything else are copied bit-identically; demands are
    never perturbed.
    """
    if len(error_draw.multipliers) != grid_true.n_branches:
        raise ValueError(
            f"draw has {len(error_draw.multipliers)} multipliers for "
            f"{grid_true.n_branches} branches"
        )
    target = ErrorTarget(target)
    branches = []
    for br, mult in zip(grid_true.branches, error_draw.multipliers):
        if target is ErrorTarget.ADMITTANCE:
            branches.append(dataclasses.replace(br, reactance=br.reactance / mult))
        else:
            branches.append(dataclasses.replace(br, capacity=br.capacity * mult))
    return dataclasses.replace(
        grid_true, branches=tuple(branches), provenance=PERCEIVED
    )
