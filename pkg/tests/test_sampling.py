import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lraid.grid import PERCEIVED
from lraid.sampling import ErrorDraw, ErrorSpec, ErrorTarget, apply, draw


def spec(target=ErrorTarget.ADMITTANCE, h=0.10, n=100, seed=7) -> ErrorSpec:
    return ErrorSpec(target=target, half_range=h, sample_count=n, master_seed=seed)


def test_zero_half_range_gives_identity_multipliers():
    d = draw(spec(h=0.0), 5, 0)
    assert all(m == 1.0 for m in d.multipliers)


def test_multipliers_within_range():
    s = spec(h=0.10, n=50)
    for i in range(50):
        d = draw(s, 38, i)
        assert len(d.multipliers) == 38
        assert all(0.90 <= m <= 1.10 for m in d.multipliers)


def test_determinism_per_sample_index():
    s = spec()
    a = draw(s, 38, 3)
    b = draw(s, 38, 3)
    assert a == b


def test_distinct_samples_differ():
    s = spec()
    assert draw(s, 38, 0) != draw(s, 38, 1)


def test_master_seed_changes_draws():
    a = draw(spec(seed=1), 10, 0)
    b = draw(spec(seed=2), 10, 0)
    assert a != b


def test_mean_near_one():
    # law-of-large-numbers check on the generator: 1e4 draws
    s = spec(h=0.10, n=10000)
    values = np.concatenate([draw(s, 10, i).multipliers for i in range(1000)])
    assert abs(values.mean() - 1.0) < 0.005


def test_out_of_range_sample_rejected():
    with pytest.raises(ValueError):
        draw(spec(n=10), 5, 10)


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        ErrorSpec(ErrorTarget.ADMITTANCE, 1.0, 10, 0)
    with pytest.raises(ValueError):
        ErrorSpec(ErrorTarget.ADMITTANCE, 0.1, 0, 0)


def test_identity_draw_copies_grid(case3):
    d = draw(spec(h=0.0), case3.n_branches, 0)
    perceived = apply(case3, d, ErrorTarget.ADMITTANCE)
    assert perceived.provenance == PERCEIVED
    assert perceived.branches == case3.branches
    assert perceived.generators == case3.generators
    assert perceived.buses == case3.buses


def test_admittance_error_is_reciprocal_on_reactance(case3):
    d = ErrorDraw(0, (1.10, 1.0, 0.95))
    perceived = apply(case3, d, ErrorTarget.ADMITTANCE)
    assert perceived.branches[0].reactance == pytest.approx(
        case3.branches[0].reactance / 1.10)
    assert perceived.branches[2].reactance == pytest.approx(
        case3.branches[2].reactance / 0.95)
    # capacities bit-identical
    assert perceived.capacities().tolist() == case3.capacities().tolist()


def test_capacity_error_scales_capacity(case3):
    d = ErrorDraw(0, (0.90, 1.0, 1.10))
    perceived = apply(case3, d, ErrorTarget.CAPACITY)
    assert perceived.branches[0].capacity == pytest.approx(0.9 * case3.branches[0].capacity)
    # reactances bit-identical
    assert perceived.reactances().tolist() == case3.reactances().tolist()


def test_apply_never_mutates_original(case3):
    before = case3.branches
    d = draw(spec(h=0.2), case3.n_branches, 1)
    apply(case3, d, ErrorTarget.CAPACITY)
    assert case3.branches == before
    assert case3.provenance == "true"


def test_wrong_multiplier_count_rejected(case3):
    with pytest.raises(ValueError):
        apply(case3, ErrorDraw(0, (1.0, 1.0)), ErrorTarget.CAPACITY)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 99))
def test_draw_reproducible_for_any_seed(seed, index):
    s = ErrorSpec(ErrorTarget.CAPACITY, 0.15, 100, seed)
    assert draw(s, 7, index) == draw(s, 7, index)
