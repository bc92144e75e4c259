"""ECE, gradient reductions, and the generative calibration score."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selective_rag.calibration import (
    CalibrationRecord,
    GeceInputs,
    GradientVector,
    dataset_mean_gradient,
    ece,
    gece,
    gradient_alignment,
)

from .oracles import reference_ece


# ---------------------------------------------------------------- ECE

def test_ece_perfectly_calibrated():
    records = [CalibrationRecord(1.0, True)] * 5
    assert ece(records, 10) == 0.0


def test_ece_two_bins_hand_computed():
    records = [
        CalibrationRecord(0.9, True),
        CalibrationRecord(0.8, False),
        CalibrationRecord(0.3, False),
    ]
    assert ece(records, 2) == pytest.approx(1 / 3)


def test_ece_single_bin_is_global_gap():
    records = [
        CalibrationRecord(0.7, True),
        CalibrationRecord(0.4, False),
        CalibrationRecord(0.9, True),
    ]
    expected = abs(2 / 3 - (0.7 + 0.4 + 0.9) / 3)
    assert ece(records, 1) == pytest.approx(expected, abs=1e-15)


def test_ece_boundary_goes_to_higher_bin():
    # 0.5 with B=2 must land in the upper bin, making it perfectly calibrated
    # against an accuracy of 0.5 there only if half its members are correct.
    records = [CalibrationRecord(0.5, True), CalibrationRecord(0.5, False)]
    assert ece(records, 2) == pytest.approx(0.0)


def test_ece_confidence_one_stays_in_last_bin():
    assert ece([CalibrationRecord(1.0, False)], 4) == 1.0


def test_ece_rejects_empty():
    with pytest.raises(ValueError):
        ece([], 5)


def test_record_rejects_out_of_range_confidence():
    with pytest.raises(ValueError):
        CalibrationRecord(1.5, True)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), st.booleans()),
        min_size=1,
        max_size=50,
    ),
    st.integers(min_value=1, max_value=10),
)
def test_ece_matches_rebinning_oracle(pairs, num_bins):
    records = [CalibrationRecord(c, ok) for c, ok in pairs]
    expected = reference_ece([c for c, _ in pairs], [ok for _, ok in pairs], num_bins)
    assert abs(ece(records, num_bins) - expected) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), st.booleans()),
        min_size=1,
        max_size=30,
    ),
    st.integers(min_value=1, max_value=8),
)
def test_ece_in_unit_interval(pairs, num_bins):
    records = [CalibrationRecord(c, ok) for c, ok in pairs]
    assert 0.0 <= ece(records, num_bins) <= 1.0


# ---------------------------------------------------------------- gradients

def test_mean_gradient_single_vector_is_itself():
    g = GradientVector(values=(1.0, 2.0, 3.0), instance_id="x")
    assert dataset_mean_gradient([g]).values == (1.0, 2.0, 3.0)


def test_mean_gradient_two_vectors():
    a = GradientVector(values=(1.0, 0.0), instance_id="a")
    b = GradientVector(values=(0.0, 1.0), instance_id="b")
    assert dataset_mean_gradient([a, b]).values == (0.5, 0.5)


def test_mean_gradient_matches_manual_sum():
    rng = np.random.default_rng(7)
    grads = [GradientVector(values=tuple(rng.normal(size=4)), instance_id=str(i)) for i in range(5)]
    mean = dataset_mean_gradient(grads)
    for dim in range(4):
        manual = sum(g.values[dim] for g in grads) / 5
        assert mean.values[dim] == pytest.approx(manual, abs=1e-12)


def test_mean_gradient_dimension_mismatch_names_instance():
    a = GradientVector(values=(1.0, 2.0), instance_id="good")
    b = GradientVector(values=(1.0,), instance_id="bad")
    with pytest.raises(ValueError, match="bad"):
        dataset_mean_gradient([a, b])


def test_mean_gradient_rejects_empty():
    with pytest.raises(ValueError):
        dataset_mean_gradient([])


def test_alignment_orthogonal():
    a = GradientVector(values=(1.0, 0.0))
    b = GradientVector(values=(0.0, 1.0))
    assert gradient_alignment(a, b) == 0.0


def test_alignment_self_dot():
    v = GradientVector(values=(3.0, 4.0))
    assert gradient_alignment(v, v) == 25.0


def test_alignment_matches_naive_loop():
    rng = np.random.default_rng(11)
    a = GradientVector(values=tuple(rng.normal(size=6)))
    b = GradientVector(values=tuple(rng.normal(size=6)))
    naive = sum(x * y for x, y in zip(a.values, b.values))
    assert gradient_alignment(a, b) == pytest.approx(naive, abs=1e-12)


def test_alignment_dimension_mismatch():
    with pytest.raises(ValueError):
        gradient_alignment(GradientVector(values=(1.0,)), GradientVector(values=(1.0, 2.0)))


def test_single_instance_self_alignment_nonnegative():
    v = GradientVector(values=(-2.0, 5.0, 0.5), instance_id="only")
    mean = dataset_mean_gradient([v])
    assert gradient_alignment(mean, v) >= 0.0


def test_gradient_vector_rejects_nonfinite():
    with pytest.raises(ValueError):
        GradientVector(values=(1.0, float("nan")))


# ---------------------------------------------------------------- GECE

def test_gece_zero_numerator():
    inputs = GeceInputs(meteor_score=0.4, mean_token_prob=0.4, alpha=0.01, gradient_dot=5.0)
    assert gece(inputs).value == 0.0


def test_gece_direct_evaluation():
    inputs = GeceInputs(meteor_score=0.6, mean_token_prob=0.2, alpha=0.05, gradient_dot=2.0)
    assert gece(inputs).value == pytest.approx(4.0)
    assert not gece(inputs).denominator_floored


def test_gece_floors_negative_alignment():
    inputs = GeceInputs(meteor_score=0.6, mean_token_prob=0.2, alpha=0.05, gradient_dot=-1.0)
    score = gece(inputs, denom_floor=1e-6)
    assert score.denominator_floored
    assert score.value == pytest.approx(0.4 / (0.05 * 1e-6))


def test_gece_inputs_validation():
    with pytest.raises(ValueError):
        GeceInputs(meteor_score=1.5, mean_token_prob=0.5, alpha=0.1, gradient_dot=1.0)
    with pytest.raises(ValueError):
        GeceInputs(meteor_score=0.5, mean_token_prob=0.0, alpha=0.1, gradient_dot=1.0)
    with pytest.raises(ValueError):
        GeceInputs(meteor_score=0.5, mean_token_prob=0.5, alpha=0.0, gradient_dot=1.0)
    with pytest.raises(ValueError):
        GeceInputs(meteor_score=0.5, mean_token_prob=0.5, alpha=0.1, gradient_dot=float("inf"))


gece_inputs = st.builds(
    GeceInputs,
    meteor_score=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
    mean_token_prob=st.floats(min_value=1e-6, max_value=1.0, allow_nan=False),
    alpha=st.floats(min_value=1e-8, max_value=1.0, allow_nan=False),
    gradient_dot=st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
)


@settings(max_examples=150, deadline=None)
@given(gece_inputs)
def test_gece_matches_direct_formula(inputs):
    score = gece(inputs, denom_floor=1e-6)
    denom = inputs.alpha * max(inputs.gradient_dot, 1e-6)
    expected = abs(inputs.meteor_score - inputs.mean_token_prob) / denom
    assert abs(score.value - expected) < 1e-12 * max(1.0, expected)
    assert score.value >= 0.0
    assert math.isfinite(score.value)


@settings(max_examples=100, deadline=None)
@given(gece_inputs, st.floats(min_value=1.1, max_value=4.0))
def test_gece_strictly_decreasing_in_alpha(inputs, factor):
    import dataclasses

    bigger_alpha = dataclasses.replace(inputs, alpha=inputs.alpha * factor)
    if gece(inputs).value > 0:
        assert gece(bigger_alpha).value < gece(inputs).value


@settings(max_examples=100, deadline=None)
@given(gece_inputs, st.floats(min_value=1.1, max_value=4.0))
def test_gece_strictly_decreasing_in_gradient_dot(inputs, factor):
    import dataclasses

    if inputs.gradient_dot <= 1e-6 or gece(inputs).value == 0:
        return
    bigger_dot = dataclasses.replace(inputs, gradient_dot=inputs.gradient_dot * factor)
    assert gece(bigger_dot).value < gece(inputs).value


@settings(max_examples=100, deadline=None)
@given(gece_inputs)
def test_gece_numerator_symmetric(inputs):
    import dataclasses

    if not (0.0 < inputs.meteor_score <= 1.0):
        return
    swapped = dataclasses.replace(
        inputs, meteor_score=inputs.mean_token_prob, mean_token_prob=inputs.meteor_score
    )
    assert gece(swapped).value == pytest.approx(gece(inputs).value, rel=1e-12)
