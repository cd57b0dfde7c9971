import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionkit.licu import (
    EmptyMaskError,
    LesionIndex,
    compute_index,
    lesion_index,
    normalize_possibilities,
    refine,
)


def pixel(v):
    return np.array(v, dtype=np.float64).reshape(1, 1, 3)


# --------------------------------------------------------------- normalization

def test_normalize_worked_example():
    p = normalize_possibilities(pixel([0.2, 0.5, 0.3]))
    np.testing.assert_allclose(p[0, 0], [0.0, 0.75, 0.25], atol=1e-12)


def test_normalize_degenerate_pixel_is_exactly_uniform():
    for c in (0.0, 0.4, -2.0, 7.3):
        p = normalize_possibilities(pixel([c, c, c]))
        assert p[0, 0, 0] == p[0, 0, 1] == p[0, 0, 2] == 1.0 / 3.0
        assert p[0, 0].sum() == 1.0


def test_normalize_one_hot_fixed_point():
    p = normalize_possibilities(pixel([0.0, 1.0, 0.0]))
    np.testing.assert_array_equal(p[0, 0], [0.0, 1.0, 0.0])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_normalize_rows_sum_to_one_with_zero_min(seed):
    rng = np.random.default_rng(seed)
    maps = rng.normal(size=(6, 5, 3))
    p = normalize_possibilities(maps)
    np.testing.assert_allclose(p.sum(axis=2), np.ones((6, 5)), atol=1e-9)
    assert p.min() >= 0
    degenerate = (maps.max(axis=2) - maps.min(axis=2)) == 0
    mins = np.take_along_axis(p, maps.argmin(axis=2)[:, :, None], axis=2)[:, :, 0]
    assert np.all(mins[~degenerate] == 0)


def test_normalize_invariant_to_additive_shift_and_positive_scale():
    rng = np.random.default_rng(1)
    maps = rng.normal(size=(4, 4, 3))
    base = normalize_possibilities(maps)
    shifted = normalize_possibilities(maps + rng.normal(size=(4, 4, 1)))
    np.testing.assert_allclose(shifted, base, atol=1e-9)
    lo = maps.min(axis=2, keepdims=True)
    scaled = normalize_possibilities(lo + 3.7 * (maps - lo))
    np.testing.assert_allclose(scaled, base, atol=1e-9)


def test_normalize_rejects_bad_shapes():
    with pytest.raises(ValueError):
        normalize_possibilities(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        normalize_possibilities(np.full((2, 2, 3), np.nan))


# ------------------------------------------------------------------ refinement

def test_refine_unit_and_zero_weights():
    rng = np.random.default_rng(2)
    p = normalize_possibilities(rng.normal(size=(5, 4, 3)))
    np.testing.assert_array_equal(refine(p, np.ones((5, 4))), p)
    np.testing.assert_array_equal(refine(p, np.zeros((5, 4))), np.zeros_like(p))


def test_refine_single_pixel_product():
    out = refine(pixel([0.0, 0.75, 0.25]), np.full((1, 1), 2.0))
    np.testing.assert_allclose(out[0, 0], [0.0, 1.5, 0.5], atol=1e-12)


def test_refine_rejects_mismatched_distance_map():
    with pytest.raises(ValueError, match="does not match"):
        refine(np.zeros((3, 3, 3)), np.zeros((2, 3)))


# ---------------------------------------------------------------- lesion index

def test_constant_fields_pass_through():
    p = np.tile(np.array([0.2, 0.5, 0.3]), (6, 6, 1))
    d = np.full((6, 6), 4.2)
    mask = np.zeros((6, 6), dtype=bool)
    mask[2:5, 1:4] = True
    idx = lesion_index(refine(p, d), mask)
    np.testing.assert_allclose(idx.as_array(), [0.2, 0.5, 0.3], atol=1e-12)
    assert idx.predicted_class == "seborrheic_keratosis"


def test_two_pixel_hand_average():
    refined = np.zeros((1, 2, 3))
    refined[0, 0] = [0.0, 1.0, 0.0]
    refined[0, 1] = [0.0, 0.0, 1.0]
    idx = lesion_index(refined, np.ones((1, 2), dtype=bool))
    np.testing.assert_allclose(idx.as_array(), [0.0, 0.5, 0.5], atol=1e-12)


def test_distance_scale_cancels():
    rng = np.random.default_rng(3)
    coarse = rng.normal(size=(12, 10, 3))
    d = rng.random((12, 10)) * 5
    mask = rng.random((12, 10)) > 0.4
    mask[0, 0] = True
    base = compute_index(coarse, d, mask)
    for c in (0.1, 1.0, 7.3):
        scaled = compute_index(coarse, c * d, mask)
        np.testing.assert_allclose(scaled.as_array(), base.as_array(), atol=1e-9)
        assert scaled.predicted_class == base.predicted_class


def test_constant_distance_reduces_to_plain_averaging():
    rng = np.random.default_rng(4)
    for _ in range(25):
        coarse = rng.normal(size=(9, 9, 3))
        mask = rng.random((9, 9)) > 0.5
        if not mask.any():
            continue
        p = normalize_possibilities(coarse)
        idx = compute_index(coarse, np.full((9, 9), 2.5), mask)
        plain = p[mask].mean(axis=0)
        assert int(np.argmax(idx.as_array())) == int(np.argmax(plain))
        np.testing.assert_allclose(idx.as_array(), plain / plain.sum(), atol=1e-9)


def test_empty_mask_signals_no_lesion():
    with pytest.raises(EmptyMaskError, match="no lesion found"):
        lesion_index(np.zeros((4, 4, 3)), np.zeros((4, 4), dtype=bool))


def test_all_zero_refined_returns_uniform():
    idx = lesion_index(np.zeros((4, 4, 3)), np.ones((4, 4), dtype=bool))
    np.testing.assert_allclose(idx.as_array(), [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_lesion_index_type_validates():
    with pytest.raises(ValueError):
        LesionIndex(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        LesionIndex(-0.1, 0.6, 0.5)
    idx = LesionIndex(0.2, 0.3, 0.5)
    assert idx.predicted_class == "nevus"
