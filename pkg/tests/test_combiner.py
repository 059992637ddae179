import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdogreg.combiner import combine, combine_masks, object_overlaps
from hdogreg.errors import ParameterError
from hdogreg.hessian_blob import label_components


def ten_pixel_object(covered):
    labels = np.zeros((4, 12), np.int32)
    labels[1, 1:11] = 1
    region = np.zeros((4, 12), bool)
    region[1, 1 : 1 + covered] = True
    return labels, region


def random_case(seed):
    r = np.random.default_rng(seed)
    labels, _ = label_components(r.random((24, 24)) < 0.3)
    region = r.random((24, 24)) < r.random()
    return r, labels, region


def test_boundary_geq_leq():
    labels, region = ten_pixel_object(3)
    assert combine(labels, region, 0.3, "geq").sum() == 10
    assert combine(labels, region, 0.3, "leq").sum() == 0
    labels, region = ten_pixel_object(2)
    assert combine(labels, region, 0.3, "geq").sum() == 0
    assert combine(labels, region, 0.3, "leq").sum() == 10


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_modes_are_complementary(seed, o_thr):
    _, labels, region = random_case(seed)
    both = combine(labels, region, o_thr, "geq") ^ combine(labels, region, o_thr, "leq")
    assert np.array_equal(both, labels > 0)


def test_full_and_empty_regions(rng):
    labels, _ = label_components(rng.random((20, 20)) < 0.3)
    assert np.array_equal(combine(labels, np.ones_like(labels, bool), 0.7), labels > 0)
    assert not combine(labels, np.zeros_like(labels, bool), 0.3).any()


def test_overlaps_fraction():
    labels, region = ten_pixel_object(3)
    assert object_overlaps(labels, region).tolist() == [0.3]


def test_errors():
    labels, region = ten_pixel_object(3)
    with pytest.raises(ParameterError):
        combine(labels, region[:, :5], 0.3)
    with pytest.raises(ParameterError):
        combine(labels, region, 1.2)
    with pytest.raises(ParameterError):
        combine(labels, region, 0.3, "gt")


def test_combine_masks_composition(rng):
    cand = rng.random((30, 30)) < 0.2
    prox = rng.random((30, 30))
    expected = combine(label_components(cand)[0], prox >= 0.6, 0.3)
    assert np.array_equal(combine_masks(cand, prox, 0.6, 0.3), expected)


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_whole_objects_only(seed, o_thr):
    _, labels, region = random_case(seed)
    out = combine(labels, region, o_thr)
    assert not (out & (labels == 0)).any()
    for k in np.unique(labels[out]):
        assert out[labels == k].all()


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_monotone_in_region(seed, o_thr):
    r, labels, region = random_case(seed)
    bigger = region | (r.random(region.shape) < 0.2)
    assert not (combine(labels, region, o_thr) & ~combine(labels, bigger, o_thr)).any()


@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_threshold(seed, a, b):
    _, labels, region = random_case(seed)
    lo, hi = sorted((a, b))
    assert not (combine(labels, region, hi) & ~combine(labels, region, lo)).any()
