import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdogreg.hessian_blob import (
    HDoGParams,
    HessianField,
    extract_blob_objects,
    hdog_segment,
    hessian_field,
    hessian_mask,
    label_components,
)
from hdogreg.metrics import iou
from hdogreg.phantom import PhantomSpec, generate
from hdogreg.scale_space import Blob, build_scale_sequence

SCALES = build_scale_sequence(1.18, 3.1, 8)


def grid(h=12, w=15):
    y, x = np.mgrid[:h, :w].astype(np.float64)
    return x, y


class TestField:
    def test_x_squared(self):
        x, _ = grid()
        f = hessian_field(x**2)
        inner = (slice(1, -1), slice(1, -1))
        assert np.abs(f.hxx[inner] - 2).max() < 1e-12
        assert np.abs(f.hyy[inner]).max() < 1e-12
        assert np.abs(f.hxy[inner]).max() < 1e-12

    def test_xy(self):
        x, y = grid()
        f = hessian_field(x * y)
        inner = (slice(1, -1), slice(1, -1))
        assert np.abs(f.hxy[inner] - 1).max() < 1e-12
        assert np.abs(f.hxx[inner]).max() < 1e-12
        assert np.abs(f.hyy[inner]).max() < 1e-12

    def test_general_quadratic(self, rng):
        a, b, c, d, e, g = rng.normal(size=6)
        x, y = grid(20, 20)
        f = hessian_field(a * x**2 + b * x * y + c * y**2 + d * x + e * y + g)
        inner = (slice(1, -1), slice(1, -1))
        assert np.abs(f.hxx[inner] - 2 * a).max() < 1e-10
        assert np.abs(f.hyy[inner] - 2 * c).max() < 1e-10
        assert np.abs(f.hxy[inner] - b).max() < 1e-10

    def test_gaussian_curvature(self):
        s = 4.0
        x, y = grid(41, 41)
        g = np.exp(-((x - 20) ** 2 + (y - 20) ** 2) / (2 * s * s)) / (2 * math.pi * s * s)
        expected = -1 / (2 * math.pi * s**4)
        assert abs(hessian_field(g).hxx[20, 20] - expected) < 0.02 * abs(expected)

    def test_finite_at_borders(self, rng):
        f = hessian_field(rng.random((5, 7)))
        assert all(np.isfinite(a).all() and a.shape == (5, 7) for a in (f.hxx, f.hxy, f.hyy))


class TestMask:
    def test_bright_blob_centre_set(self):
        x, y = grid(21, 21)
        g = np.exp(-((x - 10) ** 2 + (y - 10) ** 2) / 8.0)
        f = hessian_field(g)
        assert f.det[10, 10] / f.trace[10, 10] ** 2 == pytest.approx(0.25, abs=1e-3)
        assert hessian_mask(f, 1.4)[10, 10]

    def test_dark_blob_not_set(self):
        x, y = grid(21, 21)
        assert not hessian_mask(hessian_field(-np.exp(-((x - 10) ** 2 + (y - 10) ** 2) / 8.0)), 1.4)[10, 10]

    def test_zero_field(self):
        z = np.zeros((6, 6))
        assert not hessian_mask(HessianField(z, z, z), 1.4).any()

    def test_ratio_clause(self):
        # negative definite with det/tr^2 = 0.25; excluded only once h_thr drops below it
        one = np.ones((1, 1))
        f = HessianField(-one, 0 * one, -one)
        assert hessian_mask(f, 0.25)[0, 0]
        assert not hessian_mask(f, 0.2)[0, 0]
        # saddle with negative trace is always set
        assert hessian_mask(HessianField(-2 * one, 0 * one, one), 0.0)[0, 0]

    @given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
    def test_shift_and_flip_invariance(self, seed, c):
        plane = np.random.default_rng(seed).normal(size=(10, 11))
        m = hessian_mask(hessian_field(plane), 1.4)
        assert np.array_equal(hessian_mask(hessian_field(plane + c), 1.4), m) or _close_call(plane, c)
        assert np.array_equal(hessian_mask(hessian_field(plane[:, ::-1]), 1.4), m[:, ::-1])
        assert np.array_equal(hessian_mask(hessian_field(plane[::-1]), 1.4), m[::-1])


def _close_call(plane, c):
    # adding a constant can flip a sign only through round-off on near-zero traces
    f1, f2 = hessian_field(plane), hessian_field(plane + c)
    diff = hessian_mask(f1, 1.4) != hessian_mask(f2, 1.4)
    return np.all(np.abs(f1.trace[diff]) < 1e-9) or np.all(np.abs(f1.det[diff]) < 1e-9)


class TestLabels:
    def test_empty(self):
        assert label_components(np.zeros((4, 4), bool))[1] == 0

    def test_diagonal_touch(self):
        m = np.zeros((3, 3), bool)
        m[0, 0] = m[1, 1] = True
        assert label_components(m)[1] == 1

    def test_raster_order(self):
        m = np.zeros((10, 10), bool)
        m[6:8, 1:3] = True  # third in raster order
        m[1:3, 7:9] = True  # second
        m[0:2, 0:2] = True  # first
        lab, n = label_components(m)
        assert n == 3
        assert lab[0, 0] == 1 and lab[1, 7] == 2 and lab[6, 1] == 3
        assert lab.dtype == np.int32


class TestExtract:
    def test_no_blobs(self):
        assert not extract_blob_objects([], SCALES, [np.ones((5, 5), bool)] * 7).any()

    def test_component_identity(self):
        mask = np.zeros((12, 12), bool)
        mask[3:8, 3:8] = True
        mask[10, 10] = True
        out = extract_blob_objects([Blob(5, 5, SCALES.sigmas[2], 1.0)], SCALES, [mask] * 7)
        expected = np.zeros_like(mask)
        expected[3:8, 3:8] = True
        assert np.array_equal(out, expected)

    def test_snap_and_miss(self):
        mask = np.zeros((12, 12), bool)
        mask[3:5, 3:5] = True
        near = extract_blob_objects([Blob(6, 4, SCALES.sigmas[0], 1.0)], SCALES, [mask] * 7)
        assert near.sum() == 4
        far = extract_blob_objects([Blob(9, 9, SCALES.sigmas[0], 1.0)], SCALES, [mask] * 7)
        assert not far.any()

    def test_union_across_scales(self):
        a = np.zeros((10, 10), bool)
        b = np.zeros((10, 10), bool)
        a[2:6, 2:6] = True
        b[4:8, 4:8] = True
        masks = [a] + [b] * 6
        out = extract_blob_objects(
            [Blob(3, 3, SCALES.sigmas[0], 1.0), Blob(6, 6, SCALES.sigmas[3], 1.0)], SCALES, masks
        )
        assert np.array_equal(out, a | b)


class TestSegment:
    def test_zero_image(self):
        mask, blobs = hdog_segment(np.zeros((32, 32)))
        assert not mask.any() and blobs == []

    def test_phantom_recovery(self):
        ph = generate(PhantomSpec(), seed=11)
        mask, blobs = hdog_segment(ph.image)
        lab, n = label_components(mask)
        recovered = 0
        for k in range(1, ph.n_objects + 1):
            truth = ph.truth_labels == k
            hits = np.unique(lab[truth])
            hits = hits[hits > 0]
            if len(hits) == 0:
                continue
            recovered += 1
            best = max(iou(lab == h, truth) for h in hits)
            assert best >= 0.4
        assert recovered >= 19

    def test_salt_noise(self):
        r = np.random.default_rng(5)
        img = np.full((64, 64), 0.3)
        img[r.integers(0, 64, 30), r.integers(0, 64, 30)] = 1.0
        mask, blobs = hdog_segment(img)
        assert mask.shape == img.shape

    def test_objects_contain_blob_centres(self):
        ph = generate(PhantomSpec(height=128, width=128, n_blobs=6), seed=2)
        mask, blobs = hdog_segment(ph.image)
        lab, n = label_components(mask)
        for k in range(1, n + 1):
            obj = lab == k
            assert any(
                obj[max(b.y - 2, 0) : b.y + 3, max(b.x - 2, 0) : b.x + 3].any() for b in blobs
            )

    def test_blob_order_irrelevant(self):
        ph = generate(PhantomSpec(height=96, width=96, n_blobs=4), seed=4)
        p = HDoGParams()
        from hdogreg.hessian_blob import hessian_masks
        from hdogreg.scale_space import detect_blobs, dog_stack

        stack = dog_stack(ph.image, SCALES)
        blobs = detect_blobs(stack, SCALES, p.t_dog)
        masks = hessian_masks(stack, p.h_thr)
        a = extract_blob_objects(blobs, SCALES, masks)
        b = extract_blob_objects(blobs[::-1], SCALES, masks)
        assert np.array_equal(a, b)

    def test_threads_identical(self):
        ph = generate(PhantomSpec(height=96, width=96, n_blobs=4), seed=4)
        m1, b1 = hdog_segment(ph.image)
        m4, b4 = hdog_segment(ph.image, threads=4)
        assert np.array_equal(m1, m4) and b1 == b4
