import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import count_components, fill_from_border, median_sort, otsu_sweep
from qpicell.errors import DegenerateInputError, InvalidInputError, SegmentationError
from qpicell.fields import Grid
from qpicell.holo_sim import OpticalConfig, PhantomSpec, make_phantom
from qpicell.metrics import dice
from qpicell.segment import (RoiSpec, check_mask, kmeans2, median_filter, refine_mask,
                             rgb_to_luma, segment_nucleus)


def disk(n, r, c=None):
    c = (n // 2, n // 2) if c is None else c
    y, x = np.mgrid[0:n, 0:n]
    return np.hypot(y - c[0], x - c[1]) < r


def test_luma_examples():
    px = np.array([[[255, 255, 255], [0, 0, 0], [0, 255, 0]]], dtype=np.uint8)
    y = rgb_to_luma(px)
    assert y[0, 0] == pytest.approx(255.0)
    assert y[0, 1] == 0.0
    assert y[0, 2] == pytest.approx(149.685)
    with pytest.raises(InvalidInputError):
        rgb_to_luma(np.zeros((4, 4)))


def test_median_constant_and_impulse():
    img = np.full((7, 7), 5.0)
    np.testing.assert_array_equal(median_filter(img), img)
    img[3, 3] = 200
    np.testing.assert_array_equal(median_filter(img), np.full((7, 7), 5.0))
    with pytest.raises(InvalidInputError):
        median_filter(img, 4)
    with pytest.raises(InvalidInputError):
        median_filter(img, 1)


@pytest.mark.parametrize("window", [3, 5])
def test_median_matches_sort_oracle(rng, window):
    img = rng.integers(0, 255, size=(7, 7)).astype(float)
    np.testing.assert_array_equal(median_filter(img, window), median_sort(img, window))


def test_kmeans_two_valued_disk():
    m = disk(64, 15)
    img = np.where(m, 40.0, 200.0)
    np.testing.assert_array_equal(kmeans2(img).astype(bool), m)


@given(st.floats(0.1, 10.0), st.floats(-100.0, 100.0))
def test_kmeans_affine_equivariance(a, b):
    rng = np.random.default_rng(0)
    img = np.where(disk(32, 9), 60.0, 180.0) + rng.normal(0, 15, (32, 32))
    np.testing.assert_array_equal(kmeans2(img), kmeans2(a * img + b))


def test_kmeans_matches_threshold_sweep():
    rng = np.random.default_rng(1)
    m = disk(96, 30)
    img = np.where(m, rng.normal(60, 10, m.shape), rng.normal(180, 10, m.shape))
    t = otsu_sweep(img)
    oracle = img <= t
    agree = np.mean(kmeans2(img).astype(bool) == oracle)
    assert agree >= 0.99


def test_kmeans_constant_raises():
    with pytest.raises(DegenerateInputError):
        kmeans2(np.full((5, 5), 3.0))


def test_kmeans_skewed_percentile_fallback():
    img = np.zeros((20, 20))
    img[0, 0] = 10.0  # 10th and 90th percentiles coincide
    lab = kmeans2(img)
    assert lab[0, 0] == 0 and lab.sum() == 399


def test_refine_single_component_unchanged():
    m = disk(32, 8)
    np.testing.assert_array_equal(refine_mask(m, (16, 16)).astype(bool), m)


def test_refine_removes_speckle_and_fills_holes():
    m = disk(64, 12)
    m[2:4, 2:4] = True
    ring = m.copy()
    ring[disk(64, 5)] = False
    out = refine_mask(ring, (32, 32)).astype(bool)
    np.testing.assert_array_equal(out, disk(64, 12))
    np.testing.assert_array_equal(out, fill_from_border(disk(64, 12) & ~disk(64, 5)))


def test_refine_picks_component_nearest_center():
    m = disk(64, 6, (15, 15)) | disk(64, 6, (34, 34))
    out = refine_mask(m, (32, 32)).astype(bool)
    np.testing.assert_array_equal(out, disk(64, 6, (34, 34)))


def test_refine_errors():
    with pytest.raises(SegmentationError):
        refine_mask(np.zeros((8, 8)), (4, 4))
    tiny = np.zeros((8, 8), bool)
    tiny[3:5, 3:5] = True
    with pytest.raises(SegmentationError):
        refine_mask(tiny, (4, 4))
    two = np.zeros((16, 16), bool)
    two[:5, :5] = two[10:, 10:] = True
    with pytest.raises(SegmentationError):
        check_mask(two)


def test_roi_spec_crop_and_bounds():
    img = np.arange(100 * 120).reshape(100, 120)
    roi = RoiSpec("a", (50, 60), 32)
    crop = roi.crop(img)
    assert crop.shape == (32, 32) and crop[16, 16] == img[50, 60]
    with pytest.raises(InvalidInputError):
        RoiSpec("b", (10, 10), 32).crop(img)


def phantom(seed, noise=2.0, n=256, center=None):
    spec = PhantomSpec(nucleus_radius=32)
    cfg = OpticalConfig(grid=Grid(n, n))
    return make_phantom(spec, seed, cfg, center=center, brightfield_noise=noise)


def test_segment_phantom_noisy():
    t = phantom(3)
    M = segment_nucleus(t.brightfield)
    assert dice(M, t.mask) >= 0.95
    assert abs(M.sum() - t.mask.sum()) <= 0.05 * t.mask.sum()
    assert count_components(M) == 1


def test_segment_phantom_noise_free():
    t = phantom(4, noise=0.0)
    assert dice(segment_nucleus(t.brightfield), t.mask) >= 0.99


def test_segment_constant_roi_raises():
    with pytest.raises(DegenerateInputError):
        segment_nucleus(np.full((32, 32, 3), 120, np.uint8))


def test_segment_deterministic():
    t = phantom(5)
    assert segment_nucleus(t.brightfield).tobytes() == segment_nucleus(t.brightfield).tobytes()


def test_segment_with_roi_on_larger_frame():
    t = phantom(6, n=384, center=(150, 220))
    roi = RoiSpec("frame", (150, 220), 256)
    M = segment_nucleus(t.brightfield, roi)
    assert M.shape == (256, 256)
    assert dice(M, roi.crop(t.mask)) >= 0.95
