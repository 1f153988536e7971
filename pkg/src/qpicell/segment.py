"""Nucleus mask from a brightfield ROI: luma, median filter, 2-means, cleanup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, InvalidInputError, SegmentationError

BT601_WEIGHTS = (0.299, 0.587, 0.114)
MIN_MASK_PIXELS = 16
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RoiSpec:
    image_id: str
    center: tuple[int, int]  # (row, col)
    size: int = 256

    def bounds(self, image_shape) -> tuple[slice, slice]:
        h, w = image_shape[:2]
        half = self.size // 2
        r0, c0 = int(self.center[0]) - half, int(self.center[1]) - half
        if r0 < 0 or c0 < 0 or r0 + self.size > h or c0 + self.size > w:
            raise InvalidInputError(f"ROI {self} is not fully inside a {h}x{w} image")
        return slice(r0, r0 + self.size), slice(c0, c0 + self.size)

    def crop(self, image):
        rows, cols = self.bounds(np.shape(image))
        return np.asarray(image)[rows, cols]


def rgb_to_luma(rgb, weights=BT601_WEIGHTS) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) RGB image, got {rgb.shape}")
    return rgb @ np.asarray(weights, dtype=np.float64)


def median_filter(grey, window: int = 3) -> np.ndarray:
    if window < 3 or window % 2 == 0:
        raise InvalidInputError(f"median window must be odd and >= 3, got {window}")
    return ndimage.median_filter(np.asarray(grey, dtype=np.float64), size=window, mode="nearest")


def kmeans2(grey, init_percentiles=(10.0, 90.0), max_iter: int = 100) -> np.ndarray:
    """Two-cluster Lloyd iterations on pixel intensities.

    Centroids start at the given intensity percentiles; iteration stops when
    the assignment no longer changes. The darker cluster is labelled 1.
    """
    v = np.asarray(grey, dtype=np.float64)
    if v.size == 0 or np.ptp(v) == 0:
        raise DegenerateInputError("image has a single intensity value; cannot split into two clusters")
    lo, hi = np.percentile(v, init_percentiles)
    if lo == hi:
        # heavily skewed histogram: fall back to the extremes
        lo, hi = float(v.min()), float(v.max())
    labels = None
    for _ in range(max_iter):
        new = np.abs(v - lo) <= np.abs(v - hi)  # True -> dark cluster; ties go dark
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if labels.all() or not labels.any():
            break
        lo, hi = float(v[labels].mean()), float(v[~labels].mean())
    return labels.astype(np.uint8)


def refine_mask(raw, roi_center) -> np.ndarray:
    """Keep the 4-connected component whose centroid is closest to ``roi_center`` and fill its holes."""
    raw = np.asarray(raw).astype(bool)
    if not raw.any():
        raise SegmentationError("segmentation produced an empty foreground")
    labels, n = ndimage.label(raw, structure=_FOUR_CONNECTED)
    centroids = np.asarray(ndimage.center_of_mass(raw, labels, range(1, n + 1)), dtype=np.float64)
    dist = np.hypot(centroids[:, 0] - roi_center[0], centroids[:, 1] - roi_center[1])
    keep = labels == int(np.argmin(dist)) + 1
    mask = ndimage.binary_fill_holes(keep, structure=_FOUR_CONNECTED)
    check_mask(mask)
    return mask.astype(np.uint8)


def check_mask(mask):
    m = np.asarray(mask).astype(bool)
    count = int(m.sum())
    if count < MIN_MASK_PIXELS:
        raise SegmentationError(f"mask has {count} pixels, fewer than {MIN_MASK_PIXELS}")
    _, n = ndimage.label(m, structure=_FOUR_CONNECTED)
    if n != 1:
        raise SegmentationError(f"mask has {n} connected components, expected 1")


def segment_nucleus(rgb, roi: RoiSpec | None = None, window: int = 3,
                    init_percentiles=(10.0, 90.0), luma_weights=BT601_WEIGHTS) -> np.ndarray:
    """Binary nucleus mask of an RGB ROI; the ROI centre defaults to the image centre."""
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    center = (h // 2, w // 2)
    if roi is not None and rgb.shape[:2] != (roi.size, roi.size):
        # full image plus ROI spec: crop first
        rgb = roi.crop(rgb)
        center = (roi.size // 2, roi.size // 2)
    grey = median_filter(rgb_to_luma(rgb, luma_weights), window)
    raw = kmeans2(grey, init_percentiles)
    return refine_mask(raw, center)
