"""Per-nucleus morphological features from brightfield, phase and mask.

Column order is fixed by :data:`FEATURE_NAMES`: ten brightfield features
followed by nine phase features. ``M`` is the binary mask and ``phi`` the
unwrapped, offset-normalized phase ROI.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import FeatureUndefinedError, InvalidInputError
from .fields import gradient
from .segment import BT601_WEIGHTS, MIN_MASK_PIXELS

SCALE_FACTORS = (0.75, 0.5, 0.25, 0.125)

BRIGHTFIELD_FEATURES = (
    "area", "perimeter", "perimeter_per_area", "mean_luma",
    "mean_r", "mean_g", "mean_b", "var_r", "var_g", "var_b",
)
PHASE_FEATURES = (
    "optical_volume", "roughness_per_area",
    "roughness_scale_0p75", "roughness_scale_0p5", "roughness_scale_0p25", "roughness_scale_0p125",
    "phase_variance", "centroid_shift", "moment_of_inertia",
)
FEATURE_NAMES = BRIGHTFIELD_FEATURES + PHASE_FEATURES


@dataclass(frozen=True)
class NucleusFeatures:
    nucleus_id: str
    area: float
    perimeter: float
    perimeter_per_area: float
    mean_luma: float
    mean_r: float
    mean_g: float
    mean_b: float
    var_r: float
    var_g: float
    var_b: float
    optical_volume: float
    roughness_per_area: float
    roughness_scale_0p75: float
    roughness_scale_0p5: float
    roughness_scale_0p25: float
    roughness_scale_0p125: float
    phase_variance: float
    centroid_shift: float
    moment_of_inertia: float

    def values(self) -> np.ndarray:
        return np.array(astuple(self)[1:], dtype=np.float64)


assert tuple(f.name for f in fields(NucleusFeatures))[1:] == FEATURE_NAMES


def _mask(M) -> np.ndarray:
    m = np.asarray(M).astype(bool)
    if m.ndim != 2:
        raise InvalidInputError("mask must be 2D")
    if not m.any():
        raise InvalidInputError("mask is empty")
    return m


def _same_grid(phi, m):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != m.shape:
        raise InvalidInputError(f"phase {phi.shape} and mask {m.shape} grids differ")
    return phi


# --------------------------------------------------------------------------- brightfield


def area(M) -> float:
    return float(_mask(M).sum())


def perimeter(M) -> float:
    gx, gy = gradient(_mask(M).astype(np.float64))
    return float(np.sum(np.sqrt(gx * gx + gy * gy)))


def perimeter_per_area(M) -> float:
    return perimeter(M) / area(M)


def intensity_stats(rgb, M) -> dict[str, float]:
    """Mean luma plus per-channel mean and population variance inside the mask."""
    m = _mask(M)
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[:2] != m.shape or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError("RGB ROI and mask grids differ")
    px = rgb[m]
    means = px.mean(axis=0)
    var = px.var(axis=0)
    return {
        "mean_luma": float((px @ np.asarray(BT601_WEIGHTS)).mean()),
        "mean_r": float(means[0]), "mean_g": float(means[1]), "mean_b": float(means[2]),
        "var_r": float(var[0]), "var_g": float(var[1]), "var_b": float(var[2]),
    }


# --------------------------------------------------------------------------- phase


def optical_volume(phi, M) -> float:
    m = _mask(M)
    return float(_same_grid(phi, m)[m].sum())


def roughness_per_area(phi, M) -> float:
    """Mean phase-gradient magnitude over the mask eroded by one pixel.

    Erosion keeps the artificial mask-edge step out of the sum.
    """
    m = _mask(M)
    phi = _same_grid(phi, m)
    inner = ndimage.binary_erosion(m)
    n = int(inner.sum())
    if n == 0:
        raise FeatureUndefinedError("mask vanishes after one-pixel erosion")
    gx, gy = gradient(phi)
    return float(np.sqrt(gx * gx + gy * gy)[inner].sum() / n)


def _cubic(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
                    np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0))


def _resize_matrix(n_in: int, scale: float) -> np.ndarray:
    """Rows hold the bicubic weights of one output sample; the kernel is
    stretched by 1/scale when shrinking so the result is antialiased."""
    n_out = max(1, int(round(n_in * scale)))
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(int)
    taps = int(math.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = _cubic((centers[:, None] - idx) * kscale)
    w /= w.sum(axis=1, keepdims=True)
    W = np.zeros((n_out, n_in))
    np.add.at(W, (np.repeat(np.arange(n_out), taps), np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    return W


def bicubic_resize(image, scale: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    Wy = _resize_matrix(image.shape[0], scale)
    Wx = _resize_matrix(image.shape[1], scale)
    return Wy @ image @ Wx.T


def multiscale_roughness(phi, M, scales=SCALE_FACTORS) -> list[float]:
    """Roughness per area after bicubic down-scaling of phase and mask.

    The resampled mask is re-binarized at 0.5 (ties count as outside).
    """
    m = _mask(M)
    phi = _same_grid(phi, m)
    out = []
    for s in scales:
        # rounding first keeps exact 0.5 ties from flipping on last-bit noise
        ms = np.round(bicubic_resize(m.astype(np.float64), s), 9) > 0.5
        if ms.sum() < MIN_MASK_PIXELS:
            raise FeatureUndefinedError(
                f"mask keeps {int(ms.sum())} px at scale {s}, fewer than {MIN_MASK_PIXELS}")
        out.append(roughness_per_area(bicubic_resize(phi, s), ms))
    return out


def phase_variance(phi, M) -> float:
    m = _mask(M)
    return float(_same_grid(phi, m)[m].var())


def _phase_centroid(phi, m):
    w = phi[m]
    total = w.sum()
    if not total > 0:
        raise FeatureUndefinedError(f"phase centroid undefined: masked phase sum is {total:.3g}")
    rows, cols = np.nonzero(m)
    return np.array([np.dot(w, rows) / total, np.dot(w, cols) / total]), total


def centroid_shift(phi, M) -> float:
    """Distance between the phase-weighted and the plain mask centroid."""
    m = _mask(M)
    phi = _same_grid(phi, m)
    pc, _ = _phase_centroid(phi, m)
    rows, cols = np.nonzero(m)
    gc = np.array([rows.mean(), cols.mean()])
    return float(np.hypot(*(pc - gc)))


def moment_of_inertia(phi, M, origin=None) -> float:
    """``sum(phi r^2) + sum(phi) d^2`` over the mask.

    ``r`` is the pixel distance to ``origin`` (default: ROI centre pixel
    ``(H // 2, W // 2)``) and ``d`` the distance from the origin to the
    phase centroid.
    """
    m = _mask(M)
    phi = _same_grid(phi, m)
    if origin is None:
        origin = (m.shape[0] // 2, m.shape[1] // 2)
    pc, total = _phase_centroid(phi, m)
    rows, cols = np.nonzero(m)
    r2 = (rows - origin[0]) ** 2 + (cols - origin[1]) ** 2
    d2 = (pc[0] - origin[0]) ** 2 + (pc[1] - origin[1]) ** 2
    return float(np.dot(phi[m], r2) + total * d2)


def extract_all(brightfield, phi, M, nucleus_id: str) -> NucleusFeatures:
    m = _mask(M)
    a = area(m)
    p = perimeter(m)
    stats = intensity_stats(brightfield, m)
    scaled = multiscale_roughness(phi, m)
    return NucleusFeatures(
        nucleus_id=str(nucleus_id),
        area=a, perimeter=p, perimeter_per_area=p / a, **stats,
        optical_volume=optical_volume(phi, m),
        roughness_per_area=roughness_per_area(phi, m),
        roughness_scale_0p75=scaled[0], roughness_scale_0p5=scaled[1],
        roughness_scale_0p25=scaled[2], roughness_scale_0p125=scaled[3],
        phase_variance=phase_variance(phi, m),
        centroid_shift=centroid_shift(phi, m),
        moment_of_inertia=moment_of_inertia(phi, m),
    )
