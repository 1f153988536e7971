"""Field containers and the discrete operators every other module builds on.

Fields are plain 2D numpy arrays indexed ``[row, column]`` = ``[y, x]``;
:class:`Grid` carries the sampling geometry when it matters (file headers,
optical configuration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Grid:
    """Pixel grid of a sensor or ROI. ``pixel_pitch`` is in micrometers."""

    width: int
    height: int
    pixel_pitch: float = 3.5

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pixel_pitch > 0:
            raise InvalidInputError("pixel_pitch must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def like(cls, array: np.ndarray, pixel_pitch: float = 3.5) -> "Grid":
        h, w = np.shape(array)
        return cls(width=int(w), height=int(h), pixel_pitch=pixel_pitch)


def check_field(f, name: str = "field", dtype=np.float64) -> np.ndarray:
    """Return ``f`` as a finite 2D array, raising InvalidInputError otherwise."""
    a = np.asarray(f)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if dtype is not None:
        a = a.astype(np.result_type(a.dtype, dtype), copy=False)
    return a


def _check_same_grid(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: grid mismatch {a.shape} vs {b.shape}")


def fft2(f) -> np.ndarray:
    """Unitary 2D DFT (``1/sqrt(N)`` per axis), zero frequency at index [0, 0]."""
    a = np.asarray(f)
    if a.ndim != 2 or min(a.shape) < 2:
        raise InvalidInputError(f"fft2 needs at least 2 samples per axis, got shape {a.shape}")
    return np.fft.fft2(a, norm="ortho")


def ifft2(F) -> np.ndarray:
    a = np.asarray(F)
    if a.ndim != 2 or min(a.shape) < 2:
        raise InvalidInputError(f"ifft2 needs at least 2 samples per axis, got shape {a.shape}")
    return np.fft.ifft2(a, norm="ortho")


def fft_frequencies(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Frequency grids ``(fx, fy)`` in cycles per pixel matching :func:`fft2` bins."""
    h, w = shape
    fy, fx = np.meshgrid(np.fft.fftfreq(h), np.fft.fftfreq(w), indexing="ij")
    return fx, fy


def gradient(f) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicated boundary.

    ``gx[i, j] = f[i, j+1] - f[i, j]`` and ``gy[i, j] = f[i+1, j] - f[i, j]``;
    the last column of ``gx`` and the last row of ``gy`` are zero.
    """
    a = np.asarray(f)
    if a.ndim != 2:
        raise InvalidInputError("gradient expects a 2D field")
    if not np.iscomplexobj(a):
        a = a.astype(np.float64, copy=False)
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    np.subtract(a[:, 1:], a[:, :-1], out=gx[:, :-1])
    np.subtract(a[1:, :], a[:-1, :], out=gy[:-1, :])
    return gx, gy


def divergence(gx, gy) -> np.ndarray:
    """Negative adjoint of :func:`gradient`.

    Satisfies ``<gradient(a), (gx, gy)> = -<a, divergence(gx, gy)>`` for every
    field ``a`` and every pair ``(gx, gy)``, including pairs whose last
    column/row is nonzero (those entries never meet a gradient output).
    """
    gx = np.asarray(gx)
    gy = np.asarray(gy)
    _check_same_grid(gx, gy, "divergence")
    if gx.ndim != 2:
        raise InvalidInputError("divergence expects 2D components")
    dtype = np.result_type(gx.dtype, gy.dtype, np.float64)
    d = np.empty(gx.shape, dtype=dtype)
    h, w = gx.shape
    if w == 1:
        d[:] = 0
    else:
        d[:, 0] = gx[:, 0]
        np.subtract(gx[:, 1:-1], gx[:, :-2], out=d[:, 1:-1])
        d[:, -1] = -gx[:, -2]
    if h > 1:
        d[0, :] += gy[0, :]
        d[1:-1, :] += gy[1:-1, :] - gy[:-2, :]
        d[-1, :] -= gy[-2, :]
    return d


def gradient_magnitude(f) -> np.ndarray:
    gx, gy = gradient(f)
    return np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)
