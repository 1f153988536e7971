"""Least-squares phase unwrapping with a DCT Poisson solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dctn, idctn

from .errors import InvalidInputError


@dataclass
class PhaseMap:
    values: np.ndarray
    wrapped: bool
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError("phase map must be 2D")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("phase map contains non-finite values")
        if self.wrapped and (self.values.min() <= -np.pi - 1e-12 or self.values.max() > np.pi + 1e-12):
            raise InvalidInputError("wrapped phase must lie in (-pi, pi]")


def wrap(a):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, np.pi, w)


def poisson_neumann(rho) -> np.ndarray:
    """Solve the 5-point Laplacian ``L u = rho`` with reflective boundaries.

    The zero-frequency component is set to zero; ``rho`` is assumed to sum
    to zero, as any divergence of a gradient field does.
    """
    h, w = rho.shape
    R = dctn(rho, type=2, norm="ortho")
    ky = 2.0 * np.cos(np.pi * np.arange(h) / h)[:, None]
    kx = 2.0 * np.cos(np.pi * np.arange(w) / w)[None, :]
    denom = kx + ky - 4.0
    denom[0, 0] = 1.0
    U = R / denom
    U[0, 0] = 0.0
    return idctn(U, type=2, norm="ortho")


def lowest_decile_offset(u) -> float:
    flat = np.sort(np.asarray(u, dtype=np.float64), axis=None)
    k = max(1, int(np.ceil(0.1 * flat.size)))
    return float(flat[:k].mean())


def normalize_offset(u) -> np.ndarray:
    """Shift so the mean of the lowest 10% of pixels is zero (background ~ 0)."""
    u = np.asarray(u, dtype=np.float64)
    return u - lowest_decile_offset(u)


def unwrap_phase(w: PhaseMap) -> PhaseMap:
    """Unweighted least-squares unwrapping.

    Minimizes ``sum |grad u - W(grad w)|^2`` where ``W`` re-wraps the
    forward differences; the normal equations are a Neumann Poisson problem
    solved exactly by DCT. The result is offset-normalized by
    :func:`normalize_offset`.
    """
    if not isinstance(w, PhaseMap):
        raise InvalidInputError("unwrap_phase expects a PhaseMap")
    if not w.wrapped:
        raise InvalidInputError("phase map is already unwrapped")
    psi = w.values
    dx = np.zeros_like(psi)
    dy = np.zeros_like(psi)
    dx[:, :-1] = wrap(np.diff(psi, axis=1))
    dy[:-1, :] = wrap(np.diff(psi, axis=0))
    # divergence of the wrapped gradient (negative adjoint of forward differences)
    rho = np.zeros_like(psi)
    rho[:, :-1] += dx[:, :-1]
    rho[:, 1:] -= dx[:, :-1]
    rho[:-1, :] += dy[:-1, :]
    rho[1:, :] -= dy[:-1, :]
    u = poisson_neumann(rho)
    return PhaseMap(values=normalize_offset(u), wrapped=False, valid=w.valid)
