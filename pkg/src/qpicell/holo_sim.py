"""Synthetic phantom nuclei and off-axis image-plane holograms.

The phantom stands in for the microscope: it produces the complex object
field seen by the holographic arm, a brightfield RGB rendering of the same
nucleus, and the exact phase and mask used to build both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .fields import Grid

PHANTOM_CLASSES = ("smooth-small", "smooth-large", "textured-abnormal")


@dataclass(frozen=True)
class OpticalConfig:
    wavelength_nm: float = 650.0
    grid: Grid = field(default_factory=lambda: Grid(256, 256, 3.5))
    reference_amplitude: float = 8.0
    tilt: tuple[float, float] = (0.25, 0.25)

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise InvalidInputError("wavelength must be positive")
        if not self.reference_amplitude > 0:
            raise InvalidInputError("reference amplitude must be positive")
        s = abs(self.tilt[0]) + abs(self.tilt[1])
        if not 0 < s < 1:
            raise InvalidInputError(f"tilt {self.tilt} is not representable on the grid")

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True)
class ReferenceBeam:
    """Tilted plane reference wave ``R0 * exp(i 2 pi (fx x + fy y))``."""

    fx: float
    fy: float
    amplitude: float

    def field(self, shape, origin=(0, 0)) -> np.ndarray:
        """Sample the beam on ``shape``; ``origin`` is the (row, col) of pixel [0, 0]
        in sensor coordinates, so ROI cuts see the same carrier phase as the frame."""
        h, w = shape
        y = np.arange(h, dtype=np.float64)[:, None] + origin[0]
        x = np.arange(w, dtype=np.float64)[None, :] + origin[1]
        return self.amplitude * np.exp(2j * np.pi * (self.fx * x + self.fy * y))


def make_reference(cfg: OpticalConfig, origin=(0, 0)) -> np.ndarray:
    return ReferenceBeam(cfg.tilt[0], cfg.tilt[1], cfg.reference_amplitude).field(cfg.shape, origin)


@dataclass(frozen=True)
class PhantomSpec:
    class_label: str = "smooth-small"
    nucleus_radius: float = 32.0
    peak_phase: float = 2.0
    texture_amplitude: float = 0.0
    texture_correlation_length: float = 3.0
    nucleus_color: tuple[float, float, float] = (95.0, 70.0, 150.0)
    background_color: tuple[float, float, float] = (225.0, 215.0, 235.0)
    inner_transmittance: float = 0.85

    def __post_init__(self):
        if self.class_label not in PHANTOM_CLASSES:
            raise InvalidInputError(f"unknown class label {self.class_label!r}")
        if not self.nucleus_radius > 2:
            raise InvalidInputError("nucleus_radius must exceed 2 px")
        if self.peak_phase < 0 or self.texture_amplitude < 0:
            raise InvalidInputError("peak_phase and texture_amplitude must be non-negative")
        if not self.texture_correlation_length > 0:
            raise InvalidInputError("texture_correlation_length must be positive")
        for c in (self.nucleus_color, self.background_color):
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise InvalidInputError(f"invalid 8-bit colour {c}")
        if not 0 < self.inner_transmittance <= 1:
            raise InvalidInputError("inner_transmittance must lie in (0, 1]")


@dataclass
class PhantomTruth:
    object_field: np.ndarray
    brightfield: np.ndarray  # uint8, (H, W, 3)
    mask: np.ndarray  # uint8 {0, 1}
    phase_truth: np.ndarray
    nucleus_center: tuple[float, float]  # (row, col)


def dome_profile(rho):
    """cos^2 bump: 1 at rho = 0, 0 (with zero slope) at rho = 1 and beyond."""
    rho = np.asarray(rho, dtype=np.float64)
    return np.where(rho < 1, np.cos(0.5 * np.pi * np.minimum(rho, 1.0)) ** 2, 0.0)


def bandlimited_noise(shape, correlation_length: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-std Gaussian random field whose autocorrelation falls to 1/e at ``correlation_length``.

    White noise filtered by a Gaussian of width sigma has autocorrelation
    ``exp(-d^2 / (4 sigma^2))``, hence ``sigma = correlation_length / 2``.
    """
    white = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(white, 0.5 * correlation_length, mode="wrap")
    sd = smooth.std()
    return smooth / sd if sd > 0 else smooth


def make_phantom(spec: PhantomSpec, seed: int, cfg: Optional[OpticalConfig] = None,
                 center=None, brightfield_noise: float = 2.0) -> PhantomTruth:
    """Build one phantom nucleus on ``cfg.grid``.

    ``center`` defaults to the grid center pixel ``(H // 2, W // 2)``.
    """
    cfg = cfg or OpticalConfig()
    h, w = cfg.shape
    if center is None:
        center = (h // 2, w // 2)
    cy, cx = float(center[0]), float(center[1])
    r0 = spec.nucleus_radius
    if cy - r0 < 0 or cx - r0 < 0 or cy + r0 > h - 1 or cx + r0 > w - 1:
        raise InvalidInputError(f"nucleus of radius {r0} at {center} does not fit a {h}x{w} grid")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(yy - cy, xx - cx)
    inside = r < r0

    phase = spec.peak_phase * dome_profile(r / r0)
    # texture noise is always drawn so the RNG stream does not depend on amplitude
    texture = bandlimited_noise((h, w), spec.texture_correlation_length, rng)
    if spec.texture_amplitude > 0:
        phase = phase + spec.texture_amplitude * texture
    phase = np.where(inside, phase, 0.0)

    amplitude = np.where(inside, spec.inner_transmittance, 1.0)
    obj = amplitude * np.exp(1j * phase)

    bf = np.where(inside[..., None], np.asarray(spec.nucleus_color, float),
                  np.asarray(spec.background_color, float))
    if brightfield_noise > 0:
        bf = bf + rng.normal(0.0, brightfield_noise, bf.shape)
    bf = np.clip(np.rint(bf), 0, 255).astype(np.uint8)

    return PhantomTruth(object_field=obj, brightfield=bf, mask=inside.astype(np.uint8),
                        phase_truth=phase, nucleus_center=(cy, cx))


def make_step_phantom(cfg: Optional[OpticalConfig] = None, step_phase: float = 1.0,
                      half_width: int = 64) -> PhantomTruth:
    """Square plateau of constant phase: a sharp phase step on all four sides."""
    cfg = cfg or OpticalConfig()
    h, w = cfg.shape
    cy, cx = h // 2, w // 2
    if half_width < 1 or half_width >= min(cy, cx):
        raise InvalidInputError("step plateau does not fit the grid")
    inside = np.zeros((h, w), dtype=bool)
    inside[cy - half_width:cy + half_width, cx - half_width:cx + half_width] = True
    phase = np.where(inside, step_phase, 0.0)
    bf = np.where(inside[..., None], 100, 220).astype(np.uint8) * np.ones((1, 1, 3), np.uint8)
    return PhantomTruth(object_field=np.exp(1j * phase), brightfield=bf,
                        mask=inside.astype(np.uint8), phase_truth=phase,
                        nucleus_center=(float(cy), float(cx)))


def synthesize_hologram(obj, ref, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Recorded intensity ``|R + O|^2`` plus optional Gaussian sensor noise, clamped at 0."""
    obj = np.asarray(obj)
    ref = np.asarray(ref)
    if obj.shape != ref.shape:
        raise InvalidInputError(f"object and reference grids differ: {obj.shape} vs {ref.shape}")
    if noise_sigma < 0:
        raise InvalidInputError("noise_sigma must be non-negative")
    total = ref + obj
    holo = total.real ** 2 + total.imag ** 2
    if noise_sigma > 0:
        holo = holo + np.random.default_rng(seed).normal(0.0, noise_sigma, holo.shape)
        holo = np.maximum(holo, 0.0)
    return holo


def simulate_hologram(truth: PhantomTruth, cfg: OpticalConfig, noise_sigma: float = 0.0,
                      seed: int = 0, origin=(0, 0)) -> np.ndarray:
    """Hologram of a phantom with balanced arms.

    The object arm carries the same illumination amplitude as the reference,
    so the recorded field is ``R0 * object_field``.
    """
    ref = make_reference(cfg, origin)
    return synthesize_hologram(cfg.reference_amplitude * truth.object_field, ref, noise_sigma, seed)


def calibration_hologram(cfg: OpticalConfig, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Straight-fringe hologram recorded with an empty object arm (a flat plane wave)."""
    ref = make_reference(cfg)
    obj = np.full(cfg.shape, cfg.reference_amplitude, dtype=np.complex128)
    return synthesize_hologram(obj, ref, noise_sigma, seed)
