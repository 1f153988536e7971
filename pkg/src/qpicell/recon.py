"""Single-shot recovery of the object field from an off-axis hologram.

Two routes are provided. :func:`fourier_reconstruct` is the classical
cross-term filtering method (fast, but a low-pass operation).
:func:`optimize_reconstruct` minimizes

    C(O) = sum (H - |R + O|^2)^2  +  sum (sqrt(1 + |grad O|^2 / delta^2) - 1)

by alternating backtracking gradient steps on the data term and on the
modified Huber penalty, starting from the Fourier estimate.

Gradients follow the Wirtinger convention: for a real cost ``C`` the
returned ``g`` satisfies ``C(O + dO) - C(O) = 2 Re <g, dO> + o(|dO|)`` with
``<a, b> = sum(conj(a) * b)``; a step ``O - t g`` lowers ``C`` by about
``2 t |g|^2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CalibrationError, ConfigurationError, DegenerateInputError, DivergenceError, InvalidInputError
from .fields import check_field, divergence, fft2, fft_frequencies, gradient, ifft2
from .holo_sim import ReferenceBeam
from .unwrap import PhaseMap

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MIN_STEP = 1e-14
FOURIER_WINDOWS = ("hard", "hann")


@dataclass(frozen=True)
class ReconConfig:
    delta_factor: float = 1.0
    max_outer_iterations: int = 200
    c1_steps: int = 5
    c2_steps: int = 1
    relative_cost_tolerance: float = 1e-6
    fourier_filter_radius: Optional[float] = None  # None: half the DC-to-cross-term distance
    fourier_window: str = "hard"  # or "hann": raised-cosine taper to zero at the radius
    max_retries: int = 6

    def __post_init__(self):
        if not self.delta_factor > 0:
            raise ConfigurationError("delta_factor must be positive")
        if min(self.max_outer_iterations, self.c1_steps, self.c2_steps) < 1:
            raise ConfigurationError("iteration counts must be >= 1")
        if not self.relative_cost_tolerance > 0:
            raise ConfigurationError("relative_cost_tolerance must be positive")
        r = self.fourier_filter_radius
        if r is not None and not 0 < r < 0.5:
            raise ConfigurationError("fourier_filter_radius must lie in (0, 0.5)")
        if self.fourier_window not in FOURIER_WINDOWS:
            raise ConfigurationError(f"fourier_window must be one of {FOURIER_WINDOWS}")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


@dataclass(frozen=True)
class CostBreakdown:
    c1: float
    c2: float

    @property
    def total(self) -> float:
        return self.c1 + self.c2


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    c1: float
    c2: float
    total: float
    delta: float
    step_c1: float
    step_c2: float


# --------------------------------------------------------------------------- calibration


def _parabolic_offset(m_minus, m0, m_plus) -> float:
    denom = m_minus - 2.0 * m0 + m_plus
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (m_minus - m_plus) / denom, -0.5, 0.5))


def calibrate_reference(h_nosample) -> ReferenceBeam:
    """Estimate the reference tilt and amplitude from an empty-arm fringe pattern.

    The tilt is the sub-bin location of the strongest non-DC spectral peak
    (separable parabolic fit over its 3x3 neighbourhood), taken in the half
    plane ``fx > 0`` (or ``fx == 0, fy > 0``) since the spectrum of a real
    hologram is Hermitian. The amplitude assumes balanced arms:
    ``R0 = sqrt(mean(H) / 2)``.
    """
    H = check_field(h_nosample, "calibration hologram")
    h, w = H.shape
    mag = np.abs(fft2(H))
    fx, fy = fft_frequencies(H.shape)
    half = (fx > 0) | ((fx == 0) & (fy > 0))
    search = np.where(half, mag, -1.0)
    iy, ix = np.unravel_index(int(np.argmax(search)), search.shape)
    peak = mag[iy, ix]
    dc = mag[0, 0]
    ky = iy if iy <= h // 2 else iy - h
    kx = ix if ix <= w // 2 else ix - w
    if max(abs(ky), abs(kx)) <= 3 or not peak > 1e-9 * max(dc, 1e-300):
        raise CalibrationError(
            f"no fringe carrier separated from DC (peak at bin ({ky}, {kx}), |F|={peak:.3g})")
    dx = _parabolic_offset(mag[iy, (ix - 1) % w], peak, mag[iy, (ix + 1) % w])
    dy = _parabolic_offset(mag[(iy - 1) % h, ix], peak, mag[(iy + 1) % h, ix])
    f_ox = (kx + dx) / w
    f_oy = (ky + dy) / h
    r0 = math.sqrt(max(float(H.mean()), 0.0) / 2.0)
    if not r0 > 0:
        raise CalibrationError("calibration hologram has no energy")
    return ReferenceBeam(fx=f_ox, fy=f_oy, amplitude=r0)


# --------------------------------------------------------------------------- Fourier method


def default_filter_radius(ref: ReferenceBeam) -> float:
    return 0.5 * math.hypot(ref.fx, ref.fy)


def fourier_reconstruct(hologram, ref: ReferenceBeam, radius: Optional[float] = None,
                        origin=(0, 0), window: str = "hard") -> np.ndarray:
    """Cross-term filtering estimate of the object field.

    The ``R* O`` term of the hologram spectrum sits at ``-(fx, fy)``; a hard
    circular window of ``radius`` cycles/px isolates it, and dividing the
    filtered field by ``conj(R)`` removes the carrier. ``window="hann"``
    replaces the hard disk by a raised cosine that reaches zero at ``radius``.
    """
    H = check_field(hologram, "hologram")
    if window not in FOURIER_WINDOWS:
        raise ConfigurationError(f"unknown Fourier window {window!r}")
    if radius is None:
        radius = default_filter_radius(ref)
    if not radius > 0:
        raise ConfigurationError("filter radius must be positive")
    if math.hypot(ref.fx, ref.fy) <= radius:
        raise ConfigurationError(
            f"filter radius {radius:.4g} reaches the DC term at distance {math.hypot(ref.fx, ref.fy):.4g}")
    fx, fy = fft_frequencies(H.shape)
    dfx = (fx + ref.fx + 0.5) % 1.0 - 0.5
    dfy = (fy + ref.fy + 0.5) % 1.0 - 0.5
    rho = np.hypot(dfx, dfy)
    if window == "hard":
        W = (rho <= radius).astype(np.float64)
    else:
        W = np.where(rho <= radius, np.cos(0.5 * np.pi * rho / radius) ** 2, 0.0)
    cross = ifft2(fft2(H) * W)
    R = ref.field(H.shape, origin)
    return cross / np.conj(R)


# --------------------------------------------------------------------------- cost


def _abs2(z):
    return z.real * z.real + z.imag * z.imag


def _check_delta(delta):
    if not delta > 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")


def data_cost(H, O, R) -> float:
    r = H - _abs2(R + O)
    return float(np.vdot(r, r).real)


def penalty_cost(O, delta) -> float:
    gx, gy = gradient(O)
    m = (_abs2(gx) + _abs2(gy)) / (delta * delta)
    # sqrt(1 + m) - 1 written to stay accurate when m is tiny
    return float(np.sum(m / (np.sqrt(1.0 + m) + 1.0)))


def data_gradient(H, O, R) -> np.ndarray:
    F = R + O
    return -2.0 * (H - _abs2(F)) * F


def penalty_gradient(O, delta) -> np.ndarray:
    gx, gy = gradient(O)
    m = (_abs2(gx) + _abs2(gy)) / (delta * delta)
    wgt = 1.0 / (2.0 * delta * delta * np.sqrt(1.0 + m))
    return -divergence(wgt * gx, wgt * gy)


def cost(H, O, R, delta) -> CostBreakdown:
    """Data misfit and modified Huber penalty for the field ``O``."""
    _check_delta(delta)
    H = np.asarray(H, dtype=np.float64)
    O = np.asarray(O)
    R = np.asarray(R)
    if not H.shape == O.shape == R.shape:
        raise InvalidInputError("H, O and R must share one grid")
    return CostBreakdown(data_cost(H, O, R), penalty_cost(O, delta))


def cost_gradient(H, O, R, delta) -> np.ndarray:
    """Conjugate-field (Wirtinger) gradient of the total cost."""
    _check_delta(delta)
    H = np.asarray(H, dtype=np.float64)
    O = np.asarray(O)
    R = np.asarray(R)
    if not H.shape == O.shape == R.shape:
        raise InvalidInputError("H, O and R must share one grid")
    return data_gradient(H, O, R) + penalty_gradient(O, delta)


def select_delta(O, factor: float = 1.0) -> float:
    """``factor`` times the median gradient magnitude of ``O``."""
    gx, gy = gradient(O)
    med = float(np.median(np.sqrt(_abs2(gx) + _abs2(gy))))
    if not med > 0:
        raise DegenerateInputError("median gradient magnitude is zero; delta would vanish")
    return factor * med


def _delta_or_fallback(O, factor):
    try:
        return select_delta(O, factor)
    except DegenerateInputError:
        gx, gy = gradient(O)
        mean = float(np.mean(np.sqrt(_abs2(gx) + _abs2(gy))))
        # mostly-flat field: mean gradient; constant field: penalty is identically 0, any delta works
        return factor * mean if mean > 0 else 1.0


# --------------------------------------------------------------------------- optimization


def _armijo(O, g, f, f0, t0):
    """Backtracking along ``-g``; returns (new O, new value, accepted step or 0)."""
    gnorm2 = float(np.vdot(g, g).real)
    if gnorm2 == 0.0:
        return O, f0, 0.0
    t = t0
    while t >= MIN_STEP:
        trial = O - t * g
        val = f(trial)
        if math.isfinite(val) and val <= f0 - 2.0 * ARMIJO_C * t * gnorm2:
            return trial, val, t
        t *= 0.5
    return O, f0, 0.0


def optimize_reconstruct(hologram, ref: ReferenceBeam, cfg: Optional[ReconConfig] = None,
                         init: Optional[np.ndarray] = None, origin=(0, 0)):
    """Reconstruct the object field by alternating minimization.

    Each outer iteration takes ``c1_steps`` Armijo steps on the data term
    and then ``c2_steps`` on the penalty, each with its own step-size
    memory. The combined move is kept only if the total cost does not rise;
    otherwise it is retried with the initial trial steps shrunk by 4x, and
    after ``max_retries`` failures a single Armijo step on the total cost is
    taken instead. The accepted total cost is therefore non-increasing.

    ``delta`` is refreshed from the current iterate every outer iteration
    but never lowered, since lowering it would raise the penalty of an
    unchanged field.

    Returns ``(O, trace)`` where trace holds one :class:`TraceRow` per outer
    iteration (row 0 is the starting point).
    """
    cfg = cfg or ReconConfig()
    H = check_field(hologram, "hologram")
    R = ref.field(H.shape, origin)
    if init is None:
        O = fourier_reconstruct(H, ref, cfg.fourier_filter_radius, origin, cfg.fourier_window)
    else:
        O = np.array(init, dtype=np.complex128)
        if O.shape != H.shape:
            raise InvalidInputError("init must match the hologram grid")

    def f1(Z):
        return data_cost(H, Z, R)

    delta = _delta_or_fallback(O, cfg.delta_factor)
    c1v, c2v = f1(O), penalty_cost(O, delta)
    total = c1v + c2v
    if not math.isfinite(total):
        raise DivergenceError("initial cost is not finite")
    steps = [1.0 / (8.0 * max(float(np.max(H)), 1e-12)), 0.5 * delta * delta / 8.0]
    trace = [TraceRow(0, c1v, c2v, total, delta, 0.0, 0.0)]

    for it in range(1, cfg.max_outer_iterations + 1):
        new_delta = _delta_or_fallback(O, cfg.delta_factor)
        if new_delta > delta:
            delta = new_delta
            c2v = penalty_cost(O, delta)
            total = c1v + c2v

        def f2(Z, _d=delta):
            return penalty_cost(Z, _d)

        scale = 1.0
        accepted = None
        for _attempt in range(cfg.max_retries + 1):
            P = O
            s1, s2 = steps
            a = f1(P)
            for _ in range(cfg.c1_steps):
                P, a, t = _armijo(P, data_gradient(H, P, R), f1, a, 2.0 * scale * steps[0])
                if t == 0.0:
                    break
                s1 = t
            b = f2(P)
            for _ in range(cfg.c2_steps):
                P, b, t = _armijo(P, penalty_gradient(P, delta), f2, b, 2.0 * scale * steps[1])
                if t == 0.0:
                    break
                s2 = t
            a = f1(P)
            if math.isfinite(a + b) and a + b <= total:
                accepted = (P, a, b, s1, s2)
                break
            scale *= 0.25
        if accepted is None:
            g = data_gradient(H, O, R) + penalty_gradient(O, delta)
            P, val, t = _armijo(O, g, lambda Z: f1(Z) + f2(Z), total, 2.0 * max(steps))
            if t == 0.0 and not math.isfinite(val):
                raise DivergenceError("cost became non-finite and step halving did not recover")
            a = f1(P)
            accepted = (P, a, val - a, max(t, steps[0] * 0.25), max(t, steps[1] * 0.25))
        O, c1v, c2v, steps[0], steps[1] = accepted
        prev_total, total = total, c1v + c2v
        trace.append(TraceRow(it, c1v, c2v, total, delta, steps[0], steps[1]))
        if prev_total > 0 and abs(prev_total - total) / prev_total < cfg.relative_cost_tolerance:
            break
        if prev_total == 0:
            break
    return O, trace


def wrapped_phase(O) -> PhaseMap:
    """Four-quadrant phase of ``O`` in (-pi, pi]; zero-magnitude pixels get 0 and are flagged invalid."""
    O = np.asarray(O)
    phi = np.angle(O)
    phi = np.where(phi <= -np.pi, np.pi, phi)
    valid = np.abs(O) > 0
    phi = np.where(valid, phi, 0.0)
    return PhaseMap(values=phi, wrapped=True, valid=valid)
