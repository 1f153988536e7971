"""Comparison metrics used by tests, acceptance checks and reports."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def dice(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    denom = a.sum() + b.sum()
    if denom == 0:
        raise InvalidInputError("Dice is undefined for two empty masks")
    return 2.0 * np.logical_and(a, b).sum() / denom


def masked_rmse(estimate, truth, mask, remove_offset: bool = True) -> float:
    """RMS difference inside ``mask``; the mean difference is removed first by default."""
    m = np.asarray(mask).astype(bool)
    d = np.asarray(estimate, float)[m] - np.asarray(truth, float)[m]
    if remove_offset:
        d = d - d.mean()
    return float(np.sqrt(np.mean(d * d)))


def edge_width_10_90(profile) -> float:
    """10-90% rise distance (pixels) of a monotone-ish rising edge profile.

    Levels are taken relative to the first and last samples; crossings are
    located by linear interpolation (first upward crossing of each level).
    """
    p = np.asarray(profile, dtype=np.float64)
    lo, hi = p[0], p[-1]
    if not hi > lo:
        raise InvalidInputError("profile does not rise")

    def crossing(level):
        v = lo + level * (hi - lo)
        idx = np.nonzero(p >= v)[0]
        i = int(idx[0])
        if i == 0:
            return 0.0
        return i - 1 + (v - p[i - 1]) / (p[i] - p[i - 1])

    return crossing(0.9) - crossing(0.1)
