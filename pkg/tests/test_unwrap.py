import numpy as np
import pytest
from hypothesis import given, strategies as st

from qpicell.errors import InvalidInputError
from qpicell.unwrap import (PhaseMap, lowest_decile_offset, normalize_offset, poisson_neumann,
                            unwrap_phase, wrap)
from oracles import laplacian5


def test_phase_map_validation():
    with pytest.raises(InvalidInputError):
        PhaseMap(np.full((3, 3), 4.0), wrapped=True)
    with pytest.raises(InvalidInputError):
        PhaseMap(np.array([[np.nan]]), wrapped=False)
    with pytest.raises(InvalidInputError):
        PhaseMap(np.zeros(3), wrapped=False)
    PhaseMap(np.full((3, 3), 4.0), wrapped=False)


def test_wrap_range():
    a = np.array([-np.pi, np.pi, 3 * np.pi, -3 * np.pi, 0.5, 7.0])
    w = wrap(a)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * a), atol=1e-12)
    assert w[0] == np.pi


def test_unwrap_rejects_unwrapped_input():
    with pytest.raises(InvalidInputError):
        unwrap_phase(PhaseMap(np.zeros((4, 4)), wrapped=False))
    with pytest.raises(InvalidInputError):
        unwrap_phase(np.zeros((4, 4)))


def test_poisson_solver_inverts_laplacian(rng):
    u = rng.normal(size=(12, 10))
    u -= u.mean()
    # Neumann Laplacian: interior stencil, reflected borders
    p = np.pad(u, 1, mode="edge")
    L = p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4 * u
    np.testing.assert_allclose(L[1:-1, 1:-1], laplacian5(u)[1:-1, 1:-1], atol=1e-12)
    v = poisson_neumann(L)
    np.testing.assert_allclose(v - v.mean(), u, atol=1e-10)


def test_constant_field_goes_to_zero():
    out = unwrap_phase(PhaseMap(np.full((8, 8), 1.3), wrapped=True))
    assert np.max(np.abs(out.values)) < 1e-12
    assert not out.wrapped


def test_smooth_field_without_wraps(rng):
    y, x = np.mgrid[0:32, 0:32]
    f = 1.2 * np.sin(x / 7.0) * np.cos(y / 5.0)
    out = unwrap_phase(PhaseMap(f, wrapped=True)).values
    np.testing.assert_allclose(out, normalize_offset(f), atol=1e-9)


def test_ramp_recovered():
    n = 256
    ramp = 0.3 * np.tile(np.arange(n, dtype=float), (n, 1))
    out = unwrap_phase(PhaseMap(wrap(ramp), wrapped=True)).values
    err = (out - out.mean()) - (ramp - ramp.mean())
    assert np.max(np.abs(err)) < 1e-6


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 2.5))
def test_itoh_exactness_property(seed, scale):
    # any surface whose wrapped differences equal its true differences is recovered exactly
    rng = np.random.default_rng(seed)
    steps_x = rng.uniform(-scale, scale, size=(16, 15))
    steps_y = rng.uniform(-scale, scale, size=(15, 1))
    truth = np.zeros((16, 16))
    truth[1:, 0] = np.cumsum(steps_y[:, 0])
    truth[:, 1:] = truth[:, :1] + np.cumsum(steps_x, axis=1)
    if np.max(np.abs(np.diff(truth, axis=0))) >= np.pi:
        return
    out = unwrap_phase(PhaseMap(wrap(truth), wrapped=True)).values
    d = out - truth
    assert np.max(np.abs(d - d.mean())) < 1e-6


def test_congruence_on_smooth_data():
    y, x = np.mgrid[0:64, 0:64]
    truth = 0.002 * ((x - 30) ** 2 + (y - 34) ** 2) + 0.5 * np.sin(x / 6)
    w = wrap(truth)
    out = unwrap_phase(PhaseMap(w, wrapped=True)).values
    d = np.angle(np.exp(1j * (out - w)))
    # equal up to the global offset, which is a constant shift of the wrapped values
    np.testing.assert_allclose(d - d.mean(), 0, atol=1e-6)


def test_offset_normalization():
    u = np.arange(100, dtype=float).reshape(10, 10)
    n = normalize_offset(u)
    assert lowest_decile_offset(n) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(normalize_offset(n), n, atol=1e-12)
    assert n.min() == pytest.approx(-4.5)


@given(st.integers(0, 2**31 - 1))
def test_offset_normalization_idempotent(seed):
    u = np.random.default_rng(seed).normal(size=(9, 11)) * 10
    a = normalize_offset(u)
    np.testing.assert_allclose(normalize_offset(a), a, atol=1e-12)
