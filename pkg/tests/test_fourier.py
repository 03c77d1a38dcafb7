import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import dft2_brute
from metaconv.errors import InvalidInputError
from metaconv.fourier import (TWO_PI, centered_fft2, centered_ifft2, mask_geometry,
                              phase_to_orientation, psf_from_phase, transfer_function)


def test_uniform_phase_focuses_to_center():
    psf = psf_from_phase(np.zeros((1, 16, 16)))
    expected = np.zeros((1, 16, 16))
    expected[0, 8, 8] = 256.0
    np.testing.assert_allclose(psf, expected, atol=1e-10)


def test_linear_ramp_shifts_spot():
    n, q = 16, 3
    col = np.arange(n)
    phase = np.broadcast_to(TWO_PI * q * col / n, (n, n))
    psf = psf_from_phase(phase)
    r, c = np.unravel_index(np.argmax(psf), psf.shape)
    # inverse transform of exp(+i*2*pi*q*m/N) is a delta at -q
    assert (r, c) == (n // 2, n // 2 - q)
    assert psf[r, c] == pytest.approx(n * n, rel=1e-12)


def test_matches_brute_force_dft(rng):
    for n in (4, 8):
        phase = rng.uniform(0, TWO_PI, (n, n))
        t = np.exp(1j * phase)
        # centred transform: shift the origin to index n/2 in both domains
        u = np.fft.fftshift(dft2_brute(np.fft.ifftshift(t)))
        oracle = np.abs(u) ** 2
        np.testing.assert_allclose(psf_from_phase(phase), oracle, rtol=1e-12, atol=1e-12 * n * n)


def test_transfer_function_unit_modulus(rng):
    t = transfer_function(rng.normal(0, 10, (2, 8, 8)))
    np.testing.assert_allclose(np.abs(t), 1.0, rtol=0, atol=1e-15)


def test_centered_transforms_are_inverse(rng):
    x = rng.normal(size=(3, 16, 16)) + 1j * rng.normal(size=(3, 16, 16))
    np.testing.assert_allclose(centered_fft2(centered_ifft2(x)), x, atol=1e-13)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_nonfinite_phase_rejected(bad):
    phase = np.zeros((8, 8))
    phase[2, 3] = bad
    with pytest.raises(InvalidInputError):
        psf_from_phase(phase)


@pytest.mark.parametrize("n", [1, 6, 12])
def test_non_power_of_two_rejected(n):
    with pytest.raises(InvalidInputError):
        psf_from_phase(np.zeros((n, n)))


phases = arrays(np.float64, (2, 8, 8), elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(phases)
def test_energy_periodicity_and_global_phase(phase):
    psf = psf_from_phase(phase)
    assert np.all(psf >= 0)
    np.testing.assert_allclose(psf.sum(axis=(1, 2)), 64.0, rtol=1e-9)
    np.testing.assert_allclose(psf_from_phase(phase + TWO_PI), psf, rtol=0, atol=1e-12 * 64)
    np.testing.assert_allclose(psf_from_phase(phase + 1.234), psf, rtol=0, atol=1e-12 * 64)


def test_mask_geometry_hand_values():
    g = mask_geometry(500e-9, 0.1, 10e-6, 1000)
    assert g.mask_extent == pytest.approx(5e-3, rel=1e-12)
    assert g.phase_pixel_size == pytest.approx(5e-6, rel=1e-12)
    assert g.phase_pixel_size == pytest.approx(g.mask_extent / g.mask_resolution)


def test_mask_geometry_scaling():
    g = mask_geometry(500e-9, 0.1, 10e-6, 512)
    g2n = mask_geometry(500e-9, 0.1, 10e-6, 1024)
    assert g2n.phase_pixel_size == pytest.approx(g.phase_pixel_size / 2)
    assert g2n.mask_extent == g.mask_extent
    g2l = mask_geometry(1000e-9, 0.1, 10e-6, 512)
    assert g2l.mask_extent == pytest.approx(2 * g.mask_extent)
    assert g2l.phase_pixel_size == pytest.approx(2 * g.phase_pixel_size)
    assert g.max_spatial_frequency == pytest.approx(5e4)


@pytest.mark.parametrize("args", [(0, 0.1, 1e-5, 512), (5e-7, -1, 1e-5, 512),
                                  (5e-7, 0.1, 0, 512), (5e-7, 0.1, 1e-5, 0)])
def test_mask_geometry_rejects_nonpositive(args):
    with pytest.raises(InvalidInputError):
        mask_geometry(*args)


def test_orientation_examples():
    a = phase_to_orientation(np.array([[np.pi, 0.0], [3 * np.pi, -np.pi / 2]]))
    np.testing.assert_allclose(a, [[np.pi / 2, 0.0], [np.pi / 2, 3 * np.pi / 4]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(phases)
def test_orientation_range_and_doubling(phase):
    a = phase_to_orientation(phase)
    assert np.all(a >= 0) and np.all(a < np.pi)
    # 2*angle equals the phase modulo 2*pi
    d = np.angle(np.exp(1j * (2 * a - phase)))
    np.testing.assert_allclose(d, 0.0, atol=1e-9)
