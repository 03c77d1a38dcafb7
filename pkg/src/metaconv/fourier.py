"""Fourier-plane phase masks and the point spread functions they produce.

Conventions used throughout the package:

* Phase profiles are real arrays shaped ``(C, N, N)`` (a 2-D ``(N, N)`` array is
  accepted as a single channel). The optical axis sits at index ``(N/2, N/2)``
  of the mask.
* All transforms are unitary (``norm="ortho"``), so a unit-modulus transfer
  function always yields a PSF whose per-channel sum is ``N**2``.
* PSFs are returned centred: the image of an on-axis point is pixel
  ``(N/2, N/2)``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

TWO_PI = 2.0 * np.pi


def _is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0


def as_phase(phase):
    """Validate a phase profile and return it as a float ``(C, N, N)`` array."""
    phase = np.asarray(phase, dtype=float)
    if phase.ndim == 2:
        phase = phase[None]
    if phase.ndim != 3 or phase.shape[1] != phase.shape[2]:
        raise InvalidInputError(f"phase must be (C, N, N) or (N, N), got {phase.shape}")
    if not _is_pow2(phase.shape[1]):
        raise InvalidInputError(f"mask resolution must be a power of two >= 2, got {phase.shape[1]}")
    if not np.all(np.isfinite(phase)):
        raise InvalidInputError("phase contains non-finite values")
    return phase


def centered_ifft2(x):
    """Unitary inverse DFT over the last two axes with the origin at the array centre."""
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def centered_fft2(x):
    """Adjoint (and inverse) of :func:`centered_ifft2`."""
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes)


def transfer_function(phase):
    """Unit-modulus Fourier-plane modulation ``exp(i*phase)``."""
    return np.exp(1j * as_phase(phase))


def image_field(phase):
    """Coherent image-plane field of each channel's mask, shape ``(C, N, N)``."""
    return centered_ifft2(transfer_function(phase))


def psf_from_phase(phase):
    """Intensity PSF ``|F^-1{exp(i*phase)}|**2`` for every channel.

    Returns an array of the same dimensionality as ``phase`` (2-D in, 2-D out).
    """
    squeeze = np.ndim(phase) == 2
    u = image_field(phase)
    psf = u.real ** 2 + u.imag ** 2
    return psf[0] if squeeze else psf


def psf_vjp(phase, grad_psf, field=None):
    """Pull a gradient with respect to the PSF back to the phase.

    With ``t = exp(i*phase)`` and ``u = F^-1{t}``, a scalar ``L`` whose gradient
    with respect to ``|u|**2`` is ``G`` has ``dL/dphase = 2*Im(conj(t) * F{G*u})``.
    ``field`` may pass a precomputed :func:`image_field`.
    """
    squeeze = np.ndim(phase) == 2
    phase = as_phase(phase)
    grad_psf = np.asarray(grad_psf, dtype=float).reshape(phase.shape)
    if field is None:
        field = image_field(phase)
    back = centered_fft2(grad_psf * field)
    grad = 2.0 * (np.cos(phase) * back.imag - np.sin(phase) * back.real)
    return grad[0] if squeeze else grad


@dataclass(frozen=True)
class MaskGeometry:
    """Physical size of the Fourier-plane mask and of its phase pixels (SI units)."""

    wavelength: float
    focal_length: float
    display_pitch: float
    mask_resolution: int
    mask_extent: float
    phase_pixel_size: float

    @property
    def max_spatial_frequency(self):
        """Largest spatial frequency passed by the display, ``1/(2d)`` in cycles/m."""
        return 0.5 / self.display_pitch


def mask_geometry(wavelength, focal_length, display_pitch, mask_resolution=512):
    """Mask extent ``wavelength*f/d`` sampled by ``mask_resolution`` phase pixels."""
    for name, value in (("wavelength", wavelength), ("focal_length", focal_length),
                        ("display_pitch", display_pitch), ("mask_resolution", mask_resolution)):
        if not np.isfinite(value) or value <= 0:
            raise InvalidInputError(f"{name} must be positive, got {value!r}")
    if int(mask_resolution) != mask_resolution:
        raise InvalidInputError(f"mask_resolution must be an integer, got {mask_resolution!r}")
    extent = wavelength * focal_length / display_pitch
    return MaskGeometry(
        wavelength=float(wavelength),
        focal_length=float(focal_length),
        display_pitch=float(display_pitch),
        mask_resolution=int(mask_resolution),
        mask_extent=extent,
        phase_pixel_size=extent / int(mask_resolution),
    )


def phase_to_orientation(phase):
    """In-plane meta-element rotation for each phase pixel, in ``[0, pi)``.

    A rotated element imparts twice its rotation angle as geometric phase, so the
    phase is wrapped to ``[0, 2*pi)`` and halved.
    """
    phase = np.asarray(phase, dtype=float)
    wrapped = np.mod(phase, TWO_PI)
    # np.mod can round tiny negative inputs up to exactly 2*pi
    wrapped[wrapped >= TWO_PI] = 0.0
    return wrapped / 2.0
