"""
This module provides 2D discrete Fourier transforms and the ideal low-pass
filter applied to the image condition.

Frequencies are normalized per axis to [-pi, pi]; a bin is kept when the
Chebyshev norm ``max(|w_u|, |w_v|)`` does not exceed the cutoff. With that
norm a cutoff of pi keeps every bin, and the filter short-circuits to an
exact copy in that case.

Functions
---------
dft2(channel: np.ndarray) -> Spectrum2D
    Unnormalized forward 2D DFT.
idft2(spectrum: Spectrum2D) -> np.ndarray
    Real inverse 2D DFT.
passband(height: int, width: int, gamma: float) -> np.ndarray
    Boolean mask of the bins kept by the low-pass filter.
lpf(z: LatentGrid, gamma: float) -> LatentGrid
    Per-channel ideal low-pass filter.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import DomainError, IntegrityError
from .grid import LatentGrid
from .utils import settings


__all__ = [
    "Spectrum2D",
    "dft2",
    "idft2",
    "passband",
    "lpf",
]

DISCARD_TOLERANCE = 1e-9
INTEGRITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Spectrum2D:
    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[-2]

    @property
    def width(self) -> int:
        return self.values.shape[-1]


def dft2(channel: np.ndarray) -> Spectrum2D:
    """Computes the unnormalized forward 2D DFT of a real field.

    Leading axes, if any, are transformed independently.
    """
    values = np.asarray(channel, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DomainError("cannot transform non-finite values")
    return Spectrum2D(fft.fft2(values, axes=(-2, -1), workers=settings["fft_workers"]))


def idft2(spectrum: Spectrum2D) -> np.ndarray:
    """Computes the inverse 2D DFT and returns its real part.

    Parameters
    ----------
    spectrum : Spectrum2D
        A spectrum of a real field (conjugate symmetric).

    Returns
    -------
    np.ndarray
        The real field.

    Raises
    ------
    IntegrityError
        If the inverse has an imaginary residue of ``1e-6`` or more, i.e. the
        spectrum was not conjugate symmetric.
    """
    field = fft.ifft2(spectrum.values, axes=(-2, -1), workers=settings["fft_workers"])
    residue = float(np.max(np.abs(field.imag), initial=0.0))
    if residue >= INTEGRITY_TOLERANCE:
        raise IntegrityError(f"inverse transform is not real (imaginary residue {residue:.3e})")
    return np.ascontiguousarray(field.real)


def passband(height: int, width: int, gamma: float) -> np.ndarray:
    """Returns the bins of an ``height x width`` spectrum kept at cutoff ``gamma``."""
    omega_u = np.abs(2.0 * np.pi * fft.fftfreq(height))
    omega_v = np.abs(2.0 * np.pi * fft.fftfreq(width))
    return np.maximum(omega_u[:, np.newaxis], omega_v[np.newaxis, :]) <= gamma


def lpf(z: LatentGrid, gamma: float) -> LatentGrid:
    """Applies the ideal low-pass filter to every channel of a latent.

    Parameters
    ----------
    z : LatentGrid
        The latent to filter.
    gamma : float
        The cutoff in radians, in ``[0, pi]``.

    Returns
    -------
    LatentGrid
        The filtered latent; ``z`` itself when ``gamma`` is pi.

    Raises
    ------
    DomainError
        If ``gamma`` is outside ``[0, pi]``.
    """
    if not 0.0 <= gamma <= math.pi:
        raise DomainError(f"gamma outside [0, π]: {gamma}")
    if gamma == math.pi:
        return z
    spectrum = dft2(z.values)
    kept = passband(z.height, z.width, gamma)
    filtered = Spectrum2D(np.where(kept[np.newaxis, :, :], spectrum.values, 0.0))
    return LatentGrid(idft2(filtered))
