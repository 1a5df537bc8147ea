"""Depth-banded point-spread-function synthesis.

The imaging system's spatially-varying PSF is modeled as a stack of
separable kernels, one per depth band: the outer product of a lateral
Gaussian beam profile (width growing with depth) and the two-way axial
pulse (the transmit pulse convolved with itself). Spatial variation across
depth is realized by the banding; each kernel is normalized to unit peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .types import SOUND_SPEED_MM_S, ImagingConfig, ScatterGrid

# exp(-w**2 / (8 sigma**2)) = 10**(-6/20) at full width w -> w = _W6 * sigma
_W6_OVER_SIGMA = 2.0 * math.sqrt(2.0 * 0.3 * math.log(10.0))


@dataclass(frozen=True)
class PSFStack:
    """Ordered depth bands of (z_center_mm, kernel) pairs.

    Kernels are 2D arrays over (lateral, axial) offsets sampled at
    (dx_mm, dz_mm), each with odd extent on both axes and unit peak
    absolute value. Band centers increase with depth and tile
    [0, depth_mm] with spacing band_height_mm.
    """

    z_centers_mm: np.ndarray
    kernels: tuple[np.ndarray, ...]
    f0_hz: float
    band_height_mm: float
    dx_mm: float
    dz_mm: float

    def __post_init__(self):
        zc = np.asarray(self.z_centers_mm, dtype=np.float64)
        if zc.ndim != 1 or zc.size == 0 or zc.size != len(self.kernels):
            raise ValueError("one z_center per kernel required")
        if zc.size > 1 and not np.all(np.diff(zc) > 0):
            raise ValueError("bands must be ordered by increasing z_center_mm")
        for k in self.kernels:
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ValueError("kernels must be 2D with odd extents")
            peak = np.abs(k).max()
            if not math.isclose(peak, 1.0, rel_tol=1e-9):
                raise ValueError(f"kernel peak must be 1, got {peak}")
        zc.setflags(write=False)
        object.__setattr__(self, "z_centers_mm", zc)

    @property
    def n_bands(self) -> int:
        return len(self.kernels)


def make_pulse(f0_hz: float, bandwidth_frac: float, fs_hz: float) -> np.ndarray:
    """One-way axial pulse: Gaussian-enveloped cosine sampled at fs_hz.

    e(t) = cos(2 pi f0 t) * exp(-t^2 / (2 sigma_t^2)), with sigma_t chosen
    so the amplitude spectrum's -6 dB full width equals
    bandwidth_frac * f0. Truncated at +/- 3 sigma_t; odd sample count with
    the peak value exactly 1 at the center.
    """
    if not 0.0 < bandwidth_frac < 2.0:
        raise ParameterError(f"bandwidth_frac must be in (0, 2), got {bandwidth_frac}")
    if not fs_hz > 4.0 * f0_hz:
        raise ParameterError(f"fs_hz must exceed 4 * f0_hz ({fs_hz} <= {4 * f0_hz})")
    if f0_hz <= 0:
        raise ParameterError("f0_hz must be positive")
    # -6 dB spectral full width W satisfies exp(-(pi W)^2 sigma^2 / 2) = 10^-0.3
    width_hz = bandwidth_frac * f0_hz
    sigma_t = math.sqrt(2.0 * 0.3 * math.log(10.0)) / (math.pi * width_hz)
    n_half = int(math.floor(3.0 * sigma_t * fs_hz))
    t = np.arange(-n_half, n_half + 1) / fs_hz
    return np.cos(2.0 * math.pi * f0_hz * t) * np.exp(-t**2 / (2.0 * sigma_t**2))


def lateral_beamwidth_mm(z_mm: float, config: ImagingConfig) -> float:
    """-6 dB lateral beamwidth at depth z: lambda*|z|/aperture, clamped
    below by lambda/2."""
    lam = config.wavelength_mm
    return max(lam * abs(z_mm) / config.aperture_mm, lam / 2.0)


def _lateral_profile(width_mm: float, dx_mm: float) -> np.ndarray:
    """Unit-peak Gaussian with the given -6 dB full width, sampled at dx."""
    sigma_x = width_mm / _W6_OVER_SIGMA
    n_half = int(math.floor(3.0 * sigma_x / dx_mm))
    x = np.arange(-n_half, n_half + 1) * dx_mm
    return np.exp(-x**2 / (2.0 * sigma_x**2))


def make_psf_stack(config: ImagingConfig, n_bands: int = 8) -> PSFStack:
    """Synthesize the depth-banded PSF stack for a configuration.

    Band centers sit at (k + 1/2) * depth / n_bands. Each kernel is the
    outer product of the lateral Gaussian evaluated at the band center and
    the two-way pulse (transmit pulse self-convolved, modeling
    transmit-receive), normalized to unit peak.
    """
    if n_bands < 1:
        raise ParameterError("n_bands must be >= 1")
    pulse = make_pulse(config.f0_hz, config.bandwidth_frac, config.fs_hz)
    two_way = np.convolve(pulse, pulse)  # odd length since pulse is odd
    band_height = config.depth_mm / n_bands
    centers = (np.arange(n_bands) + 0.5) * band_height
    kernels = []
    for zc in centers:
        lat = _lateral_profile(lateral_beamwidth_mm(zc, config), config.pitch_mm)
        k = np.outer(lat, two_way)
        k /= np.abs(k).max()
        if (k.shape[0] > config.n_lines
                or k.shape[1] > config.samples_per_line):
            raise ParameterError(
                f"PSF kernel extent {k.shape} exceeds raster extent "
                f"({config.n_lines}, {config.samples_per_line})")
        k.setflags(write=False)
        kernels.append(k)
    return PSFStack(centers, tuple(kernels), config.f0_hz, band_height,
                    config.pitch_mm, config.dz_mm)


def export_band(stack: PSFStack, band: int) -> ScatterGrid:
    """Pack one band's kernel as a ScatterGrid for .sgrid inspection,
    rescaling signed values to [0, 1] via (v + 1) / 2."""
    k = stack.kernels[band]
    rescaled = (k.T + 1.0) / 2.0  # rows axial, cols lateral
    rows, cols = rescaled.shape
    origin = (-(cols - 1) / 2.0 * stack.dx_mm,
              stack.z_centers_mm[band] - (rows - 1) / 2.0 * stack.dz_mm)
    return ScatterGrid(rows, cols, stack.dz_mm, stack.dx_mm,
                       np.clip(rescaled, 0.0, 1.0), origin)


BAND_EXPORT_COMMENT = "psf band, raw = 2*v - 1"
