"""Forward simulation: scatterers -> RF -> envelope -> B-mode.

The RF frame is the sum over depth bands of (band-weighted scatterer
raster) convolved with the band kernel, plus optional white Gaussian
noise scaled to the noiseless peak. Band weights are piecewise-linear
hats over depth (1 at a band center, 0 at its neighbors' centers), so a
scatterer exactly at a band center is imaged by that band's kernel alone
and the banding degenerates to a single exact convolution for n_bands=1.

Beam steering is approximated by shearing the kernels laterally by
tan(steer) per unit depth; probe rotation rotates scatterer positions by
the opposite angle about the domain center before splatting.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2
from scipy.signal import hilbert

from .errors import ParameterError
from .psf import PSFStack
from .types import (BModeImage, GridSpec, ImagingConfig, RFFrame,
                    ScatterGrid, ScattererCloud)

logger = logging.getLogger("echoscat")

MAX_ROTATE_DEG = 45.0
MAX_STEER_DEG = 30.0


def shear_kernel(kernel: np.ndarray, steer_deg: float, dx_mm: float,
                 dz_mm: float) -> np.ndarray:
    """Shear a (lateral, axial) kernel laterally by tan(steer) per unit
    depth, via per-row linear interpolation. Returns the kernel widened
    just enough to hold the sheared support."""
    if steer_deg == 0.0:
        return kernel
    n_lat, n_ax = kernel.shape
    slope = math.tan(math.radians(steer_deg)) * dz_mm / dx_mm  # px per px
    max_shift = abs(slope) * (n_ax - 1) / 2.0
    pad = int(math.ceil(max_shift))
    n_out = n_lat + 2 * pad
    src = np.arange(n_lat, dtype=np.float64)
    out = np.zeros((n_out, n_ax))
    for j in range(n_ax):
        shift = slope * (j - (n_ax - 1) / 2.0)
        query = np.arange(n_out, dtype=np.float64) - pad - shift
        out[:, j] = np.interp(query, src, kernel[:, j], left=0.0, right=0.0)
    return out


def band_weights(z_mm: np.ndarray, centers_mm: np.ndarray) -> np.ndarray:
    """Piecewise-linear overlap-add weights, shape (n_bands, len(z)).

    Weight k is 1 at centers[k], 0 at the neighboring centers, constant 1
    beyond the first/last center. Weights sum to 1 at every depth.
    """
    n = centers_mm.size
    w = np.zeros((n, z_mm.size))
    if n == 1:
        w[0] = 1.0
        return w
    for k in range(n):
        if k == 0:
            xp = [centers_mm[0], centers_mm[1]]
            fp = [1.0, 0.0]
        elif k == n - 1:
            xp = [centers_mm[k - 1], centers_mm[k]]
            fp = [0.0, 1.0]
        else:
            xp = [centers_mm[k - 1], centers_mm[k], centers_mm[k + 1]]
            fp = [0.0, 1.0, 0.0]
        w[k] = np.interp(z_mm, xp, fp)
    return w


class BandConvolver:
    """FFT-domain banded convolution on a fixed raster, with the exact
    adjoint. Kernel transforms are cached, so repeated applications (ADMM
    inner iterations) cost one forward FFT per band plus one inverse."""

    def __init__(self, psf: PSFStack, config: ImagingConfig,
                 steer_deg: float = 0.0):
        if abs(steer_deg) > MAX_STEER_DEG:
            raise ParameterError(f"|steer_deg| must be <= {MAX_STEER_DEG}")
        self.n_lines = config.n_lines
        self.n_samples = config.samples_per_line
        kernels = [shear_kernel(k, steer_deg, psf.dx_mm, psf.dz_mm)
                   for k in psf.kernels]
        lat = max(k.shape[0] for k in kernels)
        ax = max(k.shape[1] for k in kernels)
        if lat > self.n_lines or ax > self.n_samples:
            raise ParameterError(
                f"kernel extent ({lat}, {ax}) exceeds raster extent "
                f"({self.n_lines}, {self.n_samples})")
        canvas = np.zeros((len(kernels), lat, ax))
        for i, k in enumerate(kernels):
            r0 = (lat - k.shape[0]) // 2
            c0 = (ax - k.shape[1]) // 2
            canvas[i, r0:r0 + k.shape[0], c0:c0 + k.shape[1]] = k
        self._pad = (next_fast_len(self.n_lines + lat - 1),
                     next_fast_len(self.n_samples + ax - 1))
        self._crop = ((lat - 1) // 2, (ax - 1) // 2)
        self._khat = [rfft2(canvas[i], s=self._pad) for i in range(len(kernels))]
        self._khat_flip = [rfft2(canvas[i, ::-1, ::-1], s=self._pad)
                           for i in range(len(kernels))]
        self.weights = band_weights(config.sample_z_mm(), psf.z_centers_mm)

    def forward(self, raster: np.ndarray) -> np.ndarray:
        """Sum over bands of conv2(weights_k * raster, kernel_k), cropped
        to 'same'. raster shape: (n_lines, n_samples)."""
        acc = np.zeros((self._pad[0], self._pad[1] // 2 + 1), dtype=complex)
        for w, khat in zip(self.weights, self._khat):
            acc += rfft2(raster * w[np.newaxis, :], s=self._pad) * khat
        full = irfft2(acc, s=self._pad)
        r0, c0 = self._crop
        return full[r0:r0 + self.n_lines, c0:c0 + self.n_samples]

    def adjoint(self, rf: np.ndarray) -> np.ndarray:
        """Exact transpose of forward: correlate with each kernel, then
        apply the band weights and sum."""
        rhat = rfft2(rf, s=self._pad)
        r0, c0 = self._crop
        out = np.zeros((self.n_lines, self.n_samples))
        for w, khat in zip(self.weights, self._khat_flip):
            full = irfft2(rhat * khat, s=self._pad)
            out += full[r0:r0 + self.n_lines, c0:c0 + self.n_samples] * w[np.newaxis, :]
        return out


def splat_points(x_mm: np.ndarray, z_mm: np.ndarray, amps: np.ndarray,
                 spec: GridSpec, clamp: bool = False):
    """Bilinear splat of weighted points onto a raster.

    Returns (raster rows x cols, dropped_count). With clamp=True,
    out-of-raster coordinates are clamped to the edge pixels (conserving
    total mass); otherwise such points are dropped and counted.
    """
    jx = (np.asarray(x_mm, dtype=np.float64) - spec.origin_mm[0]) / spec.dx_mm
    iz = (np.asarray(z_mm, dtype=np.float64) - spec.origin_mm[1]) / spec.dz_mm
    a = np.asarray(amps, dtype=np.float64)
    if clamp:
        jx = np.clip(jx, 0.0, spec.cols - 1.0)
        iz = np.clip(iz, 0.0, spec.rows - 1.0)
        dropped = 0
    else:
        inside = ((jx >= 0.0) & (jx <= spec.cols - 1.0)
                  & (iz >= 0.0) & (iz <= spec.rows - 1.0))
        dropped = int(inside.size - inside.sum())
        jx, iz, a = jx[inside], iz[inside], a[inside]
    raster = np.zeros((spec.rows, spec.cols))
    if a.size == 0:
        return raster, dropped
    j0 = np.minimum(jx.astype(np.int64), spec.cols - 2) if spec.cols > 1 \
        else np.zeros(jx.shape, dtype=np.int64)
    i0 = np.minimum(iz.astype(np.int64), spec.rows - 2) if spec.rows > 1 \
        else np.zeros(iz.shape, dtype=np.int64)
    fx = jx - j0
    fz = iz - i0
    j1 = np.minimum(j0 + 1, spec.cols - 1)
    i1 = np.minimum(i0 + 1, spec.rows - 1)
    np.add.at(raster, (i0, j0), a * (1.0 - fx) * (1.0 - fz))
    np.add.at(raster, (i0, j1), a * fx * (1.0 - fz))
    np.add.at(raster, (i1, j0), a * (1.0 - fx) * fz)
    np.add.at(raster, (i1, j1), a * fx * fz)
    return raster, dropped


def _rotate_xz(x: np.ndarray, z: np.ndarray, angle_deg: float,
               center: tuple[float, float]):
    """Rotate in-plane coordinates by angle_deg about center."""
    if angle_deg == 0.0:
        return x, z
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    xr = x - center[0]
    zr = z - center[1]
    return c * xr - s * zr + center[0], s * xr + c * zr + center[1]


def _slab_weights(y_mm: np.ndarray, slab_thickness_mm: float) -> np.ndarray:
    sigma_y = slab_thickness_mm / 2.355  # FWHM -> sigma
    return np.exp(-y_mm**2 / (2.0 * sigma_y**2))


def _add_noise(rf: np.ndarray, noise_sigma: float, rng_seed: int) -> np.ndarray:
    if noise_sigma == 0.0:
        return rf
    peak = np.abs(rf).max()
    if peak == 0.0:
        return rf
    rng = np.random.default_rng(rng_seed)
    return rf + rng.normal(0.0, noise_sigma * peak, size=rf.shape)


def simulate_rf(cloud: ScattererCloud, psf: PSFStack, config: ImagingConfig,
                rotate_deg: float = 0.0, steer_deg: float = 0.0,
                rng_seed: int = 0) -> RFFrame:
    """Simulate the RF frame of a scatterer cloud for one view.

    The probe is rotated by +rotate_deg around the sample, realized by
    rotating scatterer (x, z) positions by -rotate_deg about the domain
    center. Amplitudes are weighted through the elevational Gaussian slab
    at y=0, splat bilinearly onto the RF raster, convolved per depth band,
    and overlap-add blended. Scatterers falling outside the raster after
    rotation are dropped (the count is logged).
    """
    if abs(rotate_deg) > MAX_ROTATE_DEG:
        raise ParameterError(f"|rotate_deg| must be <= {MAX_ROTATE_DEG}")
    spec = config.raster_spec()
    cx, _, cz = cloud.domain.center
    x, z = _rotate_xz(cloud.positions[:, 0], cloud.positions[:, 2],
                      -rotate_deg, (cx, cz))
    amps = cloud.amplitudes * _slab_weights(cloud.positions[:, 1],
                                            config.slab_thickness_mm)
    raster, dropped = splat_points(x, z, amps, spec)
    if dropped:
        logger.info("simulate_rf: dropped %d scatterer(s) outside the raster",
                    dropped)
    conv = BandConvolver(psf, config, steer_deg)
    rf = conv.forward(raster.T)  # (lines, samples)
    rf = _add_noise(rf, config.noise_sigma, rng_seed)
    return RFFrame(config.n_lines, config.samples_per_line, config.fs_hz,
                   config.pitch_mm, rf, steer_deg, rotate_deg)


def grid_matches_raster(grid: ScatterGrid, config: ImagingConfig,
                        upsample: int = 1) -> bool:
    spec = config.raster_spec().upsampled(upsample)
    return (grid.rows == spec.rows and grid.cols == spec.cols
            and math.isclose(grid.dz_mm, spec.dz_mm, rel_tol=1e-9)
            and math.isclose(grid.dx_mm, spec.dx_mm, rel_tol=1e-9)
            and math.isclose(grid.origin_mm[0], spec.origin_mm[0],
                             rel_tol=0, abs_tol=1e-9 * spec.dx_mm)
            and math.isclose(grid.origin_mm[1], spec.origin_mm[1],
                             rel_tol=0, abs_tol=1e-9 * spec.dz_mm))


def simulate_rf_grid(grid: ScatterGrid, psf: PSFStack, config: ImagingConfig,
                     rotate_deg: float = 0.0, steer_deg: float = 0.0,
                     rng_seed: int = 0) -> RFFrame:
    """RF frame of an on-grid scatterer map (the forward operator used by
    the inverse solver). Grids are view-aligned: rotate_deg must be 0."""
    if rotate_deg != 0.0:
        raise ParameterError("simulate_rf_grid requires rotate_deg == 0; "
                             "grids are view-aligned")
    raster = _grid_to_raster(grid, config)
    conv = BandConvolver(psf, config, steer_deg)
    rf = conv.forward(raster)
    rf = _add_noise(rf, config.noise_sigma, rng_seed)
    return RFFrame(config.n_lines, config.samples_per_line, config.fs_hz,
                   config.pitch_mm, rf, steer_deg, 0.0)


def _grid_to_raster(grid: ScatterGrid, config: ImagingConfig) -> np.ndarray:
    """Place grid pixels on the RF raster as point amplitudes. Identity
    (up to transposition) when the grid matches the raster; otherwise the
    pixel centers are splat as scatterers."""
    if grid_matches_raster(grid, config):
        return grid.values.T.astype(np.float64)
    spec = config.raster_spec()
    gx = grid.spec.x_coords
    gz = grid.spec.z_coords
    xx, zz = np.meshgrid(gx, gz)  # (rows, cols)
    raster, dropped = splat_points(xx.ravel(), zz.ravel(),
                                   grid.values.astype(np.float64).ravel(), spec)
    if dropped:
        logger.info("simulate_rf_grid: dropped %d off-raster pixel(s)", dropped)
    return raster.T


def envelope(rf: RFFrame) -> np.ndarray:
    """Envelope via the analytic signal (one-sided axial spectrum) of each
    scanline; nonnegative, same shape as the RF values."""
    if rf.samples_per_line < 8:
        raise ParameterError("envelope requires samples_per_line >= 8")
    return np.abs(hilbert(rf.values, axis=1))


def log_compress(env: np.ndarray, dynamic_range_db: float,
                 fs_hz: float = 1.0, pitch_mm: float = 1.0,
                 steer_deg: float = 0.0, rotate_deg: float = 0.0) -> BModeImage:
    """Dynamic-range compression of a nonnegative envelope raster:
    b = clamp(1 + 20*log10(env / max(env)) / dr, 0, 1). An all-zero
    envelope maps to an all-zero image."""
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 2:
        raise ParameterError("envelope raster must be 2D")
    if np.any(env < 0):
        raise ParameterError("envelope must be nonnegative")
    if dynamic_range_db <= 0:
        raise ParameterError("dynamic_range_db must be positive")
    peak = env.max()
    if peak == 0.0:
        b = np.zeros_like(env)
    else:
        with np.errstate(divide="ignore"):
            b = 1.0 + 20.0 * np.log10(env / peak) / dynamic_range_db
        b = np.clip(b, 0.0, 1.0)
    return BModeImage(env.shape[0], env.shape[1], fs_hz, pitch_mm, b,
                      dynamic_range_db, steer_deg, rotate_deg)


def simulate_bmode(source, psf: PSFStack, config: ImagingConfig,
                   rotate_deg: float = 0.0, steer_deg: float = 0.0,
                   rng_seed: int = 0) -> BModeImage:
    """Full pipeline: simulate RF (cloud or grid source), extract the
    envelope, and log-compress. Deterministic given the seed."""
    if isinstance(source, ScattererCloud):
        rf = simulate_rf(source, psf, config, rotate_deg, steer_deg, rng_seed)
    elif isinstance(source, ScatterGrid):
        rf = simulate_rf_grid(source, psf, config, rotate_deg, steer_deg,
                              rng_seed)
    else:
        raise ParameterError(
            f"source must be ScattererCloud or ScatterGrid, got {type(source)}")
    env = envelope(rf)
    return log_compress(env, config.dynamic_range_db, config.fs_hz,
                        config.pitch_mm, steer_deg, rotate_deg)
