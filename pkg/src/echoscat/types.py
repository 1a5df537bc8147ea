"""Core domain types: scatterer clouds, amplitude grids, RF/B-mode rasters,
and the imaging configuration shared by every stage of the pipeline.

All types are immutable after construction and reject invalid states in
their constructors, so a value that exists is a value that is valid.

Coordinate convention: x lateral, y elevational, z axial (depth), all in
millimeters. Raster arrays are stored with scanlines (lateral) as the
leading axis for RF/B-mode frames, and axial rows as the leading axis for
amplitude grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

# Soft-tissue speed of sound, fixed for the whole package.
SOUND_SPEED_M_S = 1540.0
SOUND_SPEED_MM_S = SOUND_SPEED_M_S * 1e3


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Domain:
    """Axis-aligned 3D box in millimeters."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for lo, hi, name in ((self.x_min, self.x_max, "x"),
                             (self.y_min, self.y_max, "y"),
                             (self.z_min, self.z_max, "z")):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
                raise ValueError(f"domain {name} bounds invalid: [{lo}, {hi}]")

    @property
    def center(self) -> tuple[float, float, float]:
        return ((self.x_min + self.x_max) / 2.0,
                (self.y_min + self.y_max) / 2.0,
                (self.z_min + self.z_max) / 2.0)

    @property
    def lateral_extent(self) -> float:
        return self.x_max - self.x_min

    @property
    def axial_extent(self) -> float:
        return self.z_max - self.z_min

    def contains(self, positions: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        """Boolean mask of points inside the box (with a small tolerance)."""
        p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        lo = np.array([self.x_min, self.y_min, self.z_min]) - atol
        hi = np.array([self.x_max, self.y_max, self.z_max]) + atol
        return np.all((p >= lo) & (p <= hi), axis=1)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x_min, self.x_max, self.y_min, self.y_max,
                self.z_min, self.z_max)


@dataclass(frozen=True)
class ScattererCloud:
    """Point scatterers at continuous positions with amplitudes in [0, 1].

    positions has shape (N, 3) in mm; amplitudes has shape (N,). The cloud
    may be empty, which is degenerate but legal.
    """

    positions: np.ndarray
    amplitudes: np.ndarray
    domain: Domain

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        if pos.shape[0] != amp.shape[0]:
            raise ValueError(
                f"positions ({pos.shape[0]}) and amplitudes ({amp.shape[0]}) "
                "must have equal length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if amp.size and (not np.all(np.isfinite(amp))
                         or amp.min() < 0.0 or amp.max() > 1.0):
            raise ValueError("amplitudes must lie in [0, 1]")
        if pos.size and not np.all(self.domain.contains(pos)):
            raise ValueError("all points must lie inside the domain")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "amplitudes", _freeze(amp))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a 2D amplitude raster: shape, spacing, and the (x, z)
    position of the center of pixel (0, 0). Rows run axially, columns
    laterally."""

    rows: int
    cols: int
    dz_mm: float
    dx_mm: float
    origin_mm: tuple[float, float]  # (x, z) of pixel (0, 0) center

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.dz_mm <= 0 or self.dx_mm <= 0:
            raise ValueError("pixel spacings must be positive")
        object.__setattr__(self, "origin_mm",
                           (float(self.origin_mm[0]), float(self.origin_mm[1])))

    @property
    def x_coords(self) -> np.ndarray:
        """Lateral pixel-center coordinates, one per column."""
        return self.origin_mm[0] + np.arange(self.cols) * self.dx_mm

    @property
    def z_coords(self) -> np.ndarray:
        """Axial pixel-center coordinates, one per row."""
        return self.origin_mm[1] + np.arange(self.rows) * self.dz_mm

    def upsampled(self, factor: int) -> "GridSpec":
        """Spec of the grid covering the same footprint at `factor` times
        the resolution (pixel centers tile each original pixel)."""
        if factor < 1:
            raise ParameterError("upsample factor must be >= 1")
        if factor == 1:
            return self
        dz = self.dz_mm / factor
        dx = self.dx_mm / factor
        ox = self.origin_mm[0] - self.dx_mm / 2.0 + dx / 2.0
        oz = self.origin_mm[1] - self.dz_mm / 2.0 + dz / 2.0
        return GridSpec(self.rows * factor, self.cols * factor, dz, dx, (ox, oz))

    def padded(self, pad_rows: int, pad_cols: int) -> "GridSpec":
        """Spec extended by whole pixels on every side."""
        if pad_rows < 0 or pad_cols < 0:
            raise ParameterError("padding must be nonnegative")
        return GridSpec(
            self.rows + 2 * pad_rows, self.cols + 2 * pad_cols,
            self.dz_mm, self.dx_mm,
            (self.origin_mm[0] - pad_cols * self.dx_mm,
             self.origin_mm[1] - pad_rows * self.dz_mm))


@dataclass(frozen=True)
class ScatterGrid:
    """Discrete raster of scatterer amplitudes in [0, 1].

    Values are stored as float32 (the on-disk precision) in a (rows, cols)
    row-major array: rows index depth, columns index lateral position.
    """

    rows: int
    cols: int
    dz_mm: float
    dx_mm: float
    values: np.ndarray
    origin_mm: tuple[float, float]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.dz_mm <= 0 or self.dx_mm <= 0:
            raise ValueError("dz_mm and dx_mm must be positive")
        v = np.asarray(self.values, dtype=np.float32)
        if v.size != self.rows * self.cols:
            raise ValueError(
                f"values length {v.size} != rows*cols {self.rows * self.cols}")
        v = v.reshape(self.rows, self.cols)
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "origin_mm",
                           (float(self.origin_mm[0]), float(self.origin_mm[1])))

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.rows, self.cols, self.dz_mm, self.dx_mm,
                        self.origin_mm)

    @classmethod
    def from_spec(cls, spec: GridSpec, values: np.ndarray) -> "ScatterGrid":
        return cls(spec.rows, spec.cols, spec.dz_mm, spec.dx_mm, values,
                   spec.origin_mm)


@dataclass(frozen=True)
class RFFrame:
    """Pre-detection RF raster: one row per scanline, samples along depth."""

    scanlines: int
    samples_per_line: int
    fs_hz: float
    pitch_mm: float
    values: np.ndarray
    steer_deg: float = 0.0
    rotate_deg: float = 0.0

    def __post_init__(self):
        if self.scanlines < 1 or self.samples_per_line < 1:
            raise ValueError("scanlines and samples_per_line must be positive")
        if self.fs_hz <= 0 or self.pitch_mm <= 0:
            raise ValueError("fs_hz and pitch_mm must be positive")
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.scanlines * self.samples_per_line:
            raise ValueError(
                f"values length {v.size} != scanlines*samples "
                f"{self.scanlines * self.samples_per_line}")
        v = v.reshape(self.scanlines, self.samples_per_line)
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", _freeze(v))


@dataclass(frozen=True)
class BModeImage:
    """Grayscale B-mode raster with the same layout as RFFrame, values in
    [0, 1]. When derived from a nonzero envelope the maximum is exactly 1."""

    scanlines: int
    samples_per_line: int
    fs_hz: float
    pitch_mm: float
    values: np.ndarray
    dynamic_range_db: float
    steer_deg: float = 0.0
    rotate_deg: float = 0.0

    def __post_init__(self):
        if self.scanlines < 1 or self.samples_per_line < 1:
            raise ValueError("scanlines and samples_per_line must be positive")
        if self.dynamic_range_db <= 0:
            raise ValueError("dynamic_range_db must be positive")
        if self.fs_hz <= 0 or self.pitch_mm <= 0:
            raise ValueError("fs_hz and pitch_mm must be positive")
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.scanlines * self.samples_per_line:
            raise ValueError(
                f"values length {v.size} != scanlines*samples "
                f"{self.scanlines * self.samples_per_line}")
        v = v.reshape(self.scanlines, self.samples_per_line)
        if not np.all(np.isfinite(v)) or (v.size and (v.min() < 0.0 or v.max() > 1.0)):
            raise ValueError("values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(v))


@dataclass(frozen=True)
class ImagingConfig:
    """Transducer, raster, noise, and view-geometry parameters.

    All physical quantities are strictly positive except noise_sigma, which
    may be 0 to disable additive noise. The RF sampling rate must exceed
    twice the center frequency (sampling adequacy for the carrier).
    """

    f0_hz: float = 5.0e6            # center frequency
    fs_hz: float = 25.0e6           # axial sampling frequency
    bandwidth_frac: float = 0.6     # fractional -6 dB bandwidth
    n_lines: int = 128              # scanlines
    pitch_mm: float = 0.2           # lateral scanline spacing
    depth_mm: float = 25.0          # imaging depth
    aperture_mm: float = 10.0       # active aperture (sets beamwidth)
    focus_mm: float = 15.0          # nominal focal depth
    slab_thickness_mm: float = 1.0  # elevational slab FWHM
    noise_sigma: float = 0.02       # additive noise, fraction of peak RF
    dynamic_range_db: float = 60.0
    rng_seed: int = 0

    def __post_init__(self):
        positive = {
            "f0_hz": self.f0_hz, "fs_hz": self.fs_hz,
            "bandwidth_frac": self.bandwidth_frac, "n_lines": self.n_lines,
            "pitch_mm": self.pitch_mm, "depth_mm": self.depth_mm,
            "aperture_mm": self.aperture_mm, "focus_mm": self.focus_mm,
            "slab_thickness_mm": self.slab_thickness_mm,
            "dynamic_range_db": self.dynamic_range_db,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.fs_hz > 2.0 * self.f0_hz:
            raise ValueError("fs_hz must exceed 2 * f0_hz")
        if not 0.0 < self.bandwidth_frac < 2.0:
            raise ValueError("bandwidth_frac must lie in (0, 2)")
        if self.samples_per_line < 8:
            raise ValueError(
                "configuration yields fewer than 8 axial samples; increase "
                "depth_mm or fs_hz")

    @property
    def dz_mm(self) -> float:
        """Axial sample spacing: two-way travel at the speed of sound."""
        return SOUND_SPEED_MM_S / (2.0 * self.fs_hz)

    @property
    def samples_per_line(self) -> int:
        return int(round(self.depth_mm / self.dz_mm))

    @property
    def wavelength_mm(self) -> float:
        return SOUND_SPEED_MM_S / self.f0_hz

    @property
    def lateral_extent_mm(self) -> float:
        return self.n_lines * self.pitch_mm

    def line_x_mm(self) -> np.ndarray:
        """Lateral scanline center coordinates (centered on x = 0)."""
        return (np.arange(self.n_lines) - (self.n_lines - 1) / 2.0) * self.pitch_mm

    def sample_z_mm(self) -> np.ndarray:
        """Axial sample center coordinates, tiling (0, depth]."""
        return (np.arange(self.samples_per_line) + 0.5) * self.dz_mm

    def raster_spec(self) -> GridSpec:
        """GridSpec of the RF/B-mode raster (rows axial, cols lateral)."""
        return GridSpec(
            rows=self.samples_per_line, cols=self.n_lines,
            dz_mm=self.dz_mm, dx_mm=self.pitch_mm,
            origin_mm=(float(self.line_x_mm()[0]), 0.5 * self.dz_mm))

    def domain(self) -> Domain:
        """Default phantom domain: the imaged footprint with an elevational
        slab of +/- one slab thickness around y = 0."""
        half_w = self.lateral_extent_mm / 2.0
        return Domain(-half_w, half_w,
                      -self.slab_thickness_mm, self.slab_thickness_mm,
                      0.0, self.depth_mm)
