"""Phantom and training-set generation.

Scatterer clouds are instantiated uniformly at random at a configurable
per-area density; each scatterer draws its amplitude from a normal
distribution whose mean is an intensity image sampled bilinearly at the
scatterer position and whose spread interpolates between sigma_min and
sigma_max, clipped to [0, 1]. Intensity images come from a circular
inclusion phantom, procedural shape compositions, or ingested grayscale
files (e.g. exported CT slices).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .forward import simulate_bmode, splat_points
from .psf import PSFStack
from .types import (BModeImage, Domain, GridSpec, ImagingConfig, ScatterGrid,
                    ScattererCloud)
from . import formats

logger = logging.getLogger("echoscat")

TRAINING_ANGLES = {"scatgan1": (0.0,), "scatgan3": (-10.0, 0.0, 10.0)}


@dataclass(frozen=True)
class IntensityImage:
    """Grayscale control image I in [0, 1] over a physical (x, z) footprint.

    The footprint is centered laterally on x=0 and starts at z=0; rows run
    axially, columns laterally.
    """

    rows: int
    cols: int
    values: np.ndarray
    width_mm: float
    height_mm: float

    def __post_init__(self):
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise ValueError("physical extent must be positive")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.rows, self.cols):
            raise ValueError(f"values shape {v.shape} != ({self.rows}, {self.cols})")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("values must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def sample(self, x_mm: np.ndarray, z_mm: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at (x, z), clamped to the image edge."""
        dx = self.width_mm / self.cols
        dz = self.height_mm / self.rows
        jx = (np.asarray(x_mm) + self.width_mm / 2.0) / dx - 0.5
        iz = np.asarray(z_mm) / dz - 0.5
        jx = np.clip(jx, 0.0, self.cols - 1.0)
        iz = np.clip(iz, 0.0, self.rows - 1.0)
        j0 = np.minimum(jx.astype(np.int64), max(self.cols - 2, 0))
        i0 = np.minimum(iz.astype(np.int64), max(self.rows - 2, 0))
        fx = jx - j0
        fz = iz - i0
        j1 = np.minimum(j0 + 1, self.cols - 1)
        i1 = np.minimum(i0 + 1, self.rows - 1)
        v = self.values
        return ((1 - fx) * (1 - fz) * v[i0, j0] + fx * (1 - fz) * v[i0, j1]
                + (1 - fx) * fz * v[i1, j0] + fx * fz * v[i1, j1])


@dataclass(frozen=True)
class DatasetPair:
    """One training sample: 1 or 3 B-mode inputs and the target grid."""

    inputs: tuple[BModeImage, ...]
    target: ScatterGrid
    source: str
    angles_deg: tuple[float, ...]
    seed: int
    mode: str

    def __post_init__(self):
        if self.mode not in TRAINING_ANGLES:
            raise ValueError(f"mode must be one of {sorted(TRAINING_ANGLES)}")
        if self.angles_deg != TRAINING_ANGLES[self.mode]:
            raise ValueError(
                f"angle list for {self.mode} must be {TRAINING_ANGLES[self.mode]}")
        if len(self.inputs) != len(self.angles_deg):
            raise ValueError("one input image per angle required")
        shapes = {(b.scanlines, b.samples_per_line) for b in self.inputs}
        shapes.add((self.target.cols, self.target.rows))
        if len(shapes) != 1:
            raise ValueError("all rasters in a pair must share dimensions")


def child_seed(master_seed: int, *key) -> int:
    """Stable 64-bit child seed derived from a master seed and a key path.

    Uses SHA-256 over the rendered key, so parallel and serial dataset
    generation derive identical per-item seeds.
    """
    text = repr((int(master_seed),) + tuple(key)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


def generate_cloud(domain: Domain, density_per_mm2: float,
                   rng_seed: int) -> ScattererCloud:
    """Uniform random scatterers at the given per-area (x-z plane) density.

    N = round(density * lateral_extent * axial_extent); y is drawn
    uniformly from the domain's elevational extent; amplitudes start at 1.
    """
    if density_per_mm2 <= 0:
        raise ParameterError("density_per_mm2 must be positive")
    n = int(round(density_per_mm2 * domain.lateral_extent * domain.axial_extent))
    rng = np.random.default_rng(rng_seed)
    pos = np.empty((n, 3))
    pos[:, 0] = rng.uniform(domain.x_min, domain.x_max, n)
    pos[:, 1] = rng.uniform(domain.y_min, domain.y_max, n)
    pos[:, 2] = rng.uniform(domain.z_min, domain.z_max, n)
    return ScattererCloud(pos, np.ones(n), domain)


def sigma_of(intensity, sigma_min: float, sigma_max: float):
    """Amplitude spread as a function of the control intensity:
    sigma(I) = -|(sigma_max - sigma_min)/2 * (I - 1/2)| + sigma_max."""
    i = np.asarray(intensity, dtype=np.float64)
    if np.any(i < 0.0) or np.any(i > 1.0):
        raise ParameterError("intensity must lie in [0, 1]")
    if not 0.0 < sigma_min <= sigma_max:
        raise ParameterError("require 0 < sigma_min <= sigma_max")
    out = -np.abs((sigma_max - sigma_min) / 2.0 * (i - 0.5)) + sigma_max
    return float(out) if np.isscalar(intensity) else out


def sample_amplitudes(cloud: ScattererCloud, image: IntensityImage,
                      sigma_min: float, sigma_max: float,
                      rng_seed: int) -> tuple[ScattererCloud, float]:
    """Draw per-scatterer amplitudes a ~ Normal(I(x), sigma(I(x))) and
    clip to [0, 1].

    Returns the new cloud and the fraction of draws that were clipped.
    The image footprint must cover the cloud domain's x-z extent.
    """
    half_w = image.width_mm / 2.0
    d = cloud.domain
    if (d.x_min < -half_w - 1e-9 or d.x_max > half_w + 1e-9
            or d.z_min < -1e-9 or d.z_max > image.height_mm + 1e-9):
        raise ParameterError("intensity image does not cover the cloud domain")
    mu = image.sample(cloud.positions[:, 0], cloud.positions[:, 2])
    sigma = sigma_of(mu, sigma_min, sigma_max)
    rng = np.random.default_rng(rng_seed)
    raw = rng.normal(mu, sigma)
    clipped = float(np.mean((raw < 0.0) | (raw > 1.0))) if raw.size else 0.0
    amps = np.clip(raw, 0.0, 1.0)
    return ScattererCloud(cloud.positions, amps, cloud.domain), clipped


def _as_extent(extent_mm) -> tuple[float, float]:
    if np.isscalar(extent_mm):
        return float(extent_mm), float(extent_mm)
    w, h = extent_mm
    return float(w), float(h)


def inclusion_phantom(extent_mm, radius_mm: float = 7.0,
                      contrast: float = 0.1, background: float = 0.5,
                      pixels_per_mm: float = 4.0) -> IntensityImage:
    """Centered circular inclusion of intensity background*contrast on a
    constant background."""
    w, h = _as_extent(extent_mm)
    cols = max(int(round(w * pixels_per_mm)), 1)
    rows = max(int(round(h * pixels_per_mm)), 1)
    x = (np.arange(cols) + 0.5) * (w / cols) - w / 2.0
    z = (np.arange(rows) + 0.5) * (h / rows)
    xx, zz = np.meshgrid(x, z)
    values = np.full((rows, cols), background)
    inside = (xx - 0.0)**2 + (zz - h / 2.0)**2 <= radius_mm**2
    values[inside] = background * contrast
    return IntensityImage(rows, cols, values, w, h)


def procedural_image(rng_seed: int, extent_mm, n_shapes: int | None = None,
                     pixels_per_mm: float = 4.0) -> IntensityImage:
    """Random additive/multiplicative composition of primitive shapes
    (disks, rectangles, ellipses) with random intensities, clamped to
    [0, 1]. Forcing n_shapes=0 yields a constant background."""
    w, h = _as_extent(extent_mm)
    cols = max(int(round(w * pixels_per_mm)), 1)
    rows = max(int(round(h * pixels_per_mm)), 1)
    rng = np.random.default_rng(rng_seed)
    x = (np.arange(cols) + 0.5) * (w / cols) - w / 2.0
    z = (np.arange(rows) + 0.5) * (h / rows)
    xx, zz = np.meshgrid(x, z)
    values = np.full((rows, cols), rng.uniform(0.2, 0.8))
    count = int(rng.integers(3, 11)) if n_shapes is None else n_shapes
    for _ in range(count):
        kind = rng.choice(["disk", "rect", "ellipse"])
        cx = rng.uniform(-w / 2.0, w / 2.0)
        cz = rng.uniform(0.0, h)
        intensity = rng.uniform(0.0, 1.0)
        additive = bool(rng.integers(0, 2))
        if kind == "disk":
            r = rng.uniform(0.05, 0.25) * min(w, h)
            mask = (xx - cx)**2 + (zz - cz)**2 <= r**2
        elif kind == "rect":
            hw = rng.uniform(0.05, 0.25) * w
            hh = rng.uniform(0.05, 0.25) * h
            mask = (np.abs(xx - cx) <= hw) & (np.abs(zz - cz) <= hh)
        else:
            rx = rng.uniform(0.05, 0.25) * w
            rz = rng.uniform(0.05, 0.25) * h
            mask = ((xx - cx) / rx)**2 + ((zz - cz) / rz)**2 <= 1.0
        if additive:
            values[mask] += intensity - 0.5
        else:
            values[mask] *= intensity * 2.0
    return IntensityImage(rows, cols, np.clip(values, 0.0, 1.0), w, h)


def _read_grayscale(path: Path) -> np.ndarray | None:
    """Load an 8- or 16-bit grayscale image normalized by the format
    maximum; None if the file is not a usable grayscale image."""
    from PIL import Image

    try:
        with Image.open(path) as img:
            if img.mode == "L":
                return np.asarray(img, dtype=np.float64) / 255.0
            if img.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64)
                return arr / 65535.0
            return None
    except Exception:
        return None


def ingest_intensity_images(directory, extent_mm=(25.6, 25.6)) -> list[IntensityImage]:
    """Load every grayscale PGM/PNG in `directory` as an IntensityImage
    with the configured physical extent. Unreadable or non-grayscale
    files are skipped with a warning; the kept/skipped counts are logged.
    """
    w, h = _as_extent(extent_mm)
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in (".pgm", ".png"))
    images = []
    skipped = 0
    for p in paths:
        arr = _read_grayscale(p)
        if arr is None:
            warnings.warn(f"skipping non-grayscale or unreadable image: {p}")
            skipped += 1
            continue
        arr = np.clip(arr, 0.0, 1.0)
        images.append(IntensityImage(arr.shape[0], arr.shape[1], arr, w, h))
    logger.info("ingest_intensity_images: loaded %d, skipped %d",
                len(images), skipped)
    return images


def rasterize_cloud(cloud: ScattererCloud, spec: GridSpec) -> ScatterGrid:
    """Bilinear splat of cloud amplitudes onto a grid, clamped to [0, 1]
    after accumulation. Mass is conserved before the clamp (out-of-grid
    coordinates are clamped to the edge pixels)."""
    raster, _ = splat_points(cloud.positions[:, 0], cloud.positions[:, 2],
                             cloud.amplitudes, spec, clamp=True)
    return ScatterGrid.from_spec(spec, np.clip(raster, 0.0, 1.0))


def cloud_from_grid(grid: ScatterGrid, domain: Domain | None = None) -> ScattererCloud:
    """Convert a grid back into a point cloud: one scatterer per nonzero
    pixel at the pixel center, y = 0."""
    spec = grid.spec
    xx, zz = np.meshgrid(spec.x_coords, spec.z_coords)
    amps = grid.values.astype(np.float64).ravel()
    keep = amps > 0.0
    pos = np.column_stack([xx.ravel()[keep], np.zeros(int(keep.sum())),
                           zz.ravel()[keep]])
    if domain is None:
        domain = Domain(
            spec.origin_mm[0] - spec.dx_mm / 2.0,
            spec.origin_mm[0] + (spec.cols - 0.5) * spec.dx_mm,
            0.0, 0.0,
            spec.origin_mm[1] - spec.dz_mm / 2.0,
            spec.origin_mm[1] + (spec.rows - 0.5) * spec.dz_mm)
    return ScattererCloud(pos, amps[keep], domain)


def make_training_pair(image: IntensityImage, psf: PSFStack,
                       config: ImagingConfig, mode: str, rng_seed: int,
                       density_per_mm2: float = 20.0,
                       sigma_min: float = 0.05, sigma_max: float = 0.30,
                       source: str = "") -> DatasetPair:
    """Build one {B-mode input(s), scatter-map target} pair.

    A cloud is generated over the imaging domain, amplitudes sampled from
    the intensity image, views simulated at the mode's probe-rotation
    angles, and the cloud rasterized to the B-mode raster resolution as
    the target. Deterministic for a fixed seed.
    """
    if mode not in TRAINING_ANGLES:
        raise ParameterError(f"mode must be one of {sorted(TRAINING_ANGLES)}")
    angles = TRAINING_ANGLES[mode]
    cloud = generate_cloud(config.domain(), density_per_mm2,
                           child_seed(rng_seed, "cloud"))
    cloud, _ = sample_amplitudes(cloud, image, sigma_min, sigma_max,
                                 child_seed(rng_seed, "amps"))
    inputs = tuple(
        simulate_bmode(cloud, psf, config, rotate_deg=a,
                       rng_seed=child_seed(rng_seed, "view", a))
        for a in angles)
    target = rasterize_cloud(cloud, config.raster_spec())
    return DatasetPair(inputs, target, source, angles, rng_seed, mode)


def config_digest(config: ImagingConfig) -> str:
    """Short stable hash of an imaging configuration."""
    blob = json.dumps(
        {k: getattr(config, k) for k in config.__dataclass_fields__},
        sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_pair(pair: DatasetPair, directory, config: ImagingConfig) -> None:
    """Write a pair directory: input_000.sgrid (.., _001, _002 for
    scatgan3), target.sgrid, and meta.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, bmode in enumerate(pair.inputs):
        formats.save_grid(formats.grid_from_bmode(bmode),
                          directory / f"input_{i:03d}.sgrid")
    formats.save_grid(pair.target, directory / "target.sgrid")
    meta = {
        "seed": pair.seed,
        "angles_deg": list(pair.angles_deg),
        "mode": pair.mode,
        "source": pair.source,
        "config": config_digest(config),
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def generate_dataset(images: list[IntensityImage], psf: PSFStack,
                     config: ImagingConfig, mode: str, count: int,
                     master_seed: int, out_dir,
                     density_per_mm2: float = 20.0,
                     sigma_min: float = 0.05, sigma_max: float = 0.30,
                     sources: list[str] | None = None) -> list[Path]:
    """Generate `count` pairs cycling through the source images. Each pair
    derives its seed from (master_seed, pair_index), so parallel and
    serial runs produce identical datasets."""
    if not images:
        raise ParameterError("at least one source image is required")
    out_dir = Path(out_dir)
    written = []
    for i in range(count):
        image = images[i % len(images)]
        source = sources[i % len(sources)] if sources else f"image_{i % len(images)}"
        pair = make_training_pair(
            image, psf, config, mode, child_seed(master_seed, "pair", i),
            density_per_mm2, sigma_min, sigma_max, source)
        pair_dir = out_dir / f"pair_{i:05d}"
        write_pair(pair, pair_dir, config)
        written.append(pair_dir)
    return written
