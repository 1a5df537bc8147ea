"""Evaluation metrics and per-angle report generation.

SNR = mu/sigma, MII = mean intensity, CNR = |mu_b - mu_d|/(sigma_b +
sigma_d); reference/reconstruction discrepancies are reported as
normalized errors 100*|F_hat/F_ref - 1| plus the chi-squared distance of
50-bin histograms. Standard deviations are population (not sample)
throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError, ParameterError
from .types import BModeImage


@dataclass(frozen=True)
class Roi:
    """Rectangular, disk, or annular region in raster coordinates.

    Raster coordinates follow the grid layout (row = axial sample, col =
    lateral line). Disk/annulus radii are given per axis so physically
    circular regions stay circular on anisotropic rasters.
    """

    kind: str                      # "rect" | "disk" | "annulus"
    label: str = ""
    row_range: tuple[int, int] = (0, 0)   # rect: [start, stop)
    col_range: tuple[int, int] = (0, 0)
    center: tuple[float, float] = (0.0, 0.0)  # disk/annulus: (row, col)
    radius_rows: float = 0.0
    radius_cols: float = 0.0
    inner_rows: float = 0.0        # annulus inner radii
    inner_cols: float = 0.0

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Boolean mask over an image of the given (rows, cols) shape."""
        rows, cols = shape
        if self.kind == "rect":
            r0, r1 = self.row_range
            c0, c1 = self.col_range
            if not (0 <= r0 < r1 <= rows and 0 <= c0 < c1 <= cols):
                raise ParameterError(f"rect roi {self.label!r} outside image bounds")
            m = np.zeros(shape, dtype=bool)
            m[r0:r1, c0:c1] = True
            return m
        rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        dr = (rr - self.center[0]) / max(self.radius_rows, 1e-12)
        dc = (cc - self.center[1]) / max(self.radius_cols, 1e-12)
        outer = dr**2 + dc**2 <= 1.0
        if self.kind == "disk":
            m = outer
        elif self.kind == "annulus":
            dri = (rr - self.center[0]) / max(self.inner_rows, 1e-12)
            dci = (cc - self.center[1]) / max(self.inner_cols, 1e-12)
            m = outer & (dri**2 + dci**2 > 1.0)
        else:
            raise ParameterError(f"unknown roi kind {self.kind!r}")
        if not m.any():
            raise ParameterError(f"roi {self.label!r} is empty on shape {shape}")
        return m


def _image_array(image) -> np.ndarray:
    if isinstance(image, BModeImage):
        return image.values.T  # rows axial, cols lateral
    return np.asarray(image, dtype=np.float64)


def _roi_values(image, roi: Roi | None) -> np.ndarray:
    arr = _image_array(image)
    if roi is None:
        return arr.ravel()
    vals = arr[roi.mask(arr.shape)]
    if vals.size == 0:
        raise ParameterError("roi selects no pixels")
    return vals


def snr(image, roi: Roi | None = None) -> float:
    """mu/sigma over the roi (population standard deviation)."""
    v = _roi_values(image, roi)
    s = float(v.std())
    if s == 0.0:
        raise MetricError("SNR undefined: constant region (sigma = 0)")
    return float(v.mean()) / s


def mii(image, roi: Roi | None = None) -> float:
    """Mean image intensity over the roi (full image when roi is None)."""
    return float(_roi_values(image, roi).mean())


def cnr(image, roi_bright: Roi, roi_dark: Roi) -> float:
    """|mu_b - mu_d| / (sigma_b + sigma_d)."""
    b = _roi_values(image, roi_bright)
    d = _roi_values(image, roi_dark)
    denom = float(b.std() + d.std())
    if denom == 0.0:
        raise MetricError("CNR undefined: sigma_b + sigma_d = 0")
    return abs(float(b.mean()) - float(d.mean())) / denom


def normalized_error(f_hat: float, f_ref: float) -> float:
    """Percent incompatibility 100 * |f_hat / f_ref - 1|."""
    if f_ref == 0.0:
        raise MetricError("normalized error undefined for reference 0")
    return 100.0 * abs(f_hat / f_ref - 1.0)


def chi2_hist(image_a, image_b, bins: int = 50) -> float:
    """Chi-squared distance of equal-width histograms over [0, 1], each
    normalized to sum 1: 0.5 * sum (p-q)^2/(p+q), empty bins contribute 0.
    Lies in [0, 1]; 0 iff the histograms match."""
    a = _image_array(image_a).ravel()
    b = _image_array(image_b).ravel()
    edges = np.linspace(0.0, 1.0, bins + 1)
    p, _ = np.histogram(a, bins=edges)
    q, _ = np.histogram(b, bins=edges)
    p = p / max(p.sum(), 1)
    q = q / max(q.sum(), 1)
    s = p + q
    nz = s > 0
    return float(0.5 * np.sum((p[nz] - q[nz])**2 / s[nz]))


@dataclass(frozen=True)
class MetricReport:
    """Per-angle normalized errors plus aggregate mean/max rows."""

    angles_deg: tuple[float, ...]
    snr_err_pct: tuple[float, ...]
    mii_err_pct: tuple[float, ...]
    cnr_err_pct: tuple[float, ...]
    chi2: tuple[float, ...]

    def __post_init__(self):
        n = len(self.angles_deg)
        for name in ("snr_err_pct", "mii_err_pct", "cnr_err_pct", "chi2"):
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"{name} must have {n} entries")
            if any(v < 0 for v in col):
                raise ValueError(f"{name} entries must be >= 0")
        if any(not 0.0 <= v <= 1.0 for v in self.chi2):
            raise ValueError("chi2 entries must lie in [0, 1]")

    def aggregates(self) -> dict:
        cols = {"snr_err": self.snr_err_pct, "mii_err": self.mii_err_pct,
                "cnr_err": self.cnr_err_pct, "chi2": self.chi2}
        return {
            "mean": {k: float(np.mean(v)) for k, v in cols.items()},
            "max": {k: float(np.max(v)) for k, v in cols.items()},
        }

    def write_csv(self, path) -> None:
        lines = ["angle_deg,snr_err,mii_err,cnr_err,chi2"]
        for row in zip(self.angles_deg, self.snr_err_pct, self.mii_err_pct,
                       self.cnr_err_pct, self.chi2):
            lines.append(",".join(f"{v:.10g}" for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_json(self, path) -> None:
        doc = {
            "angles_deg": list(self.angles_deg),
            "snr_err_pct": list(self.snr_err_pct),
            "mii_err_pct": list(self.mii_err_pct),
            "cnr_err_pct": list(self.cnr_err_pct),
            "chi2": list(self.chi2),
        }
        doc.update(self.aggregates())
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")

    def write_summary_csv(self, path) -> None:
        agg = self.aggregates()
        lines = ["metric,mean,max"]
        for key in ("mii_err", "cnr_err", "snr_err", "chi2"):
            lines.append(f"{key},{agg['mean'][key]:.10g},{agg['max'][key]:.10g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def inclusion_rois(config, radius_mm: float = 7.0,
                   erode_mm: float = 1.0, ring_inner_mm: float = 2.0,
                   ring_outer_mm: float = 6.0) -> tuple[Roi, Roi]:
    """Default (bright, dark) ROIs for the centered inclusion phantom:
    dark = inclusion disk eroded by erode_mm, bright = annulus between
    radius+ring_inner and radius+ring_outer."""
    spec = config.raster_spec()
    row_c = (config.depth_mm / 2.0 - spec.origin_mm[1]) / spec.dz_mm
    col_c = (0.0 - spec.origin_mm[0]) / spec.dx_mm
    dark = Roi("disk", "inclusion",
               center=(row_c, col_c),
               radius_rows=(radius_mm - erode_mm) / spec.dz_mm,
               radius_cols=(radius_mm - erode_mm) / spec.dx_mm)
    bright = Roi("annulus", "background",
                 center=(row_c, col_c),
                 radius_rows=(radius_mm + ring_outer_mm) / spec.dz_mm,
                 radius_cols=(radius_mm + ring_outer_mm) / spec.dx_mm,
                 inner_rows=(radius_mm + ring_inner_mm) / spec.dz_mm,
                 inner_cols=(radius_mm + ring_inner_mm) / spec.dx_mm)
    return bright, dark


def evaluate_views(reference_bmodes, reconstructed_bmodes, rois,
                   angles_deg=None, hist_bins: int = 50) -> MetricReport:
    """Per-angle normalized SNR/MII/CNR errors and chi-squared distances
    between reference views and their resimulated counterparts.

    `rois` is the (bright, dark) pair; SNR is evaluated on the bright
    region, MII over the full image, CNR between the two.
    """
    if len(reference_bmodes) != len(reconstructed_bmodes):
        raise ParameterError(
            f"view lists differ in length: {len(reference_bmodes)} vs "
            f"{len(reconstructed_bmodes)}")
    if len(reference_bmodes) == 0:
        raise ParameterError("at least one view pair is required")
    bright, dark = rois
    if angles_deg is None:
        angles_deg = [getattr(b, "rotate_deg", float(i))
                      for i, b in enumerate(reference_bmodes)]
    snr_e, mii_e, cnr_e, chi = [], [], [], []
    for ref, rec in zip(reference_bmodes, reconstructed_bmodes):
        snr_e.append(normalized_error(snr(rec, bright), snr(ref, bright)))
        mii_e.append(normalized_error(mii(rec), mii(ref)))
        cnr_e.append(normalized_error(cnr(rec, bright, dark),
                                      cnr(ref, bright, dark)))
        chi.append(chi2_hist(rec, ref, hist_bins))
    return MetricReport(tuple(float(a) for a in angles_deg),
                        tuple(snr_e), tuple(mii_e), tuple(cnr_e), tuple(chi))
