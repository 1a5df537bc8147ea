"""Sparse nonnegative scatterer reconstruction by ADMM.

Solves  min_g  sum_k ||H_k g - f_k||_1 + lambda ||g||_1  s.t. g >= 0
over one or more views, where H_k applies the depth-banded convolution of
view k (with its steering/rotation geometry) to a grid-shaped unknown.
The splitting introduces r_k = H_k g - f_k and a consensus copy z = g;
the g-update solves the rho-weighted least-squares normal equations by
conjugate gradient with the exact operator adjoint, the r- and z-updates
are elementwise soft-thresholds (the z-update followed by projection onto
the nonnegative orthant), and the duals ascend on the constraint gaps.

When observations come from B-mode images the RF phase is unavailable;
reconstruct_from_bmode inverts the log compression to an envelope and
alternates RF-domain solves with re-estimation of the analytic-signal
phase from the current iterate (envelope-domain matching).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import hilbert
from scipy.sparse import csr_matrix

from .errors import NumericalError, ParameterError
from .forward import BandConvolver, _rotate_xz
from .psf import PSFStack
from .types import BModeImage, GridSpec, ImagingConfig, ScatterGrid

DEFAULT_LAMBDA_REL = 0.01


@dataclass(frozen=True)
class AdmmParams:
    """Solver parameters. lam=None selects 0.01 * the lambda_max estimate
    of the stacked system."""

    lam: float | None = None     # L1 regularization weight (lambda)
    rho: float = 1.0             # ADMM penalty parameter
    max_iter: int = 300
    tol_primal: float = 1e-4     # relative primal tolerance
    tol_dual: float = 1e-4       # relative dual tolerance
    cg_iters: int = 30           # inner conjugate-gradient iterations

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive (or None for automatic)")
        for name in ("rho", "max_iter", "tol_primal", "tol_dual", "cg_iters"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ConvergenceReport:
    """Per-iteration objective and residual trace of one solve."""

    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    dual_residual: list = field(default_factory=list)
    converged: bool = False
    lambda_used: float = 0.0
    clip_fraction: float = 0.0

    @property
    def n_iterations(self) -> int:
        return len(self.objective)

    def write_csv(self, path) -> None:
        lines = ["iteration,objective,primal_residual,dual_residual"]
        for i, (o, p, d) in enumerate(zip(self.objective, self.primal_residual,
                                          self.dual_residual)):
            lines.append(f"{i},{o:.10g},{p:.10g},{d:.10g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class ViewSystem:
    """Forward map and exact adjoint for one view, plus its observation.

    The unknown is a (rows, cols) grid aligned with the 0-degree frame;
    the operator rotates/upsamples it onto the RF raster (sparse bilinear
    splat), then applies the banded convolution for the view's steering.
    For rotated views the data term is masked to raster pixels imaging
    tissue inside the unknown's footprint (eroded by the kernel
    half-extent), since echoes from outside it cannot be explained by any
    grid value.
    """

    def __init__(self, psf: PSFStack, config: ImagingConfig,
                 observation: np.ndarray, steer_deg: float = 0.0,
                 rotate_deg: float = 0.0, upsample: int = 1,
                 grid_spec: GridSpec | None = None):
        observation = np.asarray(observation, dtype=np.float64)
        raster = config.raster_spec()
        if observation.shape != (config.n_lines, config.samples_per_line):
            raise ParameterError(
                f"observation shape {observation.shape} does not match the "
                f"raster ({config.n_lines}, {config.samples_per_line})")
        self.config = config
        self.steer_deg = float(steer_deg)
        self.rotate_deg = float(rotate_deg)
        self.grid_spec = grid_spec if grid_spec is not None \
            else raster.upsampled(upsample)
        self._conv = BandConvolver(psf, config, steer_deg)
        self._splat = self._build_splat(raster)
        self._mask = self._build_mask(psf, raster)
        self.observation = observation if self._mask is None \
            else observation * self._mask

    def _build_splat(self, raster: GridSpec) -> csr_matrix | None:
        """Sparse map from grid pixels (as point amplitudes at their
        centers, rotated into the view frame) onto the RF raster. None
        when the map is the identity."""
        gs = self.grid_spec
        if self.rotate_deg == 0.0 and gs == raster:
            return None
        xx, zz = np.meshgrid(gs.x_coords, gs.z_coords)
        cx = (raster.x_coords[0] + raster.x_coords[-1]) / 2.0
        cz = self.config.depth_mm / 2.0
        x, z = _rotate_xz(xx.ravel(), zz.ravel(), -self.rotate_deg, (cx, cz))
        jx = (x - raster.origin_mm[0]) / raster.dx_mm
        iz = (z - raster.origin_mm[1]) / raster.dz_mm
        inside = ((jx >= 0.0) & (jx <= raster.cols - 1.0)
                  & (iz >= 0.0) & (iz <= raster.rows - 1.0))
        idx = np.nonzero(inside)[0]
        jx, iz = jx[idx], iz[idx]
        j0 = np.minimum(jx.astype(np.int64), raster.cols - 2)
        i0 = np.minimum(iz.astype(np.int64), raster.rows - 2)
        fx, fz = jx - j0, iz - i0
        rows_out, cols_out, weights = [], [], []
        for di, dj, w in ((0, 0, (1 - fx) * (1 - fz)), (0, 1, fx * (1 - fz)),
                          (1, 0, (1 - fx) * fz), (1, 1, fx * fz)):
            rows_out.append((i0 + di) * raster.cols + (j0 + dj))
            cols_out.append(idx)
            weights.append(w)
        n_raster = raster.rows * raster.cols
        n_grid = gs.rows * gs.cols
        return csr_matrix(
            (np.concatenate(weights),
             (np.concatenate(rows_out), np.concatenate(cols_out))),
            shape=(n_raster, n_grid))

    def _build_mask(self, psf: PSFStack, raster: GridSpec) -> np.ndarray | None:
        """For rotated views: 1 where the raster pixel's back-rotated
        position lies inside the grid footprint eroded by the kernel
        half-extent, else 0."""
        if self.rotate_deg == 0.0:
            return None
        gs = self.grid_spec
        margin_x = max(k.shape[0] for k in psf.kernels) / 2.0 * raster.dx_mm
        margin_z = max(k.shape[1] for k in psf.kernels) / 2.0 * raster.dz_mm
        xx, zz = np.meshgrid(raster.x_coords, raster.z_coords)  # (rows, cols)
        cx = (raster.x_coords[0] + raster.x_coords[-1]) / 2.0
        cz = self.config.depth_mm / 2.0
        x, z = _rotate_xz(xx.ravel(), zz.ravel(), self.rotate_deg, (cx, cz))
        x_lo = gs.x_coords[0] + margin_x
        x_hi = gs.x_coords[-1] - margin_x
        z_lo = gs.z_coords[0] + margin_z
        z_hi = gs.z_coords[-1] - margin_z
        inside = (x >= x_lo) & (x <= x_hi) & (z >= z_lo) & (z <= z_hi)
        if inside.all():
            return None
        return inside.reshape(raster.rows, raster.cols).T.astype(np.float64)

    def apply(self, grid_values: np.ndarray) -> np.ndarray:
        """H_k g: grid (rows, cols) -> RF raster (lines, samples)."""
        if self._splat is None:
            raster = grid_values.T
        else:
            flat = self._splat @ grid_values.ravel()
            raster = flat.reshape(self.config.samples_per_line,
                                  self.config.n_lines).T
        out = self._conv.forward(np.ascontiguousarray(raster))
        return out if self._mask is None else out * self._mask

    def adjoint(self, rf: np.ndarray) -> np.ndarray:
        """H_k^T f: RF raster -> grid."""
        if self._mask is not None:
            rf = rf * self._mask
        raster = self._conv.adjoint(rf)
        if self._splat is None:
            return np.ascontiguousarray(raster.T)
        flat = self._splat.T @ raster.T.ravel()
        return flat.reshape(self.grid_spec.rows, self.grid_spec.cols)


def build_view_system(psf: PSFStack, config: ImagingConfig, steer_deg: float,
                      observation_rf: np.ndarray, rotate_deg: float = 0.0,
                      upsample: int = 1,
                      grid_spec: GridSpec | None = None) -> ViewSystem:
    """Construct one view's operator/adjoint pair around an RF-domain
    observation (noise plays no role in the operator)."""
    return ViewSystem(psf, config, observation_rf, steer_deg, rotate_deg,
                      upsample, grid_spec)


def lambda_max_estimate(views: list[ViewSystem]) -> float:
    """Smallest lambda for which g = 0 is optimal (estimate): the largest
    positive component of sum_k H_k^T sign(f_k)."""
    acc = None
    for v in views:
        t = v.adjoint(np.sign(v.observation))
        acc = t if acc is None else acc + t
    return float(max(acc.max(), 0.0))


def _cg_solve(apply_a, b: np.ndarray, x0: np.ndarray, iters: int,
              rel_tol: float = 1e-10) -> np.ndarray:
    """Conjugate gradient for SPD apply_a(x) = b, warm-started at x0."""
    x = x0.copy()
    r = b - apply_a(x)
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    b_norm = math.sqrt(float(np.vdot(b, b).real)) + 1e-300
    for _ in range(iters):
        if math.sqrt(rs) <= rel_tol * b_norm:
            break
        ap = apply_a(p)
        denom = float(np.vdot(p, ap).real)
        if not math.isfinite(denom) or denom <= 0.0:
            raise NumericalError(f"CG breakdown: p^T A p = {denom}")
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not np.all(np.isfinite(x)):
        raise NumericalError("CG produced non-finite values")
    return x


def _soft(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def objective_value(views: list[ViewSystem], g: np.ndarray, lam: float) -> float:
    """F(g) = sum_k ||H_k g - f_k||_1 + lambda ||g||_1."""
    total = lam * float(np.abs(g).sum())
    for v in views:
        total += float(np.abs(v.apply(g) - v.observation).sum())
    return total


def scatrec(views: list[ViewSystem],
            params: AdmmParams) -> tuple[ScatterGrid, ConvergenceReport]:
    """ADMM solve of the stacked L1-L1 problem over the given views.

    Returns the consensus iterate (exactly nonnegative) as a grid clamped
    to [0, 1] at export, plus the convergence trace. All-zero
    observations yield the exact zero solution.
    """
    if not views:
        raise ParameterError("at least one view is required")
    spec = views[0].grid_spec
    if any(v.grid_spec != spec for v in views):
        raise ParameterError("all views must share the unknown's dimensions")
    lam = params.lam if params.lam is not None \
        else max(DEFAULT_LAMBDA_REL * lambda_max_estimate(views), 1e-12)
    rho = params.rho

    shape = (spec.rows, spec.cols)
    g = np.zeros(shape)
    z = np.zeros(shape)
    v_dual = np.zeros(shape)
    r = [np.zeros_like(w.observation) for w in views]
    u = [np.zeros_like(w.observation) for w in views]

    def normal_op(x):
        out = x.copy()
        for w in views:
            out += w.adjoint(w.apply(x))
        return out

    report = ConvergenceReport(lambda_used=lam)
    for _ in range(params.max_iter):
        # (1) g-update: least-squares consensus of data and z copies.
        rhs = z - v_dual
        for w, rk, uk in zip(views, r, u):
            rhs += w.adjoint(w.observation + rk - uk)
        g = _cg_solve(normal_op, rhs, g, params.cg_iters)
        hg = [w.apply(g) for w in views]
        # (2) r-update: soft-threshold the data-residual copies.
        r_prev = r
        r = [_soft(h - w.observation + uk, 1.0 / rho)
             for h, w, uk in zip(hg, views, u)]
        # (3) z-update: soft-threshold then project onto g >= 0.
        z_prev = z
        z = np.maximum(g + v_dual - lam / rho, 0.0)
        # (4) dual ascent.
        for uk, h, w, rk in zip(u, hg, views, r):
            uk += h - w.observation - rk
        v_dual += g - z

        prim_sq = float(np.sum((g - z) ** 2))
        prim_scale_sq = float(np.sum(g**2)) + float(np.sum(z**2))
        for h, w, rk in zip(hg, views, r):
            prim_sq += float(np.sum((h - w.observation - rk) ** 2))
            prim_scale_sq += float(np.sum(h**2)) + float(np.sum((rk + w.observation) ** 2))
        dual_vec = (z - z_prev).copy()
        for w, rk, rp in zip(views, r, r_prev):
            dual_vec += w.adjoint(rk - rp)
        dual_norm = rho * math.sqrt(float(np.sum(dual_vec**2)))
        dual_scale = rho * math.sqrt(float(np.sum(v_dual**2)) + sum(
            float(np.sum(uk**2)) for uk in u)) + 1e-12
        prim_norm = math.sqrt(prim_sq)
        prim_scale = math.sqrt(prim_scale_sq) + 1e-12

        obj = objective_value(views, z, lam)
        if not math.isfinite(obj):
            raise NumericalError("objective became non-finite")
        report.objective.append(obj)
        report.primal_residual.append(prim_norm)
        report.dual_residual.append(dual_norm)
        if (prim_norm <= params.tol_primal * prim_scale
                and dual_norm <= params.tol_dual * dual_scale):
            report.converged = True
            break

    report.clip_fraction = float(np.mean(z > 1.0)) if z.size else 0.0
    out = np.clip(z, 0.0, 1.0)
    return ScatterGrid.from_spec(spec, out), report


def demodulate_to_rf(bmode: BModeImage, config: ImagingConfig) -> np.ndarray:
    """Invert the log compression of a B-mode image back to an envelope
    observation (unit peak scale): env = 10^(dr*(b-1)/20). Matching
    against such observations happens in the envelope domain."""
    dr = bmode.dynamic_range_db
    return np.power(10.0, dr * (bmode.values - 1.0) / 20.0)


def _carrier_phase(config: ImagingConfig, n_samples: int) -> np.ndarray:
    t = (np.arange(n_samples) + 0.5) / config.fs_hz
    return 2.0 * math.pi * config.f0_hz * t


def _swept_grid_spec(config: ImagingConfig, angles: list[float],
                     upsample: int) -> tuple[GridSpec, int, int]:
    """Unknown-grid spec covering the union of all views' rotated
    footprints: the raster spec padded by the maximum boundary motion of
    the rotation sweep. Returns (spec, pad_rows, pad_cols)."""
    base = config.raster_spec().upsampled(upsample)
    theta = max(abs(a) for a in angles)
    if theta == 0.0:
        return base, 0, 0
    half_diag = math.hypot(config.lateral_extent_mm / 2.0,
                           config.depth_mm / 2.0)
    sweep_mm = 2.0 * half_diag * math.sin(math.radians(theta) / 2.0)
    pad_rows = int(math.ceil(sweep_mm / base.dz_mm)) + 1
    pad_cols = int(math.ceil(sweep_mm / base.dx_mm)) + 1
    return base.padded(pad_rows, pad_cols), pad_rows, pad_cols


def reconstruct_from_bmode(bmodes: list[BModeImage], angles_deg,
                           psf: PSFStack, config: ImagingConfig,
                           params: AdmmParams, phase_iters: int = 3,
                           upsample: int = 1,
                           ) -> tuple[ScatterGrid, ConvergenceReport]:
    """Reconstruct a single scatterer grid from one or more B-mode views
    taken at the given probe-rotation angles.

    Log compression is inverted to per-view envelopes; since B-mode
    carries no RF phase, each outer iteration synthesizes pseudo-RF
    observations from the envelopes and the current iterate's
    analytic-signal phase (bootstrapped with the carrier phase), then
    runs the RF-domain ADMM solve. For rotated views the unknown is
    padded to cover the rotation sweep (so every view constrains every
    exported pixel) and cropped back to the raster footprint at the end.
    With an explicit lambda the weight is rescaled by the view count so
    stacked identical views reproduce the single-view solution.
    """
    if not bmodes:
        raise ParameterError("at least one B-mode view is required")
    angles = [float(a) for a in angles_deg]
    if len(angles) != len(bmodes):
        raise ParameterError("one angle per B-mode view is required")
    if phase_iters < 1:
        raise ParameterError("phase_iters must be >= 1")
    envs = [demodulate_to_rf(b, config) for b in bmodes]
    phase0 = _carrier_phase(config, config.samples_per_line)
    pseudo = [e * np.cos(phase0)[np.newaxis, :] for e in envs]
    if params.lam is not None:
        params = AdmmParams(params.lam * len(bmodes), params.rho,
                            params.max_iter, params.tol_primal,
                            params.tol_dual, params.cg_iters)
    spec, pad_rows, pad_cols = _swept_grid_spec(config, angles, upsample)
    grid, report = None, None
    for _ in range(phase_iters):
        views = [build_view_system(psf, config, 0.0, f, rotate_deg=a,
                                   grid_spec=spec)
                 for f, a in zip(pseudo, angles)]
        grid, report = scatrec(views, params)
        g = grid.values.astype(np.float64)
        pseudo = []
        for view, e in zip(views, envs):
            rf = view.apply(g)
            phase = np.angle(hilbert(rf, axis=1))
            pseudo.append(e * np.cos(phase))
    if pad_rows or pad_cols:
        base = config.raster_spec().upsampled(upsample)
        cropped = grid.values[pad_rows:pad_rows + base.rows,
                              pad_cols:pad_cols + base.cols]
        grid = ScatterGrid.from_spec(base, cropped)
    return grid, report
