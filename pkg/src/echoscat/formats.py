"""Bit-exact on-disk formats.

.sgrid  one ASCII header line
            SGRID v1 <rows> <cols> <dz_mm> <dx_mm> <origin_x_mm> <origin_z_mm>
        optionally followed on the same line by " # <comment>", then
        rows*cols little-endian IEEE-754 float32 values, row-major.

.scat   UTF-8 CSV of scatterer points. An optional leading
        "# domain x0 x1 y0 y1 z0 z2" comment records the cloud bounds;
        then the header "x_mm,y_mm,z_mm,amp" and one point per row,
        decimal notation with up to 9 significant digits.

.pgm    binary 8-bit PGM ("P5", maxval 255) export of B-mode images,
        pixel = round(255 * b), rows axial / columns lateral.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import FormatError
from .types import BModeImage, Domain, ScatterGrid, ScattererCloud

_GRID_MAGIC = "SGRID"
_GRID_VERSION = "v1"
_CLOUD_HEADER = "x_mm,y_mm,z_mm,amp"

# Boundary slack when re-checking domain containment of 9-digit decimals.
_CLOUD_EDGE_TOL = 1e-5


def save_grid(grid: ScatterGrid, path, comment: str | None = None) -> None:
    """Write a ScatterGrid to `path` in the .sgrid format.

    The round trip load_grid(save_grid(g)) reproduces g bit-exactly.
    `comment` is appended to the header line after a '#' and ignored by
    the loader.
    """
    header = (f"{_GRID_MAGIC} {_GRID_VERSION} {grid.rows} {grid.cols} "
              f"{grid.dz_mm!r} {grid.dx_mm!r} "
              f"{grid.origin_mm[0]!r} {grid.origin_mm[1]!r}")
    if comment is not None:
        header += f" # {comment}"
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(payload)


def load_grid(path) -> ScatterGrid:
    """Read a .sgrid file, validating header, payload length, and range."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        text = header.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII") from exc
    text = text.split("#", 1)[0].strip()
    fields = text.split()
    if len(fields) != 8 or fields[0] != _GRID_MAGIC or fields[1] != _GRID_VERSION:
        raise FormatError(f"{path}: malformed header {text!r}")
    try:
        rows, cols = int(fields[2]), int(fields[3])
        dz, dx = float(fields[4]), float(fields[5])
        ox, oz = float(fields[6]), float(fields[7])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field: {exc}") from exc
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: header rows/cols must be positive")
    expected = rows * cols * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} bytes does not match "
            f"header rows*cols ({rows}x{cols} -> {expected} bytes)")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: field 'values' contains non-finite entries")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise FormatError(
            f"{path}: field 'values' out of range [0, 1]: "
            f"min={values.min()}, max={values.max()}")
    try:
        return ScatterGrid(rows, cols, dz, dx, values, (ox, oz))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_cloud(cloud: ScattererCloud, path) -> None:
    """Write a ScattererCloud to `path` in the .scat CSV format."""
    d = cloud.domain
    buf = io.StringIO()
    buf.write(f"# domain {d.x_min!r} {d.x_max!r} {d.y_min!r} {d.y_max!r} "
              f"{d.z_min!r} {d.z_max!r}\n")
    buf.write(_CLOUD_HEADER + "\n")
    for (x, y, z), a in zip(cloud.positions, cloud.amplitudes):
        buf.write(f"{x:.9g},{y:.9g},{z:.9g},{a:.9g}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_cloud(path) -> ScattererCloud:
    """Read a .scat file; points round-trip within float32 precision."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    domain = None
    idx = 0
    if lines and lines[0].startswith("#"):
        tokens = lines[0][1:].split()
        if len(tokens) == 7 and tokens[0] == "domain":
            try:
                domain = Domain(*(float(t) for t in tokens[1:]))
            except ValueError as exc:
                raise FormatError(f"{path}: bad domain comment: {exc}") from exc
        idx = 1
    if idx >= len(lines) or lines[idx].strip() != _CLOUD_HEADER:
        raise FormatError(f"{path}: missing header '{_CLOUD_HEADER}'")
    rows = []
    for n, line in enumerate(lines[idx + 1:], start=idx + 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"{path}:{n}: expected 4 fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: non-numeric field: {exc}") from exc
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    pos, amp = data[:, :3], data[:, 3]
    if amp.size and (amp.min() < 0.0 or amp.max() > 1.0):
        raise FormatError(
            f"{path}: field 'amp' out of range [0, 1]: "
            f"min={amp.min() if amp.size else 0}, max={amp.max() if amp.size else 0}")
    if domain is None:
        if pos.size:
            domain = Domain(pos[:, 0].min(), pos[:, 0].max(),
                            pos[:, 1].min(), pos[:, 1].max(),
                            pos[:, 2].min(), pos[:, 2].max())
        else:
            domain = Domain(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if pos.size:
        # 9-digit decimals may round points just past a domain edge; snap
        # them back within a float32-scale tolerance.
        lo = np.array([domain.x_min, domain.y_min, domain.z_min])
        hi = np.array([domain.x_max, domain.y_max, domain.z_max])
        tol = _CLOUD_EDGE_TOL * np.maximum(1.0, np.abs(hi - lo))
        outside = (pos < lo - tol) | (pos > hi + tol)
        if np.any(outside):
            bad = int(np.argwhere(outside.any(axis=1))[0, 0])
            raise FormatError(
                f"{path}: point {bad} lies outside the domain comment")
        pos = np.clip(pos, lo, hi)
    try:
        return ScattererCloud(pos, amp, domain)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_pgm(image: BModeImage, path) -> None:
    """Export a B-mode image as binary 8-bit PGM, value = round(255 * b)."""
    img = np.rint(255.0 * image.values.T).astype(np.uint8)  # rows axial
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def grid_from_bmode(image: BModeImage) -> ScatterGrid:
    """Repack a B-mode image as a ScatterGrid raster (rows axial, cols
    lateral) for .sgrid interchange. Values are reduced to float32."""
    from .types import SOUND_SPEED_MM_S

    dz = SOUND_SPEED_MM_S / (2.0 * image.fs_hz)
    x0 = -(image.scanlines - 1) / 2.0 * image.pitch_mm
    values = np.clip(image.values.T.astype(np.float32), 0.0, 1.0)
    return ScatterGrid(image.samples_per_line, image.scanlines, dz,
                       image.pitch_mm, values, (x0, 0.5 * dz))
