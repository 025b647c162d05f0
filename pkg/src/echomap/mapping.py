"""Spatial organization of peak readings: grids, interpolated fields, defect zones, heatmap rendering.

Heatmaps are written as deterministic SVG (one vector cell per field cell)
or binary PPM rasters; both carry a linear min-to-max color legend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from .defects import CLASS_NAMES, zone_bounds
from .spectral import PeakReading


@dataclass
class PeakGrid:
    """Row-major regular grid of peak readings with the slab extent they cover."""

    rows: int
    cols: int
    readings: list[PeakReading]
    width_in: float
    height_in: float

    def xs(self) -> np.ndarray:
        return np.array([r.x_in for r in self.readings[: self.cols]])

    def ys(self) -> np.ndarray:
        return np.array([self.readings[i * self.cols].y_in for i in range(self.rows)])

    def values(self) -> np.ndarray:
        return np.array([r.f_peak_khz for r in self.readings]).reshape(self.rows, self.cols)


@dataclass
class Field:
    """Raster of interpolated peak frequency; NaN marks cells outside the sample hull."""

    values: np.ndarray
    resolution_in: float
    origin_in: tuple[float, float]
    width_in: float
    height_in: float


@dataclass
class Zone:
    """Longitudinal slice of the slab assigned to one defect class."""

    cls: str
    x_lo_in: float
    x_hi_in: float
    readings: list[PeakReading]


def build_grid(readings: list[PeakReading], rows: int, cols: int,
               width_in: float | None = None, height_in: float | None = None) -> PeakGrid:
    """Sort readings into row-major (y, x) order and validate grid regularity."""
    if len(readings) != rows * cols:
        raise ValueError(f"expected {rows * cols} readings for a {rows}x{cols} grid, got {len(readings)}")
    ordered = sorted(readings, key=lambda r: (r.y_in, r.x_in))
    seen = set()
    for r in ordered:
        key = (r.x_in, r.y_in)
        if key in seen:
            raise ValueError(f"duplicate coordinate {key}")
        seen.add(key)
    for i in range(rows):
        row = ordered[i * cols : (i + 1) * cols]
        if len({r.y_in for r in row}) != 1:
            raise ValueError("readings do not form a regular grid (mixed y within a row)")
        rx = [r.x_in for r in row]
        if any(b <= a for a, b in zip(rx, rx[1:])):
            raise ValueError("x coordinates not strictly increasing within a row")
    ys = [ordered[i * cols].y_in for i in range(rows)]
    if any(b <= a for a, b in zip(ys, ys[1:])):
        raise ValueError("y coordinates not strictly increasing across rows")

    if width_in is None:
        xs = [r.x_in for r in ordered[:cols]]
        pitch = xs[1] - xs[0] if cols > 1 else 1.0
        width_in = xs[-1] + pitch / 2.0
    if height_in is None:
        pitch = ys[1] - ys[0] if rows > 1 else 1.0
        height_in = ys[-1] + pitch / 2.0
    return PeakGrid(rows=rows, cols=cols, readings=ordered, width_in=width_in, height_in=height_in)


def infer_grid(readings: list[PeakReading], width_in: float | None = None,
               height_in: float | None = None) -> PeakGrid:
    """build_grid with the row/col counts taken from the distinct coordinates."""
    rows = len({r.y_in for r in readings})
    cols = len({r.x_in for r in readings})
    return build_grid(readings, rows, cols, width_in=width_in, height_in=height_in)


def interp_at(g: PeakGrid, qx: np.ndarray, qy: np.ndarray, method: str = "bilinear") -> np.ndarray:
    """Evaluate the grid interpolant at query points; NaN outside the sample hull."""
    xs, ys, z = g.xs(), g.ys(), g.values()
    if method == "bilinear":
        if g.rows < 2 or g.cols < 2:
            raise ValueError("bilinear interpolation needs at least a 2x2 grid")
        itp = RegularGridInterpolator((ys, xs), z, method="linear", bounds_error=False, fill_value=np.nan)
        return itp(np.column_stack([np.ravel(qy), np.ravel(qx)])).reshape(np.shape(qx))
    if method == "bicubic":
        if g.rows < 4 or g.cols < 4:
            raise ValueError("bicubic interpolation needs at least a 4x4 grid")
        spline = RectBivariateSpline(ys, xs, z, kx=3, ky=3, s=0)
        out = spline(np.ravel(qy), np.ravel(qx), grid=False)
        inside = (
            (np.ravel(qx) >= xs[0]) & (np.ravel(qx) <= xs[-1])
            & (np.ravel(qy) >= ys[0]) & (np.ravel(qy) <= ys[-1])
        )
        out = np.where(inside, out, np.nan)
        return out.reshape(np.shape(qx))
    raise ValueError(f"unknown interpolation method {method!r}")


def interpolate(g: PeakGrid, resolution_in: float = 1.0, method: str = "bilinear") -> Field:
    """Resample the grid onto a raster covering the slab extent at the given cell size."""
    ncols = int(round(g.width_in / resolution_in))
    nrows = int(round(g.height_in / resolution_in))
    fx = (np.arange(ncols) + 0.5) * resolution_in
    fy = (np.arange(nrows) + 0.5) * resolution_in
    qx, qy = np.meshgrid(fx, fy)
    vals = interp_at(g, qx, qy, method=method)
    return Field(values=vals, resolution_in=resolution_in, origin_in=(0.0, 0.0),
                 width_in=g.width_in, height_in=g.height_in)


def split_zones(g: PeakGrid) -> list[Zone]:
    """Partition readings into the four class zones by longitudinal coordinate (half-open)."""
    quarter = g.width_in / 4.0
    buckets: dict[str, list[PeakReading]] = {name: [] for name in CLASS_NAMES}
    for r in g.readings:
        idx = min(3, int(r.x_in // quarter))
        buckets[CLASS_NAMES[idx]].append(r)
    return [Zone(cls=name, x_lo_in=lo, x_hi_in=hi, readings=buckets[name])
            for name, lo, hi in zone_bounds(g.width_in)]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

PALETTES = {
    "spectral": [(10, 20, 160), (20, 160, 235), (50, 200, 120), (250, 220, 40), (200, 20, 20)],
    "gray": [(0, 0, 0), (255, 255, 255)],
}
NO_DATA_COLOR = "#f0f0f0"


def _palette_color(t: float, stops) -> str:
    t = min(max(t, 0.0), 1.0)
    pos = t * (len(stops) - 1)
    i = min(int(pos), len(stops) - 2)
    frac = pos - i
    rgb = [round(stops[i][k] + frac * (stops[i + 1][k] - stops[i][k])) for k in range(3)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _color_scale(values: np.ndarray):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    return lo, hi


def render_heatmap(field: Field, path: str | Path, palette: str = "spectral",
                   vmin: float | None = None, vmax: float | None = None):
    """Write the field as an SVG (default) or PPM (``.ppm`` suffix) heatmap.

    The color scale runs linearly from the field minimum to maximum unless
    ``vmin``/``vmax`` pin a shared scale across slabs. Output bytes are a pure
    function of the inputs.
    """
    path = Path(path)
    stops = PALETTES[palette]
    lo, hi = _color_scale(field.values)
    if vmin is not None:
        lo = vmin
    if vmax is not None:
        hi = vmax
    if path.suffix == ".ppm":
        _render_ppm(field, path, stops, lo, hi)
    else:
        _render_svg(field, path, stops, lo, hi)


def _norm(v: float, lo: float, hi: float) -> float:
    return 0.0 if hi <= lo else (v - lo) / (hi - lo)


def _render_svg(field: Field, path: Path, stops, lo: float, hi: float, scale_px: float = 6.0):
    nrows, ncols = field.values.shape
    cell = field.resolution_in * scale_px
    w_px, h_px = ncols * cell, nrows * cell
    legend_w = 18 * scale_px
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px + legend_w:.0f}" height="{h_px:.0f}" '
        f'viewBox="0 0 {w_px + legend_w:.0f} {h_px:.0f}">',
        f'<rect width="{w_px:.2f}" height="{h_px:.2f}" fill="{NO_DATA_COLOR}"/>',
    ]
    for r in range(nrows):
        for c in range(ncols):
            v = field.values[r, c]
            if not np.isfinite(v):
                continue
            color = _palette_color(_norm(float(v), lo, hi), stops)
            lines.append(f'<rect x="{c * cell:.2f}" y="{r * cell:.2f}" width="{cell:.2f}" '
                         f'height="{cell:.2f}" fill="{color}"/>')
    # Legend: vertical gradient strip with min / mid / max ticks.
    n_seg = 48
    lx = w_px + 4 * scale_px
    seg_h = h_px / n_seg
    for i in range(n_seg):
        t = 1.0 - (i + 0.5) / n_seg
        lines.append(f'<rect x="{lx:.2f}" y="{i * seg_h:.2f}" width="{2 * scale_px:.2f}" '
                     f'height="{seg_h + 0.5:.2f}" fill="{_palette_color(t, stops)}"/>')
    for t, v in ((0.0, lo), (0.5, (lo + hi) / 2.0), (1.0, hi)):
        ty = h_px * (1.0 - t)
        ty = min(max(ty, 8.0), h_px - 2.0)
        lines.append(f'<text x="{lx + 3 * scale_px:.2f}" y="{ty:.2f}" font-size="{2.2 * scale_px:.1f}" '
                     f'font-family="sans-serif">{v:.2f} kHz</text>')
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n")


def _render_ppm(field: Field, path: Path, stops, lo: float, hi: float):
    """P6 raster, one pixel per cell, with a bottom legend strip (ticks at min/mid/max)."""
    nrows, ncols = field.values.shape
    legend_rows = 6
    height = nrows + legend_rows
    buf = bytearray()
    for r in range(nrows):
        for c in range(ncols):
            v = field.values[r, c]
            if np.isfinite(v):
                color = _palette_color(_norm(float(v), lo, hi), stops)
                buf += bytes(int(color[k : k + 2], 16) for k in (1, 3, 5))
            else:
                buf += b"\xf0\xf0\xf0"
    for r in range(legend_rows):
        for c in range(ncols):
            if r >= legend_rows - 2 and min(abs(c - 0), abs(c - (ncols - 1) // 2), abs(c - (ncols - 1))) == 0:
                buf += b"\x00\x00\x00"  # tick marks at min / mid / max positions
            else:
                color = _palette_color(c / max(ncols - 1, 1), stops)
                buf += bytes(int(color[k : k + 2], 16) for k in (1, 3, 5))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{ncols} {height}\n255\n".encode())
        fh.write(bytes(buf))


def field_to_json(field: Field) -> dict:
    values = [[None if not np.isfinite(v) else float(v) for v in row] for row in field.values]
    return {
        "resolution_in": field.resolution_in,
        "origin_in": list(field.origin_in),
        "width_in": field.width_in,
        "height_in": field.height_in,
        "values": values,
    }


def field_from_json(d: dict) -> Field:
    values = np.array([[np.nan if v is None else v for v in row] for row in d["values"]], dtype=float)
    return Field(values=values, resolution_in=d["resolution_in"], origin_in=tuple(d["origin_in"]),
                 width_in=d["width_in"], height_in=d["height_in"])


def write_field_json(field: Field, path: str | Path):
    Path(path).write_text(json.dumps(field_to_json(field), sort_keys=True) + "\n")


def read_field_json(path: str | Path) -> Field:
    return field_from_json(json.loads(Path(path).read_text()))
