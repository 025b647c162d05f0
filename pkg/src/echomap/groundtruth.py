"""Binary ground-truth masks from seeded defect rects, and validation of clustered detections.

Mask convention follows the lab drawings: cell value 0 = defect, 1 = intact,
one cell per inch by default. Where a plain binary array is passed instead
of a mask (predictions), True/1 means defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .defects import DefectRect, zone_bounds


@dataclass
class GroundTruthMask:
    """Inch-resolution binary defect map (0 = defect, 1 = intact)."""

    cells: np.ndarray  # shape (rows, cols) = (height/res, width/res)
    resolution_in: float
    width_in: float
    height_in: float
    rects: list[DefectRect] = field(default_factory=list)

    @property
    def defect_cells(self) -> np.ndarray:
        return self.cells == 0


@dataclass(frozen=True)
class OverlayMetrics:
    valid_points: int
    overlap_pct: float
    iou: float
    precision: float
    recall: float
    f1: float


def build_mask(
    rects: list[DefectRect],
    width_in: float = 120.0,
    height_in: float = 40.0,
    resolution_in: float = 1.0,
) -> GroundTruthMask:
    """Rasterize defect rects: a cell is 0 iff its center lies inside any rect."""
    cols = int(round(width_in / resolution_in))
    rows = int(round(height_in / resolution_in))
    for r in rects:
        if not r.inside(width_in, height_in):
            raise ValueError(f"defect rect {r} out of bounds {width_in}x{height_in}")
    xs = (np.arange(cols) + 0.5) * resolution_in
    ys = (np.arange(rows) + 0.5) * resolution_in
    cx, cy = np.meshgrid(xs, ys)
    defect = np.zeros((rows, cols), dtype=bool)
    for r in rects:
        defect |= (cx >= r.x_in) & (cx < r.x_in + r.w_in) & (cy >= r.y_in) & (cy < r.y_in + r.h_in)
    cells = np.where(defect, 0, 1).astype(np.int8)
    return GroundTruthMask(cells=cells, resolution_in=resolution_in, width_in=width_in, height_in=height_in,
                           rects=list(rects))


def point_in_defect(mask: GroundTruthMask, x_in: float, y_in: float) -> bool:
    """True iff the cell containing (x, y) is a defect cell."""
    if not (0.0 <= x_in < mask.width_in and 0.0 <= y_in < mask.height_in):
        raise ValueError(f"point ({x_in}, {y_in}) outside mask extent "
                         f"[0, {mask.width_in}) x [0, {mask.height_in})")
    c = int(x_in / mask.resolution_in)
    r = int(y_in / mask.resolution_in)
    return mask.cells[r, c] == 0


def _defect_array(m) -> np.ndarray:
    if isinstance(m, GroundTruthMask):
        return m.defect_cells
    return np.asarray(m).astype(bool)


def iou(pred, gt) -> float:
    """Intersection over union of defect cells; 0 when the union is empty."""
    a = _defect_array(pred)
    b = _defect_array(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def precision_recall_f1(pred, gt) -> OverlayMetrics:
    """Cell-wise detection metrics over defect cells; empty prediction gives P = R = F1 = 0."""
    a = _defect_array(pred)
    b = _defect_array(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    tp = int(np.count_nonzero(a & b))
    fp = int(np.count_nonzero(a & ~b))
    fn = int(np.count_nonzero(~a & b))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return OverlayMetrics(valid_points=tp, overlap_pct=precision, iou=iou(a, b),
                          precision=precision, recall=recall, f1=f1)


def rasterize_points(points, mask: GroundTruthMask, radius_in: float) -> np.ndarray:
    """Dilate point detections to discs on the mask raster (True = predicted defect).

    A cell counts as predicted iff its center lies within ``radius_in`` of any
    point. Points are (x_in, y_in) pairs or objects with those attributes.
    """
    coords = _point_coords(points)
    rows, cols = mask.cells.shape
    pred = np.zeros((rows, cols), dtype=bool)
    if not coords.size:
        return pred
    xs = (np.arange(cols) + 0.5) * mask.resolution_in
    ys = (np.arange(rows) + 0.5) * mask.resolution_in
    cx, cy = np.meshgrid(xs, ys)
    r2 = radius_in * radius_in
    for px, py in coords:
        pred |= (cx - px) ** 2 + (cy - py) ** 2 <= r2
    return pred


def _point_coords(points) -> np.ndarray:
    out = []
    for p in points:
        if hasattr(p, "x_in"):
            out.append((p.x_in, p.y_in))
        else:
            out.append((p[0], p[1]))
    return np.array(out, dtype=float).reshape(-1, 2)


def grid_pitch(points) -> float:
    """Largest axis spacing of a regular scan grid (for the dilation radius)."""
    coords = _point_coords(points)
    pitches = []
    for axis in (0, 1):
        vals = np.unique(coords[:, axis])
        if len(vals) > 1:
            pitches.append(float(np.median(np.diff(vals))))
    if not pitches:
        return 1.0
    return max(pitches)


def overlay(
    defective,
    mask: GroundTruthMask,
    grid_points=None,
    dilation_radius_in: float | None = None,
) -> tuple[list, OverlayMetrics]:
    """Validate clustered defective points against the ground-truth mask.

    Returns the points that fall inside defect cells plus point/area metrics:
    overlap percent (= point precision), rasterized IoU, and recall over the
    defect cells that the scan grid can actually reach (cells holding at
    least one grid point; pass the full reading set as ``grid_points``).
    """
    defective = list(defective)
    if not defective:
        return [], OverlayMetrics(0, 0.0, 0.0, 0.0, 0.0, 0.0)

    valid = [p for p in defective if point_in_defect(mask, *_point_coords([p])[0])]
    overlap_pct = len(valid) / len(defective)

    if dilation_radius_in is None:
        src = grid_points if grid_points is not None else defective
        dilation_radius_in = grid_pitch(src) / 2.0
    pred = rasterize_points(defective, mask, dilation_radius_in)
    area_iou = iou(pred, mask)

    gt_defect = mask.defect_cells
    if grid_points is not None:
        reachable = _cells_with_points(grid_points, mask) & gt_defect
    else:
        reachable = gt_defect
    covered = _cells_with_points(valid, mask) & gt_defect
    n_reach = int(np.count_nonzero(reachable))
    recall = int(np.count_nonzero(covered)) / n_reach if n_reach else 0.0

    precision = overlap_pct
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return valid, OverlayMetrics(valid_points=len(valid), overlap_pct=overlap_pct, iou=area_iou,
                                 precision=precision, recall=recall, f1=f1)


def _cells_with_points(points, mask: GroundTruthMask) -> np.ndarray:
    hit = np.zeros(mask.cells.shape, dtype=bool)
    for x, y in _point_coords(points):
        if 0.0 <= x < mask.width_in and 0.0 <= y < mask.height_in:
            hit[int(y / mask.resolution_in), int(x / mask.resolution_in)] = True
    return hit


# ---------------------------------------------------------------------------
# Overlay rendering: defect cells red, intact blue, clustered points yellow,
# validated points white with black edge.
# ---------------------------------------------------------------------------

_OVERLAY_COLORS = {"defect": "#d62728", "intact": "#aec7e8", "cluster": "#ffdf00", "valid": "#ffffff"}


def render_overlay_svg(mask: GroundTruthMask, cluster_points, valid_points, path: str | Path,
                       scale_px: float = 6.0):
    """Write a deterministic SVG overlay of mask cells and detection points."""
    rows, cols = mask.cells.shape
    w_px = cols * mask.resolution_in * scale_px
    h_px = rows * mask.resolution_in * scale_px
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0f}" height="{h_px:.0f}" '
        f'viewBox="0 0 {w_px:.0f} {h_px:.0f}">',
        f'<rect width="{w_px:.0f}" height="{h_px:.0f}" fill="{_OVERLAY_COLORS["intact"]}"/>',
    ]
    cell_px = mask.resolution_in * scale_px
    for r, c in zip(*np.nonzero(mask.defect_cells)):
        lines.append(
            f'<rect x="{c * cell_px:.2f}" y="{r * cell_px:.2f}" width="{cell_px:.2f}" '
            f'height="{cell_px:.2f}" fill="{_OVERLAY_COLORS["defect"]}"/>'
        )
    for name, lo, hi in zone_bounds(mask.width_in)[1:]:
        x = lo * scale_px
        lines.append(f'<line x1="{x:.2f}" y1="0" x2="{x:.2f}" y2="{h_px:.2f}" stroke="#444444" stroke-width="1"/>')
    for x, y in _point_coords(cluster_points):
        lines.append(f'<circle cx="{x * scale_px:.2f}" cy="{y * scale_px:.2f}" r="{0.45 * scale_px:.2f}" '
                     f'fill="{_OVERLAY_COLORS["cluster"]}"/>')
    for x, y in _point_coords(valid_points):
        lines.append(f'<circle cx="{x * scale_px:.2f}" cy="{y * scale_px:.2f}" r="{0.3 * scale_px:.2f}" '
                     f'fill="{_OVERLAY_COLORS["valid"]}" stroke="#000000" stroke-width="1"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def mask_to_json(mask: GroundTruthMask) -> dict:
    return {
        "resolution_in": mask.resolution_in,
        "width_in": mask.width_in,
        "height_in": mask.height_in,
        "rects": [r.to_dict() for r in mask.rects],
    }
