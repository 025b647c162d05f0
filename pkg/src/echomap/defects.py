"""Shared defect vocabulary: class names, zone layout, and rectangular defect regions.

Slabs are laid out with the longitudinal axis (x, inches) split into four
equal-width zones, one seeded defect class per zone. Class label indices
follow zone order left to right.
"""

from __future__ import annotations

from dataclasses import dataclass

CLASS_NAMES = ("shallow_delam", "honeycomb", "void", "deep_delam")

DISPLAY_NAMES = {
    "shallow_delam": "Shallow Delamination",
    "honeycomb": "Honeycombing",
    "void": "Void",
    "deep_delam": "Deep Delamination",
}

# Short column headers for report tables, in label order.
SHORT_NAMES = {name: f"D{i + 1}" for i, name in enumerate(CLASS_NAMES)}

LABEL_OF = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class DefectRect:
    """Axis-aligned defect region, top-left corner plus size, in inches."""

    x_in: float
    y_in: float
    w_in: float
    h_in: float
    cls: str

    def __post_init__(self):
        if self.w_in <= 0 or self.h_in <= 0:
            raise ValueError(f"defect rect must have positive size, got {self.w_in}x{self.h_in}")
        if self.cls not in CLASS_NAMES:
            raise ValueError(f"unknown defect class {self.cls!r}, expected one of {CLASS_NAMES}")

    def contains(self, x: float, y: float) -> bool:
        # Half-open on the far edges so adjacent rects never double-claim a point.
        return (self.x_in <= x < self.x_in + self.w_in) and (self.y_in <= y < self.y_in + self.h_in)

    def inside(self, width_in: float, height_in: float) -> bool:
        return (
            self.x_in >= 0
            and self.y_in >= 0
            and self.x_in + self.w_in <= width_in
            and self.y_in + self.h_in <= height_in
        )

    def to_dict(self) -> dict:
        return {"x_in": self.x_in, "y_in": self.y_in, "w_in": self.w_in, "h_in": self.h_in, "class": self.cls}

    @classmethod
    def from_dict(cls, d: dict) -> "DefectRect":
        return cls(x_in=d["x_in"], y_in=d["y_in"], w_in=d["w_in"], h_in=d["h_in"], cls=d["class"])


def zone_bounds(width_in: float = 120.0) -> list[tuple[str, float, float]]:
    """Four (class, x_lo, x_hi) zones of equal width covering [0, width_in]."""
    quarter = width_in / 4.0
    return [(name, i * quarter, (i + 1) * quarter) for i, name in enumerate(CLASS_NAMES)]


def zone_of(x: float, width_in: float = 120.0) -> str:
    """Class of the zone containing longitudinal coordinate x (half-open [lo, hi))."""
    quarter = width_in / 4.0
    idx = int(x // quarter)
    idx = min(max(idx, 0), 3)
    return CLASS_NAMES[idx]
