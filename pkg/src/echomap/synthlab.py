"""Synthetic slab generator: seeded defect layouts and physics-inspired impact-echo waveforms.

Each scan point gets a target resonance frequency drawn from the band of the
defect class under it (or the intact band), modulated by a smooth per-slab
spatial texture so that neighboring points have correlated values. The
waveform at a point is an exponentially damped sinusoid at that frequency
plus white noise, so its magnitude spectrum has a single dominant peak.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .defects import CLASS_NAMES, DefectRect
from . import groundtruth

DEFAULT_SAMPLE_RATE_HZ = 200_000.0
DEFAULT_N_SAMPLES = 1024

DEFAULT_INTACT_BAND = (9.5, 15.0)
DEFAULT_BAND_TABLE = {
    "shallow_delam": (4.5, 6.0),
    "honeycomb": (3.5, 5.0),
    "void": (3.0, 4.5),
    "deep_delam": (5.0, 6.5),
}

# Injected artifact readings: very high (stiff inclusion / coupling) or very low peaks.
HIGH_OUTLIER_BAND = (15.0, 18.0)
LOW_OUTLIER_BAND = (0.3, 1.0)

# Within-band spatial texture: plane-wave modes whose wavelengths sit a few
# grid pitches above the scan spacing, so neighboring readings stay correlated
# while the map still shows pockets; plus iid jitter (fraction of band width).
# Wave vectors are biased toward the lateral (y) axis: serpentine streams fold
# in x, so lateral gradients are what preserves continuity along a sequence.
TEXTURE_MODES = 4
TEXTURE_WAVELENGTH_IN = (25.0, 50.0)
TEXTURE_THETA_SPREAD = 0.4  # radians around the y axis
TEXTURE_JITTER = 0.02


@dataclass(frozen=True)
class Waveform:
    """One impact-echo time trace at a scan point."""

    samples: np.ndarray
    sample_rate_hz: float
    x_in: float
    y_in: float
    point_id: str


@dataclass
class SlabSpec:
    """Geometry, defect layout, frequency bands, and noise model of one synthetic slab."""

    width_in: float = 120.0
    height_in: float = 40.0
    grid_cols: int = 28
    grid_rows: int = 9
    defects: list[DefectRect] = field(default_factory=lambda: default_gtm_layout())
    band_table: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BAND_TABLE))
    intact_band: tuple[float, float] = DEFAULT_INTACT_BAND
    noise_rms: float = 0.2
    outlier_rate: float = 0.02
    seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    n_samples: int = DEFAULT_N_SAMPLES

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.grid_cols * self.grid_rows <= 0:
            raise ValueError("grid must have at least one point")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError(f"outlier_rate must be in [0,1], got {self.outlier_rate}")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be non-negative")
        if self.n_samples < 64 or self.n_samples & (self.n_samples - 1):
            raise ValueError("n_samples must be a power of two >= 64")
        bands = list(self.band_table.values()) + [self.intact_band]
        for lo, hi in bands:
            if not lo < hi:
                raise ValueError(f"band must have low < high, got ({lo}, {hi})")
        top_khz = max(hi for _, hi in bands)
        if self.sample_rate_hz <= 2 * top_khz * 1000.0:
            raise ValueError("sample rate must exceed twice the highest band edge")
        for rect in self.defects:
            if not rect.inside(self.width_in, self.height_in):
                raise ValueError(f"defect rect {rect} outside slab bounds")
        _reject_cross_class_overlap(self.defects)

    @property
    def bin_width_khz(self) -> float:
        return self.sample_rate_hz / self.n_samples / 1000.0

    def to_dict(self) -> dict:
        return {
            "width_in": self.width_in,
            "height_in": self.height_in,
            "grid_cols": self.grid_cols,
            "grid_rows": self.grid_rows,
            "defects": [r.to_dict() for r in self.defects],
            "band_table": {k: list(v) for k, v in self.band_table.items()},
            "intact_band": list(self.intact_band),
            "noise_rms": self.noise_rms,
            "outlier_rate": self.outlier_rate,
            "seed": self.seed,
            "sample_rate_hz": self.sample_rate_hz,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlabSpec":
        return cls(
            width_in=d["width_in"],
            height_in=d["height_in"],
            grid_cols=d["grid_cols"],
            grid_rows=d["grid_rows"],
            defects=[DefectRect.from_dict(r) for r in d["defects"]],
            band_table={k: tuple(v) for k, v in d["band_table"].items()},
            intact_band=tuple(d["intact_band"]),
            noise_rms=d["noise_rms"],
            outlier_rate=d["outlier_rate"],
            seed=d["seed"],
            sample_rate_hz=d["sample_rate_hz"],
            n_samples=d["n_samples"],
        )


def _reject_cross_class_overlap(rects: list[DefectRect]):
    for i, a in enumerate(rects):
        for b in rects[i + 1 :]:
            if a.cls == b.cls:
                continue
            dx = min(a.x_in + a.w_in, b.x_in + b.w_in) - max(a.x_in, b.x_in)
            dy = min(a.y_in + a.h_in, b.y_in + b.h_in) - max(a.y_in, b.y_in)
            if dx > 0 and dy > 0:
                raise ValueError(f"defect rects of different classes overlap: {a.cls} and {b.cls}")


def default_gtm_layout(
    width_in: float = 120.0, height_in: float = 40.0, rect_size_in: float = 12.0
) -> list[DefectRect]:
    """One square defect per class, centered in its quarter-width zone."""
    quarter = width_in / 4.0
    y0 = (height_in - rect_size_in) / 2.0
    rects = []
    for i, name in enumerate(CLASS_NAMES):
        cx = i * quarter + quarter / 2.0
        rects.append(DefectRect(x_in=cx - rect_size_in / 2.0, y_in=y0, w_in=rect_size_in, h_in=rect_size_in, cls=name))
    return rects


def grid_points(spec: SlabSpec) -> list[tuple[str, float, float]]:
    """(point_id, x_in, y_in) for every scan point, row-major, at cell centers."""
    dx = spec.width_in / spec.grid_cols
    dy = spec.height_in / spec.grid_rows
    pts = []
    i = 0
    for r in range(spec.grid_rows):
        for c in range(spec.grid_cols):
            pts.append((f"p{i:04d}", (c + 0.5) * dx, (r + 0.5) * dy))
            i += 1
    return pts


class _SlabTexture:
    """Smooth random surface built from a few plane-wave modes.

    Controls where inside its band each point's resonance lands, so nearby
    points get similar values (spatial continuity of the peak-frequency map).
    """

    def __init__(self, rng: np.random.Generator, width_in: float, height_in: float):
        del width_in, height_in  # wavelengths are absolute, independent of slab size
        self.amps = rng.uniform(0.5, 1.0, TEXTURE_MODES) * (0.8 ** np.arange(TEXTURE_MODES))
        lam = rng.uniform(*TEXTURE_WAVELENGTH_IN, TEXTURE_MODES)
        theta = np.pi / 2 + rng.uniform(-TEXTURE_THETA_SPREAD, TEXTURE_THETA_SPREAD, TEXTURE_MODES)
        self.kx = np.cos(theta) / lam
        self.ky = np.sin(theta) / lam
        self.phase = rng.uniform(0.0, 2 * np.pi, TEXTURE_MODES)

    def raw(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(x, dtype=float)
        for a, kx, ky, ph in zip(self.amps, self.kx, self.ky, self.phase):
            acc += a * np.sin(2 * np.pi * (kx * x + ky * y) + ph)
        return acc


@dataclass(frozen=True)
class PointAssignment:
    """Ground-truth target for one scan point before waveform synthesis."""

    point_id: str
    x_in: float
    y_in: float
    band: str  # class name, "intact", or "outlier_high"/"outlier_low"
    f_peak_khz: float


def assign_peak_frequencies(spec: SlabSpec, rng: np.random.Generator) -> list[PointAssignment]:
    """Pick the target resonance for every grid point.

    Points under a defect rect draw from that class's band, others from the
    intact band; draws are inset from the band edges by one DFT bin so the
    extracted bin-center peak always stays inside the declared band. A point
    is replaced by an artifact reading with probability ``outlier_rate``.
    """
    pts = grid_points(spec)
    xs = np.array([p[1] for p in pts])
    ys = np.array([p[2] for p in pts])
    texture = _SlabTexture(rng, spec.width_in, spec.height_in)
    raw = texture.raw(xs, ys)
    lo, hi = raw.min(), raw.max()
    smooth = np.full_like(raw, 0.5) if hi <= lo else (raw - lo) / (hi - lo)

    inset = spec.bin_width_khz
    out = []
    for (pid, x, y), s in zip(pts, smooth):
        band_name = "intact"
        band = spec.intact_band
        for rect in spec.defects:
            if rect.contains(x, y):
                band_name = rect.cls
                band = spec.band_table[rect.cls]
                break
        u = float(np.clip(s + rng.normal(0.0, TEXTURE_JITTER), 0.0, 1.0))
        b_lo, b_hi = band[0] + inset, band[1] - inset
        f = b_lo + (b_hi - b_lo) * u
        if rng.random() < spec.outlier_rate:
            if rng.random() < 0.5:
                band_name = "outlier_high"
                f = rng.uniform(*HIGH_OUTLIER_BAND)
            else:
                band_name = "outlier_low"
                f = rng.uniform(*LOW_OUTLIER_BAND)
        out.append(PointAssignment(point_id=pid, x_in=x, y_in=y, band=band_name, f_peak_khz=float(f)))
    return out


def synth_waveform(
    f_peak_khz: float,
    spec: SlabSpec,
    rng: np.random.Generator,
    x_in: float = 0.0,
    y_in: float = 0.0,
    point_id: str = "p0000",
) -> Waveform:
    """Damped sinusoid at the target frequency plus white noise.

    The decay constant puts the envelope at 1/e of its initial amplitude by
    mid-record, concentrating the spectrum into a single dominant peak much
    narrower than one DFT bin.
    """
    nyquist_khz = spec.sample_rate_hz / 2000.0
    if not 0.0 < f_peak_khz < nyquist_khz:
        raise ValueError(f"f_peak {f_peak_khz} kHz outside (0, {nyquist_khz}) kHz")
    t = np.arange(spec.n_samples) / spec.sample_rate_hz
    tau = spec.n_samples / spec.sample_rate_hz / 2.0
    signal = np.exp(-t / tau) * np.sin(2 * np.pi * f_peak_khz * 1000.0 * t)
    if spec.noise_rms > 0:
        signal = signal + rng.normal(0.0, spec.noise_rms, spec.n_samples)
    return Waveform(samples=signal, sample_rate_hz=spec.sample_rate_hz, x_in=x_in, y_in=y_in, point_id=point_id)


def synth_slab(spec: SlabSpec) -> tuple[list[Waveform], "groundtruth.GroundTruthMask"]:
    """All waveforms of one slab (row-major grid order) plus its ground-truth mask."""
    rng = np.random.default_rng(spec.seed)
    assignments = assign_peak_frequencies(spec, rng)
    waves = [
        synth_waveform(a.f_peak_khz, spec, rng, x_in=a.x_in, y_in=a.y_in, point_id=a.point_id)
        for a in assignments
    ]
    mask = groundtruth.build_mask(spec.defects, spec.width_in, spec.height_in)
    return waves, mask


# ---------------------------------------------------------------------------
# On-disk formats. Waveform corpus CSV: point_id,x_in,y_in,sample_rate_hz,s0,s1,...
# Slab spec: plain JSON of SlabSpec.to_dict().
# ---------------------------------------------------------------------------


def write_waveforms_csv(waves: list[Waveform], path: str | Path):
    path = Path(path)
    n = len(waves[0].samples) if waves else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "x_in", "y_in", "sample_rate_hz"] + [f"s{i}" for i in range(n)])
        for w in waves:
            if len(w.samples) != n:
                raise ValueError("all waveforms in a corpus must have equal length")
            writer.writerow([w.point_id, repr(w.x_in), repr(w.y_in), repr(w.sample_rate_hz)]
                            + [repr(float(s)) for s in w.samples])


def read_waveforms_csv(path: str | Path) -> list[Waveform]:
    waves = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["point_id", "x_in", "y_in", "sample_rate_hz"]:
            raise ValueError(f"unrecognized waveform CSV header in {path}")
        for row in reader:
            waves.append(
                Waveform(
                    samples=np.array([float(v) for v in row[4:]]),
                    sample_rate_hz=float(row[3]),
                    x_in=float(row[1]),
                    y_in=float(row[2]),
                    point_id=row[0],
                )
            )
    return waves


def write_slab_spec(spec: SlabSpec, path: str | Path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def read_slab_spec(path: str | Path) -> SlabSpec:
    return SlabSpec.from_dict(json.loads(Path(path).read_text()))


def with_seed(spec: SlabSpec, seed: int) -> SlabSpec:
    return replace(spec, seed=seed)
