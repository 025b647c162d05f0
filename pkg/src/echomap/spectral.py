"""Frequency-domain analysis: detrending, magnitude spectra, and dominant-peak extraction with QA flags."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .synthlab import Waveform

DEFAULT_MIN_KHZ = 0.3  # excludes residual DC leakage from the argmax
HIGH_OUTLIER_KHZ = 15.0
LOW_OUTLIER_KHZ = 1.0
FLAT_RATIO = 3.0

FLAG_HIGH = "HighOutlier"
FLAG_LOW = "LowOutlier"
FLAG_FLAT = "FlatSpectrum"


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum of a single waveform."""

    magnitudes: np.ndarray  # length N/2 + 1
    bin_width_hz: float
    point_id: str
    x_in: float
    y_in: float


@dataclass(frozen=True)
class PeakReading:
    """Dominant peak frequency at a scan point, with QA flags (empty = OK)."""

    x_in: float
    y_in: float
    f_peak_khz: float
    qa: tuple[str, ...] = ()
    point_id: str = ""

    @property
    def is_ok(self) -> bool:
        return not self.qa

    @property
    def qa_label(self) -> str:
        return "|".join(self.qa) if self.qa else "OK"


def detrend(w: Waveform) -> Waveform:
    """Remove the least-squares line, leaving zero mean and zero slope."""
    if len(w.samples) == 0:
        raise ValueError("cannot detrend an empty waveform")
    t = np.arange(len(w.samples), dtype=float)
    slope, intercept = np.polyfit(t, w.samples, 1)
    return replace(w, samples=w.samples - (slope * t + intercept))


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def dft_magnitude(w: Waveform, window: str | None = None) -> Spectrum:
    """One-sided magnitude spectrum, zero-padded to the next power of two.

    ``window="hann"`` tapers the record before padding (off by default; noisy
    field data benefits, clean synthetic tones do not).
    """
    samples = np.asarray(w.samples, dtype=float)
    if samples.size == 0:
        raise ValueError("cannot transform an empty waveform")
    if window == "hann":
        samples = samples * np.hanning(samples.size)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    n = _next_pow2(samples.size)
    if n != samples.size:
        samples = np.pad(samples, (0, n - samples.size))
    mags = np.abs(np.fft.rfft(samples))
    return Spectrum(magnitudes=mags, bin_width_hz=w.sample_rate_hz / n,
                    point_id=w.point_id, x_in=w.x_in, y_in=w.y_in)


def peak_frequency(s: Spectrum, min_khz: float = DEFAULT_MIN_KHZ) -> PeakReading:
    """Argmax peak over bins at or above ``min_khz``, flagged for QA.

    Flags: HighOutlier above 15 kHz, LowOutlier below 1 kHz, FlatSpectrum when
    the max-to-median magnitude ratio is under 3 (no dominant resonance). If
    every bin sits below ``min_khz`` the reading is a FlatSpectrum at 0 kHz.
    """
    if min_khz < 0:
        raise ValueError("min_khz must be non-negative")
    centers_khz = np.arange(s.magnitudes.size) * s.bin_width_hz / 1000.0
    eligible = centers_khz >= min_khz
    if not eligible.any():
        return PeakReading(x_in=s.x_in, y_in=s.y_in, f_peak_khz=0.0, qa=(FLAG_FLAT,), point_id=s.point_id)
    mags = s.magnitudes[eligible]
    k = int(np.argmax(mags))
    f_khz = float(centers_khz[eligible][k])
    flags = []
    if f_khz > HIGH_OUTLIER_KHZ:
        flags.append(FLAG_HIGH)
    elif f_khz < LOW_OUTLIER_KHZ:
        flags.append(FLAG_LOW)
    med = float(np.median(mags))
    peak = float(mags[k])
    if peak <= 0 or (med > 0 and peak / med < FLAT_RATIO):
        flags.append(FLAG_FLAT)
    return PeakReading(x_in=s.x_in, y_in=s.y_in, f_peak_khz=f_khz, qa=tuple(sorted(flags)), point_id=s.point_id)


def qa_consistency(readings: list[PeakReading], radius_in: float) -> list[PeakReading]:
    """Median-based neighborhood check: flag (never alter) inconsistent readings.

    A reading deviating from the median of its neighbors within ``radius_in``
    by more than twice the neighborhood interquartile range gains a High/Low
    outlier flag in the deviation direction. A direction flag is skipped when
    the reading already carries the opposite absolute flag, keeping High and
    Low mutually exclusive. Readings with no neighbors pass unchanged.
    """
    if not readings:
        raise ValueError("qa_consistency needs at least one reading")
    xs = np.array([r.x_in for r in readings])
    ys = np.array([r.y_in for r in readings])
    vals = np.array([r.f_peak_khz for r in readings])
    r2 = radius_in * radius_in
    out = []
    for i, r in enumerate(readings):
        d2 = (xs - xs[i]) ** 2 + (ys - ys[i]) ** 2
        near = (d2 <= r2) & (d2 > 0)
        if not near.any():
            out.append(r)
            continue
        neigh = vals[near]
        med = float(np.median(neigh))
        q75, q25 = np.percentile(neigh, [75, 25])
        if abs(vals[i] - med) > 2.0 * (q75 - q25):
            flag = FLAG_HIGH if vals[i] > med else FLAG_LOW
            opposite = FLAG_LOW if flag == FLAG_HIGH else FLAG_HIGH
            if flag not in r.qa and opposite not in r.qa:
                r = replace(r, qa=tuple(sorted(r.qa + (flag,))))
        out.append(r)
    return out


def analyze_waveform(w: Waveform, min_khz: float = DEFAULT_MIN_KHZ, window: str | None = None) -> PeakReading:
    """detrend -> magnitude spectrum -> peak pick, for one waveform."""
    return peak_frequency(dft_magnitude(detrend(w), window=window), min_khz=min_khz)


# ---------------------------------------------------------------------------
# Peak-reading CSV: point_id,x_in,y_in,f_peak_khz,qa  (qa flags joined by "|")
# ---------------------------------------------------------------------------


def write_readings_csv(readings: list[PeakReading], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "x_in", "y_in", "f_peak_khz", "qa"])
        for r in readings:
            writer.writerow([r.point_id, repr(r.x_in), repr(r.y_in), repr(r.f_peak_khz), r.qa_label])


def read_readings_csv(path: str | Path) -> list[PeakReading]:
    readings = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["point_id", "x_in", "y_in", "f_peak_khz", "qa"]:
            raise ValueError(f"unrecognized readings CSV header in {path}")
        for pid, x, y, f, qa in reader:
            flags = () if qa == "OK" else tuple(qa.split("|"))
            readings.append(PeakReading(x_in=float(x), y_in=float(y), f_peak_khz=float(f),
                                        qa=flags, point_id=pid))
    return readings
