"""Fixed-length, spatially ordered peak-frequency sequences for the defect classifier.

Validated defect points are walked in serpentine (boustrophedon) order within
each zone so that consecutive stream elements are spatial neighbors, then cut
into overlapping windows. Short runs are reflection-padded and flagged.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .defects import LABEL_OF

SEQUENCE_LENGTH = 20


@dataclass(frozen=True)
class LabeledSequence:
    values: tuple[float, ...]
    label: int
    slab_id: str
    zone: str
    x_in: float
    y_in: float
    padded: bool = False


@dataclass(frozen=True)
class NormParams:
    mean: float
    std: float
    fingerprint: str
    degenerate: bool = False


@dataclass
class SequenceDataset:
    sequences: list[LabeledSequence]
    split: list[str] | None = None  # "train"/"test" per sequence
    norm: NormParams | None = None

    def __len__(self):
        return len(self.sequences)

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.sequences:
            counts[s.label] = counts.get(s.label, 0) + 1
        return dict(sorted(counts.items()))

    def values_array(self) -> np.ndarray:
        return np.array([s.values for s in self.sequences], dtype=float)[:, :, None]

    def labels_array(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=int)

    def subset(self, which: str) -> "SequenceDataset":
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        seqs = [s for s, w in zip(self.sequences, self.split) if w == which]
        return SequenceDataset(sequences=seqs, split=[which] * len(seqs), norm=self.norm)


def serpentine_order(points) -> list:
    """Row-by-row traversal alternating direction, so consecutive points are neighbors."""
    rows: dict[float, list] = {}
    for p in points:
        rows.setdefault(round(p.y_in, 6), []).append(p)
    ordered = []
    for i, y in enumerate(sorted(rows)):
        row = sorted(rows[y], key=lambda p: p.x_in, reverse=(i % 2 == 1))
        ordered.extend(row)
    return ordered


def _reflect_indices(n: int, target: int) -> list[int]:
    if n == 1:
        return [0] * target
    period = 2 * n - 2
    out = []
    for j in range(target):
        k = j % period
        out.append(k if k < n else period - k)
    return out


def build_sequences(
    zone_streams,
    length: int = SEQUENCE_LENGTH,
    stride: int = 1,
    multiplicity: int = 1,
) -> list[LabeledSequence]:
    """Sliding windows over each per-zone, per-slab point stream.

    ``zone_streams`` is an iterable of (slab_id, class_name, points). The
    stream is the serpentine ordering of the points; ``multiplicity`` extends
    it to ``multiplicity * n`` elements by walking back and forth over the run
    (direction alternates at the ends, so consecutive elements stay spatial
    neighbors). Streams still shorter than ``length`` are reflection-padded
    the same way into a single sequence. Any sequence built from a run
    shorter than ``length`` is flagged as padded.
    """
    if length < 1 or stride < 1 or multiplicity < 1:
        raise ValueError("length, stride and multiplicity must be positive")
    sequences = []
    for slab_id, cls, points in zone_streams:
        points = serpentine_order(points)
        if not points:
            warnings.warn(f"zone {cls!r} of slab {slab_id!r} has no valid points; skipped")
            continue
        label = LABEL_OF[cls]
        n = len(points)
        padded = n < length
        target = max(n * multiplicity, length)
        stream = points if target == n else [points[i] for i in _reflect_indices(n, target)]
        for start in range(0, len(stream) - length + 1, stride):
            window = stream[start : start + length]
            sequences.append(_make_sequence(window, label, slab_id, cls, anchor=window[0], padded=padded))
    return sequences


def _make_sequence(window, label, slab_id, cls, anchor, padded) -> LabeledSequence:
    return LabeledSequence(
        values=tuple(float(p.f_peak_khz) for p in window),
        label=label,
        slab_id=slab_id,
        zone=cls,
        x_in=anchor.x_in,
        y_in=anchor.y_in,
        padded=padded,
    )


MIN_PER_CLASS_FOR_STRATIFIED = 5


def train_test_split(ds: SequenceDataset, ratio: float = 0.8, seed: int = 0,
                     stratified: bool = True) -> SequenceDataset:
    """Assign train/test with per-class proportions held to the ratio.

    The total train size is round(N * ratio); per-class sizes are apportioned
    by largest remainder so both the global and per-class ratios stay exact up
    to integer rounding. Deterministic for a fixed seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n = len(ds.sequences)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    n_train = int(round(n * ratio))
    labels = ds.labels_array()
    split = np.array(["test"] * n, dtype=object)

    counts = ds.class_counts()
    if stratified and any(c < MIN_PER_CLASS_FOR_STRATIFIED for c in counts.values()):
        warnings.warn("class with fewer than 5 sequences; falling back to unstratified split")
        stratified = False

    if not stratified:
        order = rng.permutation(n)
        split[order[:n_train]] = "train"
    else:
        quota = {c: int(np.floor(cnt * ratio)) for c, cnt in counts.items()}
        remainders = sorted(counts, key=lambda c: (-(counts[c] * ratio - quota[c]), c))
        deficit = n_train - sum(quota.values())
        for c in remainders:
            if deficit <= 0:
                break
            if quota[c] < counts[c]:
                quota[c] += 1
                deficit -= 1
        for c, take in quota.items():
            idx = np.nonzero(labels == c)[0]
            order = idx[rng.permutation(len(idx))]
            split[order[:take]] = "train"

    return SequenceDataset(sequences=list(ds.sequences), split=list(split), norm=ds.norm)


def _fingerprint(mean: float, std: float) -> str:
    return hashlib.sha256(f"{mean!r}:{std!r}".encode()).hexdigest()[:16]


def normalize(ds: SequenceDataset) -> SequenceDataset:
    """Z-score all sequence values using train-split statistics only."""
    if ds.split is None:
        raise ValueError("normalize requires a split assignment (statistics come from the train split)")
    train_vals = np.concatenate(
        [np.asarray(s.values) for s, w in zip(ds.sequences, ds.split) if w == "train"]
    )
    mean = float(train_vals.mean())
    std = float(train_vals.std())
    degenerate = std <= 0.0
    if degenerate:
        warnings.warn("train split has zero variance; normalization is the identity")
        std = 1.0
    params = NormParams(mean=mean, std=std, fingerprint=_fingerprint(mean, std), degenerate=degenerate)
    return SequenceDataset(
        sequences=[apply_normalization(s, params) for s in ds.sequences],
        split=list(ds.split),
        norm=params,
    )


def apply_normalization(seq: LabeledSequence, params: NormParams) -> LabeledSequence:
    vals = tuple((v - params.mean) / params.std for v in seq.values)
    return replace(seq, values=vals)


def denormalize_values(values, params: NormParams) -> np.ndarray:
    return np.asarray(values) * params.std + params.mean


def lag1_autocorr(values) -> float:
    """Pearson correlation between consecutive elements; 0 for constant input."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values")
    a, b = v[:-1], v[1:]
    if a.std() == 0.0 or b.std() == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def corpus_lag1_stats(ds: SequenceDataset, include_padded: bool = False) -> tuple[float, float, int]:
    """(mean, std, n) of lag-1 autocorrelation across sequences, skipping constant ones."""
    vals = []
    for s in ds.sequences:
        if s.padded and not include_padded:
            continue
        v = np.asarray(s.values)
        if v[:-1].std() == 0.0 or v[1:].std() == 0.0:
            continue
        vals.append(lag1_autocorr(v))
    if not vals:
        return 0.0, 0.0, 0
    arr = np.array(vals)
    return float(arr.mean()), float(arr.std()), len(vals)


# ---------------------------------------------------------------------------
# JSON-lines serialization: one sequence per line.
# ---------------------------------------------------------------------------


def write_jsonl(ds: SequenceDataset, path: str | Path):
    with open(path, "w") as fh:
        for i, s in enumerate(ds.sequences):
            rec = {
                "values": list(s.values),
                "label": s.label,
                "slab": s.slab_id,
                "split": ds.split[i] if ds.split else None,
                "zone": s.zone,
                "x_in": s.x_in,
                "y_in": s.y_in,
                "padded": s.padded,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> SequenceDataset:
    sequences, split = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            sequences.append(
                LabeledSequence(
                    values=tuple(rec["values"]),
                    label=rec["label"],
                    slab_id=rec["slab"],
                    zone=rec.get("zone", ""),
                    x_in=rec.get("x_in", 0.0),
                    y_in=rec.get("y_in", 0.0),
                    padded=rec.get("padded", False),
                )
            )
            split.append(rec.get("split"))
    has_split = all(s in ("train", "test") for s in split) and split
    return SequenceDataset(sequences=sequences, split=list(split) if has_split else None)
