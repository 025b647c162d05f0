"""Two-cluster separation of defective vs intact points on peak frequency.

Lloyd iterations with k-means++ seeding and restarts; after relabeling, the
lower-frequency cluster is always cluster 0 (the defective one).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mapping import Zone
from .spectral import PeakReading

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_RESTARTS = 5


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    cost: float
    iterations: int
    seed: int
    degenerate: bool = False


def wcss(values: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Within-cluster sum of squares."""
    return float(np.sum((values - centroids[labels]) ** 2))


def _assign(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Ties go to the lower cluster index.
    d = np.abs(values[:, None] - centroids[None, :])
    return np.argmin(d, axis=1)


def _kmeanspp_init(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [values[rng.integers(len(values))]]
    for _ in range(k - 1):
        d2 = np.min((values[:, None] - np.array(centroids)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with a centroid; spread deterministically.
            centroids.append(centroids[-1])
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centroids.append(values[min(idx, len(values) - 1)])
    return np.array(centroids, dtype=float)


def _lloyd(values: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    labels = _assign(values, centroids)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        new_centroids = centroids.copy()
        for j in range(len(centroids)):
            members = values[labels == j]
            if members.size:
                new_centroids[j] = members.mean()
            else:
                # Re-seat an empty cluster on the point farthest from its centroid.
                far = int(np.argmax(np.abs(values - centroids[labels])))
                new_centroids[j] = values[far]
        shift = np.max(np.abs(new_centroids - centroids))
        centroids = new_centroids
        labels = _assign(values, centroids)
        if shift < tol:
            break
    return labels, centroids, iterations


def kmeans(
    values,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    n_restarts: int = DEFAULT_RESTARTS,
) -> ClusterResult:
    """Best-of-``n_restarts`` seeded k-means on 1-D values.

    Fewer distinct values than k yields a degenerate (flagged) result with
    centroids pinned on the distinct values.
    """
    values = np.asarray(values, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(values) < k:
        raise ValueError(f"need at least {k} values for k={k}, got {len(values)}")

    distinct = np.unique(values)
    if len(distinct) < k:
        centroids = np.concatenate([distinct, np.repeat(distinct[-1], k - len(distinct))])
        labels = _assign(values, centroids)
        return ClusterResult(labels=labels, centroids=centroids, cost=wcss(values, labels, centroids),
                             iterations=0, seed=seed, degenerate=True)

    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng([seed, r])
        init = _kmeanspp_init(values, k, rng)
        labels, centroids, iterations = _lloyd(values, init, max_iter, tol)
        cost = wcss(values, labels, centroids)
        if best is None or cost < best.cost - 1e-15:
            best = ClusterResult(labels=labels, centroids=centroids, cost=cost,
                                 iterations=iterations, seed=seed)
    return best


def relabel_defective(r: ClusterResult) -> ClusterResult:
    """Ensure cluster 0 is the lower-frequency (defective) cluster."""
    if len(r.centroids) != 2:
        raise ValueError(f"relabeling requires k=2, got k={len(r.centroids)}")
    if r.centroids[0] <= r.centroids[1]:
        return r
    return replace(r, labels=1 - r.labels, centroids=r.centroids[::-1].copy())


@dataclass
class ZoneCluster:
    """Per-zone clustering outcome: the defective points plus centroid bookkeeping."""

    cls: str
    defective: list[PeakReading]
    result: ClusterResult
    n_points: int
    n_excluded: int


def cluster_zone(zone: Zone, seed: int = 0, **kmeans_kwargs) -> ZoneCluster:
    """2-means on one zone's QA-clean readings; returns the cluster-0 (defective) points."""
    clean = [r for r in zone.readings if r.is_ok]
    excluded = len(zone.readings) - len(clean)
    if len(clean) < 2:
        raise ValueError(f"zone {zone.cls!r} too small to cluster ({len(clean)} clean readings)")
    values = [r.f_peak_khz for r in clean]
    result = relabel_defective(kmeans(values, k=2, seed=seed, **kmeans_kwargs))
    defective = [r for r, lab in zip(clean, result.labels) if lab == 0]
    return ZoneCluster(cls=zone.cls, defective=defective, result=result,
                       n_points=len(clean), n_excluded=excluded)


def cluster_global(readings: list[PeakReading], seed: int = 0, **kmeans_kwargs) -> ZoneCluster:
    """Whole-deck 2-means (field scope, where there are no predefined zones)."""
    zone = Zone(cls="global", x_lo_in=0.0, x_hi_in=0.0, readings=list(readings))
    return cluster_zone(zone, seed=seed, **kmeans_kwargs)
