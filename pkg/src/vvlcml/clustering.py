"""k-means clustering and the high/low variance-region labeling of DS2.

Lloyd iterations with k-means++ seeding, a fixed number of restarts, and a
deterministic empty-cluster rule (re-seed at the point farthest from its
centroid). The variance-region labeler clusters samples on distance plus a
local path-loss dispersion feature and tags the short-range, high-spread
cluster with 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import with_variance_region


@dataclass(frozen=True)
class LloydRun:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_trace: tuple[float, ...]
    iterations: int


@dataclass(frozen=True)
class KMeansResult:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    restarts_used: int


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkp,nkp->nk", diff, diff)


def kmeans_plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k starting centroids with squared-distance-weighted sampling."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            centroids[i] = points[rng.integers(n)]
        else:
            centroids[i] = points[rng.choice(n, p=closest_sq / total)]
        closest_sq = np.minimum(closest_sq, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def lloyd(points: np.ndarray, init_centroids: np.ndarray, max_iterations: int = 300) -> LloydRun:
    """Run Lloyd's iteration to an assignment fixed point.

    Each iteration assigns points to their nearest centroid and recomputes
    means; the recorded inertia trace never increases. An emptied cluster is
    re-seeded at the point currently farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=float)
    centroids = np.array(init_centroids, dtype=float, copy=True)
    k = centroids.shape[0]
    assignments = None
    trace = []
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        sq = _squared_distances(points, centroids)
        new_assignments = sq.argmin(axis=1)
        trace.append(float(sq[np.arange(points.shape[0]), new_assignments].sum()))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for j in range(k):
            members = points[assignments == j]
            if members.shape[0] == 0:
                farthest = np.argmax(sq[np.arange(points.shape[0]), assignments])
                centroids[j] = points[farthest]
            else:
                centroids[j] = members.mean(axis=0)
    sq = _squared_distances(points, centroids)
    assignments = sq.argmin(axis=1)
    inertia = float(sq[np.arange(points.shape[0]), assignments].sum())
    return LloydRun(centroids=centroids, assignments=assignments, inertia=inertia,
                    inertia_trace=tuple(trace), iterations=iterations)


def kmeans(points, k: int, restarts: int = 10, seed: int = 0) -> KMeansResult:
    """Best-of-restarts k-means; deterministic in the seed.

    The winning restart has minimum inertia, ties broken by the lowest
    restart index.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > points.shape[0]:
        raise ValueError("k cannot exceed the number of points")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(restart,)))
        run = lloyd(points, kmeans_plusplus_init(points, k, rng))
        if best is None or run.inertia < best[0]:
            best = (run.inertia, restart, run)
    _, _, run = best
    return KMeansResult(k=k, centroids=run.centroids, assignments=run.assignments,
                        inertia=run.inertia, restarts_used=restarts)


def local_dispersion(distances: np.ndarray, path_loss_db: np.ndarray,
                     window_m: float = 2.0) -> np.ndarray:
    """Absolute deviation of each sample from the median loss of its
    distance neighborhood (window of ``window_m`` meters centered on it)."""
    distances = np.asarray(distances, dtype=float)
    path_loss_db = np.asarray(path_loss_db, dtype=float)
    order = np.argsort(distances, kind="stable")
    d_sorted = distances[order]
    pl_sorted = path_loss_db[order]
    half = window_m / 2.0
    lo = np.searchsorted(d_sorted, d_sorted - half, side="left")
    hi = np.searchsorted(d_sorted, d_sorted + half, side="right")
    dispersion_sorted = np.empty_like(pl_sorted)
    for i in range(d_sorted.size):
        dispersion_sorted[i] = abs(pl_sorted[i] - np.median(pl_sorted[lo[i]:hi[i]]))
    dispersion = np.empty_like(dispersion_sorted)
    dispersion[order] = dispersion_sorted
    return dispersion


@dataclass(frozen=True)
class RegionLabels:
    """Variance-region labeling output: augmented samples plus diagnostics."""

    samples: tuple
    labels: np.ndarray
    boundary_m: float
    high_count: int
    low_count: int
    low_confidence: bool
    inertia_ratio: float
    clustering: KMeansResult


def label_variance_region(samples, seed: int = 0, restarts: int = 10,
                          distance_only: bool = False, window_m: float = 2.0,
                          dispersion_weight: float = 0.5,
                          confidence_threshold: float = 0.95) -> RegionLabels:
    """Split DS2 samples into high- and low-variance regions with k=2 k-means.

    Features are the z-scored distance and (unless ``distance_only``) the
    z-scored local path-loss dispersion; the cluster with the smaller
    distance centroid is the high-variance region (label 1). The reported
    boundary is the maximum distance found inside that cluster.

    The confidence diagnostic is an inertia ratio restricted to the
    dispersion feature: within-cluster dispersion SS over total dispersion
    SS. Data with a genuine two-regime structure separates the clusters in
    dispersion and pushes the ratio well below 1; homogeneous noise leaves
    it at ~1 and the labeling is flagged low-confidence.
    """
    samples = tuple(samples)
    if len(samples) < 2:
        raise ValueError("variance-region labeling needs at least 2 samples")
    distances = np.array([s.distance_m for s in samples], dtype=float)
    losses = np.array([s.path_loss_db for s in samples], dtype=float)

    def zscore(v):
        sd = v.std()
        return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)

    disp = zscore(local_dispersion(distances, losses, window_m=window_m))
    if distance_only:
        feats = zscore(distances)[:, None]
    else:
        feats = np.column_stack([zscore(distances), dispersion_weight * disp])

    result = kmeans(feats, k=2, restarts=restarts, seed=seed)
    centroid_distance = [distances[result.assignments == j].mean() if np.any(result.assignments == j)
                         else np.inf for j in range(2)]
    high_cluster = int(np.argmin(centroid_distance))
    labels = (result.assignments == high_cluster).astype(int)
    boundary = float(distances[labels == 1].max())
    within = sum(float(np.sum((disp[labels == j] - disp[labels == j].mean()) ** 2))
                 for j in (0, 1) if np.any(labels == j))
    total = float(np.sum((disp - disp.mean()) ** 2))
    ratio = within / total if total > 0 else 1.0
    return RegionLabels(
        samples=with_variance_region(samples, labels),
        labels=labels,
        boundary_m=boundary,
        high_count=int(labels.sum()),
        low_count=int(labels.size - labels.sum()),
        low_confidence=ratio > confidence_threshold,
        inertia_ratio=float(ratio),
        clustering=result,
    )
