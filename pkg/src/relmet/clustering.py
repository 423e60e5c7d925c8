"""Downstream clustering: k-means++ with restarts and flat-kernel mean shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterAssignment:
    """Dense cluster ids (0..num_clusters-1) for every point."""

    cluster_ids: np.ndarray
    num_clusters: int

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "ClusterAssignment":
        labels = np.asarray(labels)
        dense = {}
        out = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            key = int(lab)
            if key not in dense:
                dense[key] = len(dense)
            out[i] = dense[key]
        return cls(out, len(dense))


def _sq_dists(points, centers):
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def _kmeanspp_seed(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1), out=d2)
    return centers


def _lloyd(points, centers, max_iter):
    n, k = points.shape[0], centers.shape[0]
    centers = centers.copy()
    prev_labels = None
    prev_obj = np.inf
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        for c in range(k):
            if not np.any(labels == c):
                # Reseed an empty cluster to the point farthest from its center.
                far = int(d2[np.arange(n), labels].argmax())
                centers[c] = points[far]
                d2[:, c] = np.sum((points - centers[c]) ** 2, axis=1)
                labels = d2.argmin(axis=1)
        obj = float(d2[np.arange(n), labels].sum())
        assert obj <= prev_obj * (1 + 1e-12) + 1e-12, "k-means objective increased"
        prev_obj = obj
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    return labels, prev_obj


def kmeans(
    points: np.ndarray,
    k: int,
    max_iter: int = 300,
    restarts: int = 8,
    rng: np.random.Generator | None = None,
) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeds; best of `restarts` by
    within-cluster sum of squares."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > points.shape[0]:
        raise ValueError(f"k={k} exceeds number of points {points.shape[0]}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    best_labels, best_obj = None, np.inf
    for _ in range(max(1, restarts)):
        labels, obj = _lloyd(points, _kmeanspp_seed(points, k, rng), max_iter)
        if obj < best_obj:
            best_labels, best_obj = labels, obj
    return ClusterAssignment.from_labels(best_labels)


def estimate_bandwidth(points: np.ndarray, quantile: float = 0.3) -> float:
    """Per point, average the distances to its ceil(quantile * n) nearest
    other points (clamped to the available neighbor count); the bandwidth is
    the `quantile` quantile of those per-point averages."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if not 0.0 < quantile <= 1.0:
        raise ValueError("quantile must be in (0, 1]")
    k = min(max(int(np.ceil(quantile * n)), 1), n - 1)
    d = np.sqrt(_sq_dists(points, points))
    np.fill_diagonal(d, np.inf)
    d.sort(axis=1)
    bandwidth = float(np.quantile(d[:, :k].mean(axis=1), quantile))
    if bandwidth <= 0.0:
        raise ValueError("degenerate bandwidth: all points identical")
    return bandwidth


def mean_shift(
    points: np.ndarray,
    bandwidth: float,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> ClusterAssignment:
    """Flat-kernel mean shift: every point iterates to the mean of the sample
    points within `bandwidth`, then modes closer than bandwidth/2 merge."""
    points = np.asarray(points, dtype=np.float64)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    n = points.shape[0]
    modes = points.copy()
    bw2 = bandwidth * bandwidth
    for _ in range(max_iter):
        d2 = _sq_dists(modes, points)
        nbr = d2 <= bw2
        counts = nbr.sum(axis=1)
        stuck = counts == 0  # keep isolated modes in place
        counts = np.where(stuck, 1, counts)
        new_modes = (nbr @ points) / counts[:, None]
        new_modes[stuck] = modes[stuck]
        shift = np.linalg.norm(new_modes - modes, axis=1).max()
        modes = new_modes
        if shift < tol:
            break
    merge_r2 = (bandwidth / 2.0) ** 2
    seeds: list[np.ndarray] = []
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        for j, seed in enumerate(seeds):
            if np.sum((modes[i] - seed) ** 2) <= merge_r2:
                labels[i] = j
                break
        else:
            labels[i] = len(seeds)
            seeds.append(modes[i])
    return ClusterAssignment(labels, len(seeds))
