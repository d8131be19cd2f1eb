"""Weighted K-means / K-median: seeding, nearest-center assignment, Lloyd updates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

_CHUNK = 1 << 16


def as_points(x):
    """Float matrix view; a 1-D array is read as points on a line."""
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def pairwise_distance(points, centers, metric="l2sq"):
    """Distances from every point to every center, ``metric`` in {l2sq, l1}."""
    points = as_points(points)
    centers = as_points(centers)
    out = np.zeros((points.shape[0], centers.shape[0]))
    for c in range(points.shape[1]):
        diff = points[:, c, None] - centers[None, :, c]
        out += diff * diff if metric == "l2sq" else np.abs(diff)
    return out


def _metric(mode):
    return "l2sq" if mode == "kmeans" else "l1"


def assign_nearest(points, centers, metric="l2sq"):
    """Index of the nearest center per point; ties go to the lowest index."""
    points = as_points(points)
    labels = np.empty(points.shape[0], dtype=np.int64)
    for s in range(0, points.shape[0], _CHUNK):
        labels[s:s + _CHUNK] = np.argmin(
            pairwise_distance(points[s:s + _CHUNK], centers, metric), axis=1)
    return labels


def _nearest(points, centers, metric):
    labels = np.empty(points.shape[0], dtype=np.int64)
    dist = np.empty(points.shape[0])
    for s in range(0, points.shape[0], _CHUNK):
        block = pairwise_distance(points[s:s + _CHUNK], centers, metric)
        lab = np.argmin(block, axis=1)
        labels[s:s + _CHUNK] = lab
        dist[s:s + _CHUNK] = block[np.arange(lab.size), lab]
    return labels, dist


def _check_weights(points, weights):
    points = as_points(points)
    if weights is None:
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (points.shape[0],) or np.any(weights < 0):
        raise ValueError("weights must be nonnegative, one per point")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must have positive total")
    return points, weights / total


def kmeanspp_init(points, weights, K, seed=0):
    """K-means++ seeding with D^2 sampling scaled by point weights.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    points, weights = _check_weights(points, weights)
    rng = np.random.default_rng(seed)
    positive = np.flatnonzero(weights > 0)
    if np.unique(points[positive], axis=0).shape[0] < K:
        raise ValueError(f"fewer than K={K} distinct positively weighted points")
    chosen = [int(rng.choice(points.shape[0], p=weights))]
    closest = pairwise_distance(points, points[chosen], "l2sq")[:, 0]
    for _ in range(1, K):
        score = weights * closest
        idx = int(rng.choice(points.shape[0], p=score / score.sum()))
        chosen.append(idx)
        np.minimum(closest, pairwise_distance(points, points[idx:idx + 1], "l2sq")[:, 0],
                   out=closest)
    return points[chosen].copy()


def weighted_median(values, weights):
    """Smallest value whose cumulative weight reaches half the total."""
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return v[np.searchsorted(cum, 0.5 * cum[-1] * (1 - 1e-12))]


@dataclass
class LloydResult:
    centers: np.ndarray
    objective: float
    labels: np.ndarray
    n_iter: int
    history: list[float] = field(default_factory=list)


def _update_centers(points, weights, labels, centers, mode):
    new = centers.copy()
    K = centers.shape[0]
    mass = np.bincount(labels, weights=weights, minlength=K)
    if mode == "kmeans":
        for c in range(points.shape[1]):
            sums = np.bincount(labels, weights=weights * points[:, c], minlength=K)
            filled = mass > 0
            new[filled, c] = sums[filled] / mass[filled]
    else:
        for k in np.flatnonzero(mass > 0):
            member = labels == k
            w = weights[member]
            for c in range(points.shape[1]):
                new[k, c] = weighted_median(points[member, c], w)
    return new, mass


def _repair_empty(points, weights, centers, mass, mode):
    """Move centers of weightless clusters onto the costliest points."""
    empty = np.flatnonzero(mass <= 0)
    if empty.size == 0:
        return centers
    _, dist = _nearest(points, centers[mass > 0], _metric(mode))
    contrib = weights * dist
    for k in empty:
        idx = int(np.argmax(contrib))
        centers[k] = points[idx]
        contrib[idx] = -1.0
    return centers


def lloyd_weighted(points, weights, init, mode="kmeans", max_iter=300, tol=1e-6):
    """Weighted Lloyd iterations from ``init``.

    kmeans: squared L2 assignment and weighted-mean centers. kmedian: L1
    assignment and per-coordinate weighted-median centers. Stops once no
    center moves more than ``tol`` (Euclidean) or after ``max_iter`` updates.
    ``history`` holds the objective after every assignment step.
    """
    points, weights = _check_weights(points, weights)
    centers = as_points(init).copy()
    if np.count_nonzero(weights) < centers.shape[0]:
        warnings.warn("fewer positively weighted points than clusters", stacklevel=2)
    metric = _metric(mode)
    history = []
    labels, dist = _nearest(points, centers, metric)
    history.append(float(np.dot(weights, dist)))
    it = 0
    for it in range(1, max_iter + 1):
        new, mass = _update_centers(points, weights, labels, centers, mode)
        new = _repair_empty(points, weights, new, mass, mode)
        shift = float(np.linalg.norm(new - centers, axis=1).max())
        centers = new
        labels, dist = _nearest(points, centers, metric)
        history.append(float(np.dot(weights, dist)))
        if shift < tol:
            break
    return LloydResult(centers, history[-1], labels, it, history)
