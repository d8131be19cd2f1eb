"""Clustering utility and group-fairness measures."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .clustering import as_points, pairwise_distance


def round_deterministic(probs) -> np.ndarray:
    """Argmax label per row; ties go to the lowest cluster index."""
    return np.argmax(np.asarray(probs), axis=1).astype(np.int64)


def cost(points, centers, labels, metric="l2sq") -> float:
    """Mean squared L2 (``l2sq``) or L1 (``l1``) distance to the assigned center."""
    points = as_points(points)
    diff = points - as_points(centers)[np.asarray(labels)]
    if metric == "l2sq":
        return float(np.mean(np.einsum("ij,ij->i", diff, diff)))
    if metric == "l1":
        return float(np.mean(np.abs(diff).sum(axis=1)))
    raise ValueError(f"unknown metric {metric!r}")


def _pair_balance(c0, c1) -> float:
    out = 1.0
    for a, b in zip(c0, c1):
        if a == 0 and b == 0:
            continue
        if a == 0 or b == 0:
            return 0.0
        out = min(out, a / b, b / a)
    return float(out)


def balance(labels, groups, K=None) -> float:
    """Min over clusters of ``min(r, 1/r)`` with ``r`` the group-count ratio.

    A cluster holding only one group scores 0; empty clusters are skipped.
    With more than two groups the result is the min over all group pairs.
    """
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    K = int(labels.max()) + 1 if K is None else K
    G = int(groups.max()) + 1
    counts = [np.bincount(labels[groups == s], minlength=K) for s in range(G)]
    return min(_pair_balance(counts[a], counts[b])
               for a, b in itertools.combinations(range(G), 2))


def balance_star(groups) -> float:
    """Balance ceiling ``min_s n_s / max_s n_s`` (``min(n0/n1, n1/n0)`` for two groups)."""
    sizes = np.bincount(np.asarray(groups))
    sizes = sizes[sizes > 0]
    return float(sizes.min() / sizes.max())


def group_profiles(probs, groups) -> np.ndarray:
    """Per-group mean membership vectors, shape ``(G, K)``."""
    probs = np.asarray(probs, dtype=np.float64)
    groups = np.asarray(groups)
    G = int(groups.max()) + 1
    return np.stack([probs[groups == s].mean(axis=0) for s in range(G)])


def fairness_gap(probs, groups) -> float:
    """``sum_k |E_0 A_0(X)_k - E_1 A_1(X)_k|`` for groups 0 and 1."""
    prof = group_profiles(probs, groups)
    return float(np.abs(prof[0] - prof[1]).sum())


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Singleton clusters contribute 0, as does a point whose intra and
    nearest-cluster distances are both 0.
    """
    points = as_points(points)
    labels = np.asarray(labels)
    K = int(labels.max()) + 1
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    sizes = np.bincount(labels, minlength=K)
    sums = np.zeros((points.shape[0], K))
    step = max(1, (1 << 22) // max(points.shape[0], 1))
    for s in range(0, points.shape[0], step):
        dist = np.sqrt(np.maximum(pairwise_distance(points, points[s:s + step]), 0.0))
        for k in present:
            member = labels[s:s + step] == k
            sums[:, k] += dist[:, member].sum(axis=1)
    own = sizes[labels]
    intra = np.divide(sums[np.arange(labels.size), labels], own - 1,
                      out=np.zeros(labels.size), where=own > 1)
    mean_other = np.where(sizes > 0, sums / np.maximum(sizes, 1), np.inf)
    mean_other[np.arange(labels.size), labels] = np.inf
    near = mean_other.min(axis=1)
    denom = np.maximum(intra, near)
    coef = np.divide(near - intra, denom, out=np.zeros(labels.size), where=denom > 0)
    coef[own <= 1] = 0.0
    return float(coef.mean())


def norm_bound(points) -> float:
    """``max ||x||^2`` over the data."""
    points = as_points(points)
    return float(np.einsum("ij,ij->i", points, points).max())


def balance_bound_terms(probs, groups):
    """Left side and constant of the balance-versus-epsilon bound.

    Returns ``(lhs, c)`` with ``lhs = max_k |sum_0 A_k / sum_1 A_k - n0/n1|``
    and ``c = (n0/n1) * max_k 1 / E_1 A_1(X)_k``. Both are ``inf`` when some
    cluster receives no group-1 mass.
    """
    probs = np.asarray(probs, dtype=np.float64)
    groups = np.asarray(groups)
    n0, n1 = np.count_nonzero(groups == 0), np.count_nonzero(groups == 1)
    s0 = probs[groups == 0].sum(axis=0)
    s1 = probs[groups == 1].sum(axis=0)
    if np.any(s1 <= 0):
        return float("inf"), float("inf")
    lhs = float(np.abs(s0 / s1 - n0 / n1).max())
    c = float((n0 / n1) * np.max(n1 / s1))
    return lhs, c


@dataclass
class MetricReport:
    cost: float
    cost_l1: float
    balance: float
    balance_star: float
    fairness_gap: float
    silhouette: float | None
    R: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(points, groups, centers, probs, with_silhouette=False) -> MetricReport:
    """All metrics for a probabilistic assignment and its deterministic rounding."""
    labels = round_deterministic(probs)
    K = as_points(centers).shape[0]
    sil = None
    if with_silhouette and np.unique(labels).size >= 2:
        sil = silhouette(points, labels)
    return MetricReport(
        cost=cost(points, centers, labels),
        cost_l1=cost(points, centers, labels, "l1"),
        balance=balance(labels, groups, K),
        balance_star=balance_star(groups),
        fairness_gap=fairness_gap(probs, groups) if int(np.max(groups)) >= 1 else 0.0,
        silhouette=sil,
        R=norm_bound(points),
    )
