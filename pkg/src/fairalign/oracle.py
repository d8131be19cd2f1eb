"""Exhaustive references for tiny instances, used to certify the solvers."""

from __future__ import annotations

import itertools

import numpy as np

from . import metrics
from .clustering import as_points
from .data import Dataset

MAX_FAIR_N = 5
MAX_FAIR_K = 3
MAX_COUPLING_N = 7


def brute_force_coupling(cost):
    """Minimum mean cost over all permutations of a square matrix.

    Returns ``(objective, permutation)`` where ``permutation[i]`` is the
    column matched to row ``i``; ties keep the lexicographically first.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n) or n > MAX_COUPLING_N:
        raise ValueError(f"needs a square cost matrix of size at most {MAX_COUPLING_N}")
    rows = np.arange(n)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[rows, perms].sum(axis=1)
    best = int(np.argmin(totals))
    return float(totals[best] / n), tuple(int(p) for p in perms[best])


def brute_force_fair_kmeans(ds: Dataset, K: int):
    """Optimal perfectly fair deterministic K-means for two equal-size groups.

    Enumerates every matching between the groups and every assignment of
    matched pairs to clusters; centers are member means and the cost is the
    mean squared distance to the assigned center. Returns ``(cost,
    matching, pair_labels)`` with ``matching[i]`` the group-1 local index
    paired with group-0 point ``i``. Ties keep the lexicographically first
    (matching, labels).
    """
    if ds.n_groups != 2:
        raise ValueError("needs exactly two groups")
    n0, n1 = ds.group_sizes
    if n0 != n1 or n0 > MAX_FAIR_N or K > MAX_FAIR_K or K < 1:
        raise ValueError(f"size cap: needs n0 = n1 <= {MAX_FAIR_N} and 1 <= K <= {MAX_FAIR_K}")
    x0, x1 = ds.group_points(0), ds.group_points(1)
    n = int(n0)
    labelings = np.array(list(itertools.product(range(K), repeat=n)), dtype=np.int64)
    best = (np.inf, None, None)
    for perm in itertools.permutations(range(n)):
        pts = np.concatenate([x0, x1[list(perm)]])
        for lab in labelings:
            full = np.concatenate([lab, lab])
            centers = np.zeros((K, pts.shape[1]))
            for k in np.unique(full):
                centers[k] = pts[full == k].mean(axis=0)
            c = metrics.cost(pts, centers, full)
            if c < best[0] - 1e-15 * max(1.0, abs(c)):
                best = (c, perm, tuple(int(v) for v in lab))
    return best


def fair_cost_of(ds: Dataset, matching, pair_labels, K=None):
    """Cost of a matching plus pair labelling with mean centers (for cross-checks)."""
    x0, x1 = ds.group_points(0), as_points(ds.group_points(1))[list(matching)]
    pts = np.concatenate([x0, x1])
    lab = np.asarray(pair_labels)
    full = np.concatenate([lab, lab])
    K = int(full.max()) + 1 if K is None else K
    centers = np.zeros((K, pts.shape[1]))
    for k in np.unique(full):
        centers[k] = pts[full == k].mean(axis=0)
    return metrics.cost(pts, centers, full)
