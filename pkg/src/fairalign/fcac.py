"""FCA with an exception set: pairs whose aligned cost is in the top ``epsilon``
fraction are clustered fair-unaware, trading fairness for clustering cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import as_points, pairwise_distance
from .data import Dataset
from .fca import FcaConfig, FcaResult, fit_engine, pair_assignment
from .transport import Coupling, transport_cost_matrix


def eta(x0, x1, centers, pi0, pi1, mode="kmeans", transport_weight=1.0) -> float:
    """Aligned pair cost: transport term plus distance of the aligned point to its center."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))[None, :]
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))[None, :]
    t = pi0 * x0 + pi1 * x1
    trans = transport_cost_matrix(x0, x1, pi0, pi1, mode, transport_weight)[0, 0]
    metric = "l2sq" if mode == "kmeans" else "l1"
    centers = as_points(centers)
    if centers.shape[1] != x0.shape[1]:
        centers = centers.reshape(-1, x0.shape[1])
    return float(trans + pairwise_distance(t, centers, metric).min())


@dataclass
class PairCost:
    """Per-pair costs of one block: aligned (FCA) and fair-unaware (K-means)."""

    fca_cost: np.ndarray
    kmeans_cost: np.ndarray


def upper_quantile_threshold(values, epsilon):
    """Threshold whose strict exceedance set is the largest one within budget.

    With ``m = floor(epsilon * N)`` the threshold is the ``(m+1)``-th largest
    value, so at most ``m`` values lie strictly above it. ``epsilon = 1``
    returns ``-inf`` so that every value is included.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if epsilon >= 1.0:
        return -np.inf
    m = int(np.floor(epsilon * values.size + 1e-9))
    if m == 0:
        return np.inf
    return float(-np.partition(-values, m)[m])


@dataclass
class ExceptionSet:
    """Exempt pairs as one boolean mask per partition block.

    ``masks[l][a, b]`` marks the pair of the ``a``-th group-0 and ``b``-th
    group-1 member of block ``l``. ``fraction`` is the share of candidate
    pairs in the set; ``mass`` is its coupling mass when known.
    """

    masks: list
    blocks: list
    epsilon: float
    threshold: float
    weighted: bool = False
    fraction: float = 0.0
    mass: float = float("nan")

    def contains(self, rows, cols) -> np.ndarray:
        """Membership of pairs given as group-local row and column indices."""
        rows, cols = np.asarray(rows), np.asarray(cols)
        out = np.zeros(rows.size, dtype=bool)
        for (r, c), m in zip(self.blocks, self.masks):
            pr = np.full(max(r.max() + 1, rows.max() + 1), -1)
            pc = np.full(max(c.max() + 1, cols.max() + 1), -1)
            pr[r] = np.arange(r.size)
            pc[c] = np.arange(c.size)
            a, b = pr[rows], pc[cols]
            ok = (a >= 0) & (b >= 0)
            out[ok] = m[a[ok], b[ok]]
        return out

    def coupling_mass(self, coupling: Coupling) -> float:
        return float(coupling.mass[self.contains(coupling.rows, coupling.cols)].sum())


def update_exception_set(fca_costs, blocks, epsilon, coupling_weights=None) -> ExceptionSet:
    """Exempt the pairs whose aligned cost exceeds the upper ``epsilon`` quantile.

    The default quantile counts every candidate (intra-block) pair equally.
    When ``coupling_weights`` (one dense matrix per block) is given the
    quantile is taken by coupling mass instead: pairs enter in decreasing
    cost order while their total mass stays within ``epsilon``, and only
    pairs carrying mass are candidates.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    total = sum(f.size for f in fca_costs)
    if coupling_weights is None:
        thr = upper_quantile_threshold(np.concatenate([f.ravel() for f in fca_costs]),
                                       epsilon)
        if epsilon >= 1.0:
            masks = [np.ones(f.shape, dtype=bool) for f in fca_costs]
        else:
            masks = [f > thr for f in fca_costs]
        frac = sum(int(m.sum()) for m in masks) / total
        return ExceptionSet(masks, list(blocks), epsilon, thr, False, frac)

    vals = np.concatenate([f.ravel() for f in fca_costs])
    w = np.concatenate([g.ravel() for g in coupling_weights])
    if epsilon >= 1.0:
        masks = [np.ones(f.shape, dtype=bool) for f in fca_costs]
        thr = -np.inf
    else:
        cand = np.flatnonzero(w > 0)
        order = cand[np.argsort(-vals[cand], kind="stable")]
        cum = np.cumsum(w[order])
        # largest prefix within budget that does not split a tie
        k = int(np.searchsorted(cum, epsilon * (1 + 1e-12), side="right"))
        while 0 < k < order.size and vals[order[k]] == vals[order[k - 1]]:
            k -= 1
        flat = np.zeros(vals.size, dtype=bool)
        flat[order[:k]] = True
        thr = float(vals[order[k]]) if k < order.size else -np.inf
        masks, start = [], 0
        for f in fca_costs:
            masks.append(flat[start:start + f.size].reshape(f.shape))
            start += f.size
    frac = sum(int(m.sum()) for m in masks) / total
    return ExceptionSet(masks, list(blocks), epsilon, thr, True, frac)


class _ExceptionPolicy:
    """Exception-set hooks for the shared alternating engine.

    ``current`` is the set formed at the latest centers; ``used`` is the one
    the latest coupling was solved with.
    """

    def __init__(self, epsilon, weighted, enforce_budget):
        self.epsilon = epsilon
        self.weighted = weighted
        self.enforce_budget = enforce_budget
        self.current = None
        self.used = None

    def budget(self):
        if not self.enforce_budget or self.epsilon >= 1.0:
            return None
        return self.epsilon

    def masks_for_solve(self):
        self.used = self.current
        if self.epsilon == 0.0:
            return None
        return self.used.masks

    def update(self, problem, fca_costs, coupling=None):
        weights = None
        if self.weighted:
            if coupling is None:
                # no coupling yet: the product coupling stands in for it
                weights = [np.full(f.shape, 1.0 / (problem.shape[0] * problem.shape[1]))
                           for f in fca_costs]
            else:
                weights = _block_dense(problem, coupling)
        self.current = update_exception_set(fca_costs, problem.blocks, self.epsilon, weights)

    def stats(self, problem, coupling, exempt):
        self.used.mass = float(coupling.mass[exempt].sum())
        return {"w_fraction": self.used.fraction,
                "w_mass": self.used.mass,
                "w_threshold": self.used.threshold}

    def snapshot(self):
        return self.used


def _block_dense(problem, coupling):
    out = [np.zeros((r.size, c.size)) for r, c in problem.blocks]
    b = problem.blk0[coupling.rows]
    for l, m in enumerate(out):
        sel = b == l
        np.add.at(m, (problem.pos0[coupling.rows[sel]], problem.pos1[coupling.cols[sel]]),
                  coupling.mass[sel])
    return out


def fit_fcac(ds: Dataset, cfg: FcaConfig, epsilon: float,
             weighted_quantile: bool = False, enforce_budget: bool = True) -> FcaResult:
    """FCA with a fairness budget ``epsilon`` in [0, 1].

    The exception set is first formed at the initial centers. Each outer
    iteration then solves the coupling with the fair-unaware pair cost on
    exempt pairs and the aligned cost elsewhere, updates centers on aligned
    points plus the raw endpoints of exempt pairs, and re-forms the set at
    the new centers. ``epsilon = 0`` reproduces :func:`fit_fca`;
    ``epsilon = 1`` reduces to weighted Lloyd on the raw data.

    With ``enforce_budget`` the coupling step also keeps the coupling mass
    on exempt pairs within ``epsilon``; without it the coupling may route
    more mass through the (cheaper) exempt pairs than the budget allows.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return fit_engine(ds, cfg, lambda: _ExceptionPolicy(epsilon, weighted_quantile, enforce_budget))


def build_assignment_relaxed(ds: Dataset, centers, coupling: Coupling,
                             wset: ExceptionSet | None, mode="kmeans",
                             row_mass=None) -> np.ndarray:
    """Assignment mixing aligned clusters (non-exempt pairs) and raw nearest clusters.

    For a point of group 0, the weight of cluster ``k`` is its partners'
    conditional mass on non-exempt pairs whose aligned point is nearest
    ``k``, plus its conditional mass on exempt pairs when its own nearest
    center is ``k``. Group 1 is symmetric.
    """
    exempt = None
    if wset is not None:
        exempt = wset.contains(coupling.rows, coupling.cols)
    return pair_assignment(ds, centers, coupling, mode, exempt, row_mass)
