"""Coupled-cost transportation problems between two protected groups.

Couplings live on group-local indices: row ``i`` is the ``i``-th point of
group 0 and column ``j`` the ``j``-th point of group 1, both in dataset
order. Uniform marginals are ``1/n0`` per row and ``1/n1`` per column.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _netsimplex, _sinkhorn
from .data import Dataset, Partitioning

MASS_EPS = 1e-12


class SolverError(RuntimeError):
    """A transport solve failed; ``coupling`` holds the best feasible one, if any."""

    def __init__(self, message, coupling=None, block=None):
        super().__init__(message)
        self.coupling = coupling
        self.block = block


@dataclass
class Coupling:
    """Sparse nonnegative coupling matrix between group 0 and group 1."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple[int, int]
    objective: float = float("nan")
    # per-block solver state reused to warm-start the next solve
    state: list = field(default_factory=list, repr=False)

    @property
    def support_size(self) -> int:
        return int(self.mass.size)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def row_marginal(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])

    def col_marginal(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])

    def marginal_error(self) -> float:
        """Largest deviation from uniform marginals."""
        n0, n1 = self.shape
        return max(np.abs(self.row_marginal() - 1.0 / n0).max(),
                   np.abs(self.col_marginal() - 1.0 / n1).max())

    def value(self, cost: np.ndarray) -> float:
        return float(np.dot(self.mass, cost[self.rows, self.cols]))

    def to_csv(self, path, row_ids=None, col_ids=None) -> None:
        """Write ``i,j,gamma`` triplets; ids default to group-local indices."""
        r = self.rows if row_ids is None else np.asarray(row_ids)[self.rows]
        c = self.cols if col_ids is None else np.asarray(col_ids)[self.cols]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "gamma"])
            for a, b, g in zip(r, c, self.mass):
                w.writerow([int(a), int(b), repr(float(g))])


def mix_couplings(a: Coupling, b: Coupling, theta: float) -> Coupling:
    """``theta * a + (1 - theta) * b`` with duplicate entries merged."""
    rows = np.concatenate([a.rows, b.rows])
    cols = np.concatenate([a.cols, b.cols])
    mass = np.concatenate([theta * a.mass, (1.0 - theta) * b.mass])
    key = rows * a.shape[1] + cols
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.bincount(inv, weights=mass)
    keep = merged > 0
    return Coupling(uniq[keep] // a.shape[1], uniq[keep] % a.shape[1], merged[keep],
                    a.shape, state=a.state)


def read_coupling_csv(path, shape) -> Coupling:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Coupling(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                    arr[:, 2].copy(), tuple(shape))


# ---------------------------------------------------------------- costs


def transport_cost_matrix(x0, x1, pi0, pi1, mode="kmeans", weight=1.0):
    """Pairwise transport term between the groups.

    kmeans: ``weight * pi0 * pi1 * ||x0 - x1||^2``, which makes the pair cost
    ``pi0||x0-mu||^2 + pi1||x1-mu||^2`` split exactly into transport plus
    aligned clustering. kmedian: ``weight * 2 * pi0 * pi1 * ||x0 - x1||_1``,
    the L1 triangle-inequality bound (``||x0 - x1||_1 / 2`` for equal groups).
    """
    out = np.zeros((x0.shape[0], x1.shape[0]))
    for c in range(x0.shape[1]):
        diff = x0[:, c, None] - x1[None, :, c]
        if mode == "kmeans":
            out += diff * diff
        else:
            out += np.abs(diff)
    factor = pi0 * pi1 if mode == "kmeans" else 2.0 * pi0 * pi1
    return weight * factor * out


def aligned_distance_matrix(x0, x1, centers, pi0, pi1, mode="kmeans"):
    """``min_k dist(pi0*x0 + pi1*x1, mu_k)`` for every pair (squared L2 or L1)."""
    a = pi0 * x0
    b = pi1 * x1
    best = np.full((x0.shape[0], x1.shape[0]), np.inf)
    for mu in np.atleast_2d(centers):
        acc = np.zeros_like(best)
        for c in range(x0.shape[1]):
            diff = (a[:, c] - mu[c])[:, None] + b[None, :, c]
            acc += diff * diff if mode == "kmeans" else np.abs(diff)
        np.minimum(best, acc, out=best)
    return best


def build_cost_matrices(ds: Dataset, centers, mode="kmeans", transport_weight=1.0):
    """Transport matrix C and aligned-clustering matrix D for a 2-group dataset."""
    if ds.n_groups != 2:
        raise ValueError("build_cost_matrices needs exactly two groups")
    x0, x1 = ds.group_points(0), ds.group_points(1)
    pi0, pi1 = ds.pi(0), ds.pi(1)
    C = transport_cost_matrix(x0, x1, pi0, pi1, mode, transport_weight)
    D = aligned_distance_matrix(x0, x1, centers, pi0, pi1, mode)
    return C, D


# ---------------------------------------------------------------- exact LP


def _coupling_from_basis(cost, arc_i, arc_j, flow, scale):
    n0, n1 = cost.shape
    units = np.rint(flow / scale).astype(np.int64)
    keep = units > 0
    rows, cols = arc_i[keep].copy(), arc_j[keep].copy()
    mass = units[keep] / float(n0 * n1)
    order = np.lexsort((cols, rows))
    rows, cols, mass = rows[order], cols[order], mass[order]
    obj = float(np.dot(mass, cost[rows, cols]))
    return Coupling(rows, cols, mass, (n0, n1), obj, [(arc_i, arc_j, flow)])


def solve_lp(cost, warm_start=None, max_pivots=None, tol=1e-10) -> Coupling:
    """Exact optimal coupling for uniform marginals.

    Transportation simplex from a north-west-corner basis (or the basis
    stored in ``warm_start.state``), block-search pricing, and perturbed
    integer supplies so that no pivot is degenerate. The result is a vertex
    of the transportation polytope with at most ``n0 + n1 - 1`` nonzeros.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValueError("cost must be a non-empty matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    n0, n1 = cost.shape
    scale = _netsimplex.perturbation_scale(n0)
    if warm_start is not None and warm_start.state and warm_start.shape == (n0, n1):
        arc_i, arc_j, flow = (a.copy() for a in warm_start.state[0])
    else:
        arc_i, arc_j, flow = _netsimplex.northwest_corner(n0, n1, scale)
    if max_pivots is None:
        max_pivots = 1000 * (n0 + n1) + 10_000
    cmax = float(np.abs(cost).max())
    block = max(32, int(math.sqrt(n0 * n1)))
    status, _ = _netsimplex.solve_transport(
        cost, arc_i, arc_j, flow, max_pivots, tol * max(1.0, cmax), block)
    result = _coupling_from_basis(cost, arc_i, arc_j, flow, scale)
    if status != _netsimplex.OPTIMAL:
        raise SolverError(f"pivot limit {max_pivots} reached before optimality",
                          coupling=result)
    return result


# ---------------------------------------------------------------- Sinkhorn


def solve_sinkhorn(cost, reg, max_iter=10_000, tol=1e-9, warm_start=None) -> Coupling:
    """Entropic coupling minimizing ``<C, G> + reg * sum G log G`` (log domain).

    Starts from a coarse regularization and halves it down to ``reg``
    unless dual potentials from ``warm_start`` are available. Stops when
    the L1 column-marginal violation is at most ``tol``; rows are exact
    at that point.
    """
    if reg <= 0:
        raise ValueError("reg must be positive")
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n0, n1 = cost.shape
    log_a = np.full(n0, -math.log(n0))
    log_b = np.full(n1, -math.log(n1))
    if warm_start is not None and warm_start.state and warm_start.shape == (n0, n1):
        f, g = (v.copy() for v in warm_start.state[0])
        schedule = [reg]
    else:
        f, g = np.zeros(n0), np.zeros(n1)
        top = max(float(cost.max() - cost.min()), reg)
        schedule = []
        r = top
        while r > reg:
            schedule.append(r)
            r *= 0.5
        schedule.append(reg)

    used = 0
    err = np.inf
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        stage_tol = tol if last else max(tol, 1e-3)
        n, err = _sinkhorn.sweeps(cost, f, g, eps, log_a, log_b, stage_tol,
                                  max_iter - used, 1)
        used += n
        if not np.isfinite(err):
            raise SolverError("Sinkhorn scaling became non-finite; "
                              "use a larger regularization")
        if used >= max_iter:
            break

    plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
    if not np.all(np.isfinite(plan)) or np.any(plan.sum(axis=1) <= 0):
        raise SolverError("Sinkhorn plan underflowed; use a larger regularization")
    rows, cols = np.nonzero(plan > MASS_EPS * plan.sum())
    mass = plan[rows, cols]
    obj = float(np.dot(mass, cost[rows, cols]))
    out = Coupling(rows.astype(np.int64), cols.astype(np.int64), mass, (n0, n1),
                   obj, [(f, g)])
    if err > tol:
        raise SolverError(f"Sinkhorn did not reach tol={tol} in {max_iter} "
                          f"iterations (violation {err:.3g})", coupling=out)
    return out


# ---------------------------------------------------------------- blocks


@dataclass(frozen=True)
class SolverOptions:
    """``method`` is ``"lp"`` or ``"sinkhorn"``; ``reg`` is the entropic weight."""

    method: str = "lp"
    reg: float = 0.01
    max_iter: int = 10_000
    tol: float = 1e-9
    threads: int = 1

    @classmethod
    def parse(cls, text: str, **kw) -> "SolverOptions":
        """Parse ``"lp"`` or ``"sinkhorn:<reg>"``."""
        if text == "lp":
            return cls("lp", **kw)
        if text.startswith("sinkhorn"):
            _, _, reg = text.partition(":")
            return cls("sinkhorn", float(reg) if reg else 0.01, **kw)
        raise ValueError(f"unknown solver {text!r}")


def solve_one(cost, options: SolverOptions, warm_start=None) -> Coupling:
    if options.method == "lp":
        return solve_lp(cost, warm_start=warm_start)
    if options.method == "sinkhorn":
        return solve_sinkhorn(cost, options.reg, options.max_iter, options.tol,
                              warm_start=warm_start)
    raise ValueError(f"unknown solver {options.method!r}")


def local_blocks(ds: Dataset, partitioning: Partitioning):
    """Partition blocks as (group-0 local rows, group-1 local cols) pairs."""
    local = np.empty(ds.n, dtype=np.int64)
    for idx in ds.group_index:
        local[idx] = np.arange(idx.size)
    return [(local[b[0]], local[b[1]]) for b in partitioning.blocks]


def solve_blocks(
    costs: Sequence[np.ndarray],
    blocks: Sequence[tuple[np.ndarray, np.ndarray]],
    shape: tuple[int, int],
    options: SolverOptions = SolverOptions(),
    warm_start: Coupling | None = None,
) -> Coupling:
    """Solve each block and assemble ``diag(G_1 / L, ..., G_L / L)``."""
    L = len(blocks)
    prev = warm_start.state if warm_start is not None and len(warm_start.state) == L else None

    def run(l):
        warm = None
        if prev is not None:
            warm = Coupling(np.empty(0, np.int64), np.empty(0, np.int64),
                            np.empty(0), costs[l].shape, state=[prev[l]])
        try:
            return solve_one(costs[l], options, warm)
        except SolverError as exc:
            raise SolverError(f"block {l}: {exc}", exc.coupling, block=l) from exc

    if options.threads > 1 and L > 1:
        with ThreadPoolExecutor(options.threads) as pool:
            parts = list(pool.map(run, range(L)))
    else:
        parts = [run(l) for l in range(L)]

    rows = np.concatenate([blocks[l][0][p.rows] for l, p in enumerate(parts)])
    cols = np.concatenate([blocks[l][1][p.cols] for l, p in enumerate(parts)])
    mass = np.concatenate([p.mass / L for p in parts])
    obj = float(sum(p.objective for p in parts) / L)
    return Coupling(rows, cols, mass, shape, obj, [p.state[0] for p in parts])


def solve_partitioned(
    ds: Dataset,
    centers,
    partitioning: Partitioning,
    options: SolverOptions = SolverOptions(),
    mode: str = "kmeans",
    transport_weight: float = 1.0,
    warm_start: Coupling | None = None,
) -> Coupling:
    """Blockwise solve of the C + D problem over a partitioning."""
    if ds.n_groups != 2:
        raise ValueError("solve_partitioned needs exactly two groups")
    x0, x1 = ds.group_points(0), ds.group_points(1)
    pi0, pi1 = ds.pi(0), ds.pi(1)
    blocks = local_blocks(ds, partitioning)
    costs = []
    for r, c in blocks:
        if r.size == 0 or c.size == 0:
            raise ValueError("every partition block needs points from both groups")
        costs.append(transport_cost_matrix(x0[r], x1[c], pi0, pi1, mode, transport_weight)
                     + aligned_distance_matrix(x0[r], x1[c], centers, pi0, pi1, mode))
    return solve_blocks(costs, blocks, (x0.shape[0], x1.shape[0]), options, warm_start)
