"""Fair clustering via alignment: alternate an optimal coupling between the
groups with weighted clustering of the aligned (matched and averaged) points.

The engine here also serves the exception-set variant in :mod:`fcac`; with
an empty exception set both give identical results.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from . import metrics
from .clustering import (as_points, assign_nearest, kmeanspp_init, lloyd_weighted,
                         pairwise_distance)
from .data import Dataset, Partitioning, full_partitioning, make_partitioning
from .transport import (Coupling, SolverError, SolverOptions, aligned_distance_matrix,
                        local_blocks, mix_couplings, solve_blocks, transport_cost_matrix)

log = logging.getLogger(__name__)

MODES = ("kmeans", "kmedian")


class FitError(RuntimeError):
    """Fitting failed; the message names the outer iteration."""


@dataclass(frozen=True)
class FcaConfig:
    """Settings shared by the FCA and FCA-C fits.

    ``transport_weight`` multiplies the pairwise transport term. The value 1
    makes the coupled objective equal the group-weighted clustering cost;
    2 gives the doubled variant.
    """

    K: int
    max_outer_iter: int = 100
    center_tol: float = 1e-5
    solver: SolverOptions = SolverOptions()
    partition_m: int | None = None
    mode: str = "kmeans"
    seed: int = 0
    restarts: int = 1
    transport_weight: float = 1.0
    lloyd_max_iter: int = 300
    lloyd_tol: float = 1e-6
    multigroup_block: int = 32

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.transport_weight < 0:
            raise ValueError("transport_weight must be nonnegative")

    @property
    def metric(self) -> str:
        return "l2sq" if self.mode == "kmeans" else "l1"


@dataclass
class FcaResult:
    """Best iterate of a fit, chosen by deterministic Cost.

    ``probs`` is the n x K assignment in dataset order and ``labels`` its
    argmax rounding. ``history`` has one dict per outer iteration of the
    winning restart.
    """

    centers: np.ndarray
    probs: np.ndarray
    labels: np.ndarray
    coupling: Coupling | None
    history: list[dict]
    best_iter: int
    report: metrics.MetricReport
    restart: int = 0
    exception_set: object = None
    restart_costs: list[float] = field(default_factory=list)


def alignment_map(x0, x1, pi0, pi1):
    """``pi0 * x0 + pi1 * x1``, the point a matched pair is sent to."""
    if pi0 < 0 or pi1 < 0 or not math.isclose(pi0 + pi1, 1.0, abs_tol=1e-12):
        raise ValueError("pi0 and pi1 must be nonnegative and sum to 1")
    return pi0 * np.asarray(x0, dtype=np.float64) + pi1 * np.asarray(x1, dtype=np.float64)


def initial_centers(ds: Dataset, K: int, seed: int, restart: int = 0):
    """k-means++ centers on the pooled raw points, plus the restart's RNG."""
    rng = np.random.default_rng([seed, restart])
    return kmeanspp_init(ds.points, None, K, rng), rng


def expected_row_mass(ds: Dataset, partitioning: Partitioning) -> np.ndarray:
    """Mass each point carries in a blockwise coupling, in dataset order."""
    mass = np.empty(ds.n)
    L = partitioning.L
    for block in partitioning.blocks:
        for idx in block:
            mass[idx] = 1.0 / (L * idx.size)
    return mass


def _rows_to_probs(n, owner, labels, weight, K):
    """Accumulate pair weights into an n x K table by (point, label)."""
    flat = np.bincount(owner * K + labels, weights=weight, minlength=n * K)
    return flat.reshape(n, K)


def _normalize_rows(table, expected, tol=1e-6):
    mass = table.sum(axis=1)
    if np.any(mass <= 0):
        raise ValueError("a point carries no coupling mass")
    dev = np.abs(mass / expected - 1.0)
    if dev.max() > tol:
        i = int(np.argmax(dev))
        raise ValueError(f"coupling row mass {mass[i]:.6g} at point {i} "
                         f"inconsistent with expected {expected[i]:.6g}")
    return table / mass[:, None]


def pair_assignment(ds: Dataset, centers, coupling: Coupling, mode="kmeans",
                    exempt=None, row_mass=None):
    """Assignment probabilities from a coupling, optionally with exempt pairs.

    Aligned pairs send both endpoints to the cluster nearest their aligned
    point. Exempt pairs (``exempt[t]`` true for support entry ``t``) send
    each endpoint to its own nearest cluster. Each point's row is then
    divided by its coupling mass.
    """
    metric = "l2sq" if mode == "kmeans" else "l1"
    centers = as_points(centers)
    K = centers.shape[0]
    g0, g1 = ds.group_index[0], ds.group_index[1]
    x0, x1 = ds.points[g0], ds.points[g1]
    pi0, pi1 = ds.pi(0), ds.pi(1)
    rows, cols, mass = coupling.rows, coupling.cols, coupling.mass
    lab0 = np.empty(rows.size, dtype=np.int64)
    lab1 = np.empty(rows.size, dtype=np.int64)
    aligned = np.ones(rows.size, dtype=bool) if exempt is None else ~np.asarray(exempt)
    if aligned.any():
        t = pi0 * x0[rows[aligned]] + pi1 * x1[cols[aligned]]
        lab = assign_nearest(t, centers, metric)
        lab0[aligned] = lab
        lab1[aligned] = lab
    if not aligned.all():
        raw0 = assign_nearest(x0, centers, metric)
        raw1 = assign_nearest(x1, centers, metric)
        lab0[~aligned] = raw0[rows[~aligned]]
        lab1[~aligned] = raw1[cols[~aligned]]
    owner0 = g0[rows]
    owner1 = g1[cols]
    table = (_rows_to_probs(ds.n, owner0, lab0, mass, K)
             + _rows_to_probs(ds.n, owner1, lab1, mass, K))
    if row_mass is None:
        row_mass = np.where(ds.groups == 0, 1.0 / g0.size, 1.0 / g1.size)
    return _normalize_rows(table, row_mass)


def build_assignment(ds: Dataset, centers, coupling: Coupling, mode="kmeans",
                     row_mass=None) -> np.ndarray:
    """Fair assignment: each point takes its partners' aligned clusters.

    Row ``i`` of group ``s`` is ``sum_j n_s * gamma_ij * onehot(k_ij)`` where
    ``k_ij`` is the cluster nearest to the aligned point of pair ``(i, j)``.
    ``row_mass`` gives the expected per-point coupling mass (default
    ``1 / n_s``); a deviation above 1e-6 relative raises ``ValueError``.
    """
    return pair_assignment(ds, centers, coupling, mode, None, row_mass)


# ---------------------------------------------------------------- engine


class _Problem:
    """Per-fit constants: group blocks and the center-independent transport costs."""

    def __init__(self, ds: Dataset, cfg: FcaConfig, partitioning: Partitioning):
        self.ds = ds
        self.cfg = cfg
        self.partitioning = partitioning
        self.g0, self.g1 = ds.group_index
        self.x0, self.x1 = ds.points[self.g0], ds.points[self.g1]
        self.pi0, self.pi1 = ds.pi(0), ds.pi(1)
        self.blocks = local_blocks(ds, partitioning)
        for r, c in self.blocks:
            if r.size == 0 or c.size == 0:
                raise ValueError("every partition block needs points from both groups")
        self.C = [transport_cost_matrix(self.x0[r], self.x1[c], self.pi0, self.pi1,
                                        cfg.mode, cfg.transport_weight)
                  for r, c in self.blocks]
        self.row_mass = expected_row_mass(ds, partitioning)
        self.shape = (self.g0.size, self.g1.size)
        # block id and within-block position of every local row / column
        self.blk0 = np.empty(self.shape[0], np.int64)
        self.pos0 = np.empty(self.shape[0], np.int64)
        self.blk1 = np.empty(self.shape[1], np.int64)
        self.pos1 = np.empty(self.shape[1], np.int64)
        for l, (r, c) in enumerate(self.blocks):
            self.blk0[r], self.pos0[r] = l, np.arange(r.size)
            self.blk1[c], self.pos1[c] = l, np.arange(c.size)

    def pair_fca_costs(self, centers):
        """Transport plus aligned-clustering cost for every intra-block pair."""
        return [C + aligned_distance_matrix(self.x0[r], self.x1[c], centers,
                                            self.pi0, self.pi1, self.cfg.mode)
                for C, (r, c) in zip(self.C, self.blocks)]

    def raw_distances(self, centers):
        m = self.cfg.metric
        d0 = pairwise_distance(self.x0, centers, m).min(axis=1)
        d1 = pairwise_distance(self.x1, centers, m).min(axis=1)
        return d0, d1

    def pair_kmeans_costs(self, centers):
        """Fair-unaware pair cost ``pi0 d(x_i) + pi1 d(x_j)`` per block."""
        d0, d1 = self.raw_distances(centers)
        return [self.pi0 * d0[r][:, None] + self.pi1 * d1[c][None, :]
                for r, c in self.blocks]

    def support_mask(self, masks, coupling):
        """Look up per-block pair masks at the coupling's support entries."""
        out = np.zeros(coupling.rows.size, dtype=bool)
        if masks is None:
            return out
        b = self.blk0[coupling.rows]
        for l, m in enumerate(masks):
            sel = np.flatnonzero(b == l)
            out[sel] = m[self.pos0[coupling.rows[sel]], self.pos1[coupling.cols[sel]]]
        return out

    def phase2_points(self, coupling, exempt):
        """Weighted point set for the center update.

        Aligned points carry the pair mass; exempt pairs contribute their raw
        endpoints with weights ``pi0 * gamma`` and ``pi1 * gamma``, summed per
        point.
        """
        rows, cols, mass = coupling.rows, coupling.cols, coupling.mass
        keep = ~exempt
        pts = [self.pi0 * self.x0[rows[keep]] + self.pi1 * self.x1[cols[keep]]]
        wts = [mass[keep]]
        if exempt.any():
            w0 = np.bincount(rows[exempt], weights=self.pi0 * mass[exempt],
                             minlength=self.shape[0])
            w1 = np.bincount(cols[exempt], weights=self.pi1 * mass[exempt],
                             minlength=self.shape[1])
            on0, on1 = w0 > 0, w1 > 0
            pts += [self.x0[on0], self.x1[on1]]
            wts += [w0[on0], w1[on1]]
        return np.concatenate(pts), np.concatenate(wts)

    def support_objective(self, coupling, exempt, centers):
        """Coupled objective at the coupling's support for the given centers."""
        rows, cols, mass = coupling.rows, coupling.cols, coupling.mass
        m = self.cfg.metric
        diff = self.x0[rows] - self.x1[cols]
        if self.cfg.mode == "kmeans":
            trans = self.pi0 * self.pi1 * np.einsum("ij,ij->i", diff, diff)
        else:
            trans = 2.0 * self.pi0 * self.pi1 * np.abs(diff).sum(axis=1)
        trans *= self.cfg.transport_weight
        t = self.pi0 * self.x0[rows] + self.pi1 * self.x1[cols]
        aligned = trans + pairwise_distance(t, centers, m).min(axis=1)
        val = np.where(exempt, 0.0, aligned)
        if exempt.any():
            d0, d1 = self.raw_distances(centers)
            val = np.where(exempt, self.pi0 * d0[rows] + self.pi1 * d1[cols], val)
        return float(np.dot(mass, val))


def _solve_within_budget(problem, costs, masks, budget, warm, max_steps=8):
    """Coupling minimizing the mixed cost subject to exempt mass <= ``budget``.

    The side constraint is dualized: exempt pairs pay an extra ``lam``.
    Starting from the brackets ``lam = 0`` (mass above budget) and a large
    penalty (mass within budget), ``lam`` jumps to where the two bracketing
    solutions have equal penalized cost; when the solve there finds nothing
    cheaper, that ``lam`` is the breakpoint. The bracketing couplings are
    then mixed so the exempt mass equals the budget, which is optimal for
    the constrained problem.
    """
    cfg = problem.cfg

    def solve(lam, start):
        shifted = costs if lam == 0.0 else [c + lam * m for c, m in zip(costs, masks)]
        cp = solve_blocks(shifted, problem.blocks, problem.shape, cfg.solver,
                          warm_start=start)
        _restore_objective(problem, cp, costs)
        q = float(cp.mass[problem.support_mask(masks, cp)].sum())
        return cp, q

    hi_cp, hi_q = solve(0.0, warm)
    if hi_q <= budget:
        return hi_cp
    span = max(float(max(c.max() for c in costs) - min(c.min() for c in costs)), 1e-12)
    lo_cp, lo_q = solve(2.0 * span, hi_cp)
    if lo_q > budget:
        log.warning("exempt mass %.4g exceeds the budget %.4g at any penalty", lo_q, budget)
        return lo_cp
    for _ in range(max_steps):
        if hi_q - lo_q <= 1e-15:
            break
        lam = (lo_cp.objective - hi_cp.objective) / (hi_q - lo_q)
        cp, q = solve(lam, lo_cp)
        ref = lo_cp.objective + lam * lo_q
        if cp.objective + lam * q >= ref - 1e-12 * (abs(ref) + 1.0):
            break
        if q <= budget:
            lo_cp, lo_q = cp, q
        else:
            hi_cp, hi_q = cp, q
    theta = 1.0 if hi_q - lo_q <= 1e-15 else (hi_q - budget) / (hi_q - lo_q)
    return _restore_objective(problem, mix_couplings(lo_cp, hi_cp, theta), costs)


def _restore_objective(problem, coupling, costs):
    """Objective of ``coupling`` under the unpenalized block costs."""
    b = problem.blk0[coupling.rows]
    val = 0.0
    for l, c in enumerate(costs):
        sel = b == l
        val += float(np.dot(coupling.mass[sel],
                            c[problem.pos0[coupling.rows[sel]], problem.pos1[coupling.cols[sel]]]))
    coupling.objective = val
    return coupling


class _NoExceptions:
    """Exception-set policy of plain FCA: no pair is ever exempt."""

    def masks_for_solve(self):
        return None

    def budget(self):
        return None

    def update(self, problem, fca_costs, coupling=None):
        return None

    def stats(self, problem, coupling, exempt):
        return {}

    def snapshot(self):
        return None


def _run_once(problem: _Problem, centers, policy, restart: int):
    cfg = problem.cfg
    ds = problem.ds
    fca_costs = problem.pair_fca_costs(centers)
    policy.update(problem, fca_costs)
    coupling = None
    history = []
    best = None
    for it in range(cfg.max_outer_iter):
        # Phase 1: coupling for the current centers and exception set
        masks = policy.masks_for_solve()
        if masks is None:
            costs = fca_costs
        else:
            kmc = problem.pair_kmeans_costs(centers)
            costs = [np.where(m, k, f) for m, k, f in zip(masks, kmc, fca_costs)]
        try:
            budget = policy.budget() if masks is not None else None
            if budget is None:
                coupling = solve_blocks(costs, problem.blocks, problem.shape,
                                        cfg.solver, warm_start=coupling)
            else:
                coupling = _solve_within_budget(problem, costs, masks, budget, coupling)
        except SolverError as exc:
            raise FitError(f"outer iteration {it}: {exc}") from exc
        exempt = problem.support_mask(masks, coupling)

        # Phase 2: weighted clustering on aligned (and exempt raw) points
        pts, wts = problem.phase2_points(coupling, exempt)
        fit = lloyd_weighted(pts, wts, centers, cfg.mode, cfg.lloyd_max_iter, cfg.lloyd_tol)
        shift = float(np.linalg.norm(fit.centers - centers, axis=1).max())
        centers = fit.centers

        probs = pair_assignment(ds, centers, coupling, cfg.mode,
                                exempt if masks is not None else None, problem.row_mass)
        labels = metrics.round_deterministic(probs)
        entry = {
            "iter": it,
            "cost": metrics.cost(ds.points, centers, labels, cfg.metric),
            "balance": metrics.balance(labels, ds.groups, cfg.K),
            "objective": problem.support_objective(coupling, exempt, centers),
            "center_shift": shift,
        }
        entry.update(policy.stats(problem, coupling, exempt))
        history.append(entry)
        if best is None or entry["cost"] < best[0]["cost"]:
            best = (entry, centers, probs, labels, coupling, policy.snapshot())

        # Phase 3 (exception sets only) uses the updated centers
        fca_costs = problem.pair_fca_costs(centers)
        policy.update(problem, fca_costs, coupling)
        if shift < cfg.center_tol:
            break
    entry, centers, probs, labels, coupling, wset = best
    log.debug("restart %d: best iter %d cost %.6g", restart, entry["iter"], entry["cost"])
    return history, entry["iter"], centers, probs, labels, coupling, wset


def make_fit_partitioning(ds: Dataset, cfg: FcaConfig, rng) -> Partitioning:
    if cfg.partition_m is None or cfg.partition_m >= ds.n:
        return full_partitioning(ds)
    return make_partitioning(ds, cfg.partition_m, seed=int(rng.integers(2**32)))


def fit_engine(ds: Dataset, cfg: FcaConfig, make_policy) -> FcaResult:
    """Run ``cfg.restarts`` alternating fits and keep the lowest-Cost one."""
    if ds.n_groups != 2:
        raise ValueError("this fit needs exactly two groups")
    results = []
    for r in range(cfg.restarts):
        centers, rng = initial_centers(ds, cfg.K, cfg.seed, r)
        problem = _Problem(ds, cfg, make_fit_partitioning(ds, cfg, rng))
        t0 = time.perf_counter()
        out = _run_once(problem, centers, make_policy(), r)
        log.info("restart %d finished in %.2fs", r, time.perf_counter() - t0)
        results.append(out)
    costs = [res[0][res[1]]["cost"] for res in results]
    r = int(np.argmin(costs))
    history, best_iter, centers, probs, labels, coupling, wset = results[r]
    report = metrics.evaluate(ds.points, ds.groups, centers, probs)
    return FcaResult(centers, probs, labels, coupling, history, best_iter, report,
                     r, wset, costs)


def fit_fca(ds: Dataset, cfg: FcaConfig) -> FcaResult:
    """Alternate the optimal coupling and weighted clustering of aligned points.

    Each outer iteration solves the coupling for transport plus aligned
    clustering cost at the current centers (blockwise when
    ``cfg.partition_m`` is set), then runs weighted Lloyd on the aligned
    points of the coupling's support. The iterate with the lowest
    deterministic Cost is returned.
    """
    return fit_engine(ds, cfg, _NoExceptions)


# ---------------------------------------------------------------- multi-group


def _tensor_lp(blocks_x, pis, centers, mode):
    """Exact multi-marginal coupling for one block of G <= 3 groups."""
    sizes = [x.shape[0] for x in blocks_x]
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    idx = [g.ravel() for g in grids]
    t = sum(p * x[i] for p, x, i in zip(pis, blocks_x, idx))
    trans = sum(p * np.einsum("ij,ij->i", x[i] - t, x[i] - t)
                for p, x, i in zip(pis, blocks_x, idx))
    cost = trans + pairwise_distance(t, centers, "l2sq").min(axis=1)
    n_var = cost.size
    a_rows, a_cols, b = [], [], []
    offset = 0
    for s, size in enumerate(sizes):
        a_rows.append(offset + idx[s])
        a_cols.append(np.arange(n_var))
        b.append(np.full(size, 1.0 / size))
        offset += size
    A = csr_matrix((np.ones(n_var * len(sizes)),
                    (np.concatenate(a_rows), np.concatenate(a_cols))),
                   shape=(offset, n_var))
    res = linprog(cost, A_eq=A, b_eq=np.concatenate(b), bounds=(0, None),
                  method="highs-ds")
    if res.status != 0:
        raise SolverError(f"multi-group LP failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    keep = x > 1e-15
    return [i[keep] for i in idx], x[keep], t[keep], float(np.dot(cost, res.x))


def fit_fca_multigroup(ds: Dataset, cfg: FcaConfig) -> FcaResult:
    """FCA for two or three groups.

    Two groups delegate to :func:`fit_fca`. Three groups split each group
    into blocks of at most ``cfg.multigroup_block`` points and solve the
    three-way coupling in each block as an explicit LP. Tuples are aligned
    to ``sum_s pi_s x_s`` and every member of a tuple takes the tuple's
    cluster.
    """
    G = ds.n_groups
    if G == 2:
        return fit_fca(ds, cfg)
    if G > 3:
        raise ValueError(f"unsupported configuration: {G} groups (at most 3)")
    if cfg.mode != "kmeans":
        raise ValueError("unsupported configuration: kmedian with more than two groups")
    if cfg.multigroup_block > 64:
        raise ValueError("multigroup_block is capped at 64 points per group")
    pis = [ds.pi(s) for s in range(G)]
    results = []
    for r in range(cfg.restarts):
        centers, rng = initial_centers(ds, cfg.K, cfg.seed, r)
        L = max(1, math.ceil(ds.group_sizes.max() / cfg.multigroup_block))
        L = min(L, int(ds.group_sizes.min()))
        chunks = [np.array_split(rng.permutation(idx), L) for idx in ds.group_index]
        row_mass = np.empty(ds.n)
        for s in range(G):
            for ch in chunks[s]:
                row_mass[ch] = 1.0 / (L * ch.size)
        history = []
        best = None
        for it in range(cfg.max_outer_iter):
            owners, masses, aligned = [], [], []
            for l in range(L):
                members = [chunks[s][l] for s in range(G)]
                try:
                    idx, mass, t, _ = _tensor_lp([ds.points[m] for m in members], pis,
                                                 centers, cfg.mode)
                except SolverError as exc:
                    raise FitError(f"outer iteration {it}: block {l}: {exc}") from exc
                owners.append(np.stack([m[i] for m, i in zip(members, idx)], axis=1))
                masses.append(mass / L)
                aligned.append(t)
            owners = np.concatenate(owners)
            masses = np.concatenate(masses)
            aligned = np.concatenate(aligned)
            fit = lloyd_weighted(aligned, masses, centers, "kmeans",
                                 cfg.lloyd_max_iter, cfg.lloyd_tol)
            shift = float(np.linalg.norm(fit.centers - centers, axis=1).max())
            centers = fit.centers
            lab = assign_nearest(aligned, centers)
            table = sum(_rows_to_probs(ds.n, owners[:, s], lab, masses, cfg.K)
                        for s in range(G))
            probs = _normalize_rows(table, row_mass)
            labels = metrics.round_deterministic(probs)
            entry = {"iter": it,
                     "cost": metrics.cost(ds.points, centers, labels),
                     "balance": metrics.balance(labels, ds.groups, cfg.K),
                     "objective": fit.objective + float(np.dot(
                         masses, sum(p * np.einsum("ij,ij->i", ds.points[owners[:, s]] - aligned,
                                                   ds.points[owners[:, s]] - aligned)
                                     for s, p in enumerate(pis)))),
                     "center_shift": shift}
            history.append(entry)
            if best is None or entry["cost"] < best[0]["cost"]:
                best = (entry, centers, probs, labels)
            if shift < cfg.center_tol:
                break
        results.append((history, best))
    costs = [b[0]["cost"] for _, b in results]
    r = int(np.argmin(costs))
    history, (entry, centers, probs, labels) = results[r]
    report = metrics.evaluate(ds.points, ds.groups, centers, probs)
    return FcaResult(centers, probs, labels, None, history, entry["iter"], report, r,
                     None, costs)
