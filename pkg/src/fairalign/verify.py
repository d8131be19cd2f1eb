"""Invariant battery behind ``fairalign verify``.

Each check runs on freshly generated random instances and returns
``(name, passed, detail)``.
"""

from __future__ import annotations

import numpy as np

from . import metrics, oracle
from .data import Dataset
from .fca import FcaConfig, build_assignment, fit_fca
from .transport import Coupling, mix_couplings, solve_lp, transport_cost_matrix


def _pair_dataset(x0, x1) -> Dataset:
    pts = np.concatenate([x0, x1])
    groups = np.r_[np.zeros(len(x0), int), np.ones(len(x1), int)]
    return Dataset(pts, groups)


def decomposition_gap(rng) -> float:
    """Relative gap between the direct cost of a matched, pair-labelled
    clustering and its transport-plus-midpoint decomposition."""
    n = int(rng.integers(2, 21))
    d = int(rng.integers(1, 6))
    K = int(rng.integers(1, 5))
    x0 = rng.normal(size=(n, d))
    x1 = rng.normal(size=(n, d)) + rng.normal(size=d)
    match = rng.permutation(n)
    lab = rng.integers(0, K, size=n)
    mu = rng.normal(size=(K, d))
    partner = x1[match]
    direct = metrics.cost(np.concatenate([x0, partner]), mu, np.r_[lab, lab])
    mid = 0.5 * (x0 + partner)
    parts = (np.sum((x0 - partner) ** 2, axis=1) / 4.0
             + np.sum((mid - mu[lab]) ** 2, axis=1))
    decomposed = float(parts.mean())
    return abs(direct - decomposed) / max(abs(direct), 1e-300)


def random_coupling(rng, n0, n1, vertices=3) -> Coupling:
    """Random convex combination of optimal couplings for random costs."""
    out = solve_lp(rng.random((n0, n1)))
    for v in range(1, vertices):
        theta = float(rng.uniform(0.2, 0.8))
        out = mix_couplings(out, solve_lp(rng.random((n0, n1))), theta)
    return out


def objective_gap(rng) -> float:
    """Relative gap between the coupled objective and the clustering cost of
    the assignment built from the same coupling and centers."""
    n0, n1 = (int(v) for v in rng.integers(2, 15, size=2))
    d = int(rng.integers(1, 5))
    K = int(rng.integers(1, 5))
    x0 = rng.normal(size=(n0, d))
    x1 = rng.normal(size=(n1, d)) * 1.5 + 0.5
    ds = _pair_dataset(x0, x1)
    gamma = random_coupling(rng, n0, n1)
    mu = rng.normal(size=(K, d))
    pi0, pi1 = ds.pi(0), ds.pi(1)
    C = transport_cost_matrix(x0, x1, pi0, pi1)
    t = pi0 * x0[gamma.rows] + pi1 * x1[gamma.cols]
    dist = ((t[:, None, :] - mu[None]) ** 2).sum(-1).min(axis=1)
    coupled = float(np.dot(gamma.mass, C[gamma.rows, gamma.cols] + dist))
    probs = build_assignment(ds, mu, gamma)
    sq = ((ds.points[:, None, :] - mu[None]) ** 2).sum(-1)
    # pi_s * E_s[sum_k A_s(X)_k ||X - mu_k||^2] summed over groups is the plain mean
    direct = float(np.mean(np.sum(probs * sq, axis=1)))
    return abs(direct - coupled) / max(abs(coupled), 1e-300)


def lp_check(rng, fault=None):
    """LP objective versus permutation enumeration, plus marginals."""
    n = int(rng.integers(1, 7))
    cost = rng.integers(0, 20, size=(n, n)).astype(float)
    cp = solve_lp(cost)
    if fault == "marginals":
        cp = Coupling(cp.rows, cp.cols, cp.mass * 1.01, cp.shape, cp.objective)
    ref, _ = oracle.brute_force_coupling(cost)
    obj_ok = abs(cp.value(cost) - ref) <= 1e-9 * max(1.0, abs(ref))
    marg_ok = cp.marginal_error() <= 1e-8
    perm_ok = cp.support_size == n and np.allclose(cp.mass, 1.0 / n, atol=1e-10)
    return obj_ok, marg_ok, perm_ok


def oracle_check(rng) -> tuple[bool, float]:
    x0 = rng.normal(size=(3, 1))
    x1 = rng.normal(size=(3, 1)) + 1.0
    ds = _pair_dataset(x0, x1)
    ref, _, _ = oracle.brute_force_fair_kmeans(ds, 2)
    res = fit_fca(ds, FcaConfig(K=2, restarts=10, seed=int(rng.integers(1 << 31))))
    gap = (res.report.cost - ref) / max(ref, 1e-300)
    return gap <= 1e-6, gap


def run_battery(seed=0, instances=10, fault=None):
    rng = np.random.default_rng(seed)
    rows = []

    gaps = [decomposition_gap(rng) for _ in range(instances)]
    rows.append(("decomposition identity", max(gaps) <= 1e-9, f"max rel gap {max(gaps):.2e}"))

    gaps = [objective_gap(rng) for _ in range(instances)]
    rows.append(("objective identity", max(gaps) <= 1e-9, f"max rel gap {max(gaps):.2e}"))

    lp = [lp_check(rng, fault) for _ in range(instances)]
    rows.append(("lp optimality", all(r[0] for r in lp), f"{sum(r[0] for r in lp)}/{len(lp)}"))
    rows.append(("coupling marginals", all(r[1] for r in lp),
                 f"{sum(r[1] for r in lp)}/{len(lp)}"))
    rows.append(("permutation structure", all(r[2] for r in lp),
                 f"{sum(r[2] for r in lp)}/{len(lp)}"))

    n_or = max(1, min(instances, 5))
    res = [oracle_check(rng) for _ in range(n_or)]
    hits = sum(ok for ok, _ in res)
    rows.append(("oracle equivalence", hits >= n_or - (n_or // 10),
                 f"{hits}/{n_or} (worst rel gap {max(g for _, g in res):.2e})"))
    return rows
