"""Acceptance criteria 1-13, one test each, at the stated tolerances."""

import os
import time

import numpy as np
import pytest

from fairalign import metrics
from fairalign.clustering import lloyd_weighted
from fairalign.data import SyntheticSpec, generate_synthetic, load_csv, preprocess
from fairalign.fca import FcaConfig, fit_fca, fit_fca_multigroup, initial_centers
from fairalign.fcac import fit_fcac
from fairalign.oracle import brute_force_coupling, brute_force_fair_kmeans
from fairalign.transport import SolverOptions, solve_lp
from fairalign.verify import _pair_dataset, decomposition_gap, objective_gap

pytestmark = pytest.mark.acceptance

# fcac runs from criteria 6 and 7, checked against the balance bound in criterion 8
_FCAC_RUNS = []


def _bound_check(res, ds, epsilon):
    lhs, c = metrics.balance_bound_terms(res.probs, ds.groups)
    _FCAC_RUNS.append((epsilon, lhs, c))


def test_c01_decomposition_identity(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    gaps = [decomposition_gap(rng) for _ in range(100)]
    dt = time.perf_counter() - t0
    criterion(1, max(gaps) <= 1e-9 and dt < 5,
              f"max rel gap {max(gaps):.1e} over 100 instances, {dt:.2f}s")


def test_c02_objective_identity(criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    gaps = [objective_gap(rng) for _ in range(50)]
    dt = time.perf_counter() - t0
    criterion(2, max(gaps) <= 1e-9 and dt < 5,
              f"max rel gap {max(gaps):.1e} over 50 couplings, {dt:.2f}s")


def test_c03_lp_correctness(criterion):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst_obj = worst_marg = 0.0
    perm_ok = True
    for _ in range(200):
        n = int(rng.integers(1, 7))
        cost = rng.random((n, n)) * rng.choice([1.0, 100.0])
        cp = solve_lp(cost)
        ref, _ = brute_force_coupling(cost)
        worst_obj = max(worst_obj, abs(cp.objective - ref))
        worst_marg = max(worst_marg, cp.marginal_error(), abs(cp.mass.sum() - 1))
        perm_ok &= cp.support_size == n and bool(np.all(np.abs(cp.mass - 1 / n) <= 1e-10))
    dt = time.perf_counter() - t0
    ok = worst_obj <= 1e-9 and worst_marg <= 1e-8 and perm_ok and dt < 10
    criterion(3, ok, f"obj gap {worst_obj:.1e}, marginal err {worst_marg:.1e}, "
                     f"permutations {perm_ok}, {dt:.2f}s")


def test_c04_oracle_optimality(criterion):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    gaps = []
    for i in range(20):
        ds = _pair_dataset(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)) + rng.normal())
        ref, _, _ = brute_force_fair_kmeans(ds, 2)
        res = fit_fca(ds, FcaConfig(K=2, restarts=10, seed=i))
        gaps.append((res.report.cost - ref) / ref)
    dt = time.perf_counter() - t0
    hits = sum(g <= 1e-6 for g in gaps)
    criterion(4, hits >= 18 and min(gaps) >= -1e-9 and dt < 60,
              f"{hits}/20 within 1e-6 (worst gap {max(gaps):.1e}), {dt:.1f}s")


def test_c05_perfect_fairness(criterion):
    t0 = time.perf_counter()
    ratios, gaps = [], []
    for seed in range(5):
        ds = generate_synthetic(SyntheticSpec(n=2000, d=2, J=4, seed=seed))
        res = fit_fca(ds, FcaConfig(K=5, seed=seed))
        ratios.append(res.report.balance / res.report.balance_star)
        gaps.append(res.report.fairness_gap)
    dt = time.perf_counter() - t0
    ok = min(ratios) >= 0.95 and max(gaps) <= 1e-6 and dt < 120
    criterion(5, ok, f"min Balance/Bal* {min(ratios):.3f}, max gap {max(gaps):.1e}, {dt:.1f}s")


def test_c06_epsilon_reductions(criterion):
    t0 = time.perf_counter()
    worst0 = 0.0
    label_ok = True
    worst1 = 0.0
    for seed in range(5):
        ds = generate_synthetic(SyntheticSpec(n=2000, d=2, J=4, seed=seed))
        cfg = FcaConfig(K=5, seed=seed)
        fca = fit_fca(ds, cfg)
        zero = fit_fcac(ds, cfg, 0.0)
        _bound_check(zero, ds, 0.0)
        for key, val in fca.report.to_dict().items():
            if val is not None:
                worst0 = max(worst0, abs(zero.report.to_dict()[key] - val))
        one = fit_fcac(ds, cfg, 1.0)
        _bound_check(one, ds, 1.0)
        init, _ = initial_centers(ds, 5, seed)
        ref = lloyd_weighted(ds.points, None, init)
        label_ok &= bool(np.array_equal(one.labels, ref.labels))
        worst1 = max(worst1, abs(one.report.cost - ref.objective) / ref.objective)
    dt = time.perf_counter() - t0
    ok = worst0 <= 1e-9 and label_ok and worst1 <= 0.01 and dt < 120
    criterion(6, ok, f"eps=0 max metric diff {worst0:.1e}; eps=1 labels equal {label_ok}, "
                     f"cost rel diff {worst1:.1e}; {dt:.1f}s")


def test_c07_tradeoff_monotonicity(criterion):
    t0 = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(n=1000, d=2, J=4, seed=7))
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    costs, bals = [], []
    for eps in grid:
        runs = []
        for seed in range(3):
            res = fit_fcac(ds, FcaConfig(K=5, seed=seed), eps)
            _bound_check(res, ds, eps)
            runs.append(res)
        best = min(runs, key=lambda r: r.report.cost)
        costs.append(best.report.cost)
        bals.append(best.report.balance)
    dt = time.perf_counter() - t0
    bal_ok = all(b <= a + 0.02 for a, b in zip(bals, bals[1:]))
    cost_ok = all(b <= a * 1.01 for a, b in zip(costs, costs[1:]))
    detail = ("Balance " + " ".join(f"{b:.3f}" for b in bals)
              + "; Cost " + " ".join(f"{c:.3f}" for c in costs) + f"; {dt:.1f}s")
    criterion(7, bal_ok and cost_ok and dt < 300, detail)


def test_c08_balance_bound(criterion):
    if not _FCAC_RUNS:
        pytest.skip("criteria 6-7 did not run")
    checked = [(e, lhs, c) for e, lhs, c in _FCAC_RUNS if np.isfinite(c)]
    bad = [(e, lhs, c) for e, lhs, c in checked if lhs > c * e + 1e-6]
    criterion(8, not bad, f"{len(checked)}/{len(_FCAC_RUNS)} runs checkable, "
                          f"{len(bad)} violations")


def test_c09_partition_fidelity(criterion):
    ds = generate_synthetic(SyntheticSpec(n=4000, d=2, J=4, seed=9))
    t0 = time.perf_counter()
    part = fit_fca(ds, FcaConfig(K=5, seed=0, partition_m=256))
    t_part = time.perf_counter() - t0
    t0 = time.perf_counter()
    full = fit_fca(ds, FcaConfig(K=5, seed=0))
    t_full = time.perf_counter() - t0
    dc = abs(part.report.cost - full.report.cost) / full.report.cost
    db = abs(part.report.balance - full.report.balance)
    ok = dc <= 0.05 and db <= 0.03 and t_part < t_full
    criterion(9, ok, f"cost diff {dc:.2%}, balance diff {db:.3f}, "
                     f"time {t_part:.1f}s vs {t_full:.1f}s")


def test_c10_sinkhorn_parity(criterion):
    ds = generate_synthetic(SyntheticSpec(n=1000, d=2, J=4, seed=0))
    out = {}
    for name in ("lp", "sinkhorn:0.01", "sinkhorn:1.0"):
        res = fit_fca(ds, FcaConfig(K=5, seed=0, solver=SolverOptions.parse(name)))
        out[name] = res.report
    lp, sk, rough = out["lp"], out["sinkhorn:0.01"], out["sinkhorn:1.0"]
    dc = abs(sk.cost - lp.cost) / lp.cost
    db = abs(sk.balance - lp.balance)
    drop = lp.balance - rough.balance
    ok = dc <= 0.02 and db <= 0.01 and drop >= 0.05
    criterion(10, ok, f"reg 0.01: cost diff {dc:.2%}, balance diff {db:.3f}; "
                      f"reg 1.0 balance drop {drop:.3f}")


def test_c11_adult_spot_check(criterion):
    path = os.environ.get("FAIRALIGN_ADULT_CSV")
    if not path or not os.path.exists(path):
        criterion(11, False, "Adult CSV not available (set FAIRALIGN_ADULT_CSV)", skipped=True)
    features = os.environ.get("FAIRALIGN_ADULT_FEATURES")
    ds = load_csv(path, os.environ.get("FAIRALIGN_ADULT_GROUP", "sex"),
                  features.split(",") if features else None)
    ds = preprocess(ds, l2_normalize=True)
    res = fit_fca(ds, FcaConfig(K=10, partition_m=1024, seed=7))
    r = res.report
    criterion(11, 0.31 <= r.cost <= 0.35 and r.balance >= 0.49,
              f"Cost {r.cost:.3f}, Balance {r.balance:.3f}, Bal* {r.balance_star:.3f}")


def test_c12_multigroup(criterion):
    ds = generate_synthetic(SyntheticSpec(n=600, d=2, J=6, seed=12, n_groups=3,
                                          equal_groups=True))
    res = fit_fca_multigroup(ds, FcaConfig(K=3, seed=0))
    ratio = res.report.balance / metrics.balance_star(ds.groups)
    two = generate_synthetic(SyntheticSpec(n=400, d=2, J=4, seed=12))
    a = fit_fca_multigroup(two, FcaConfig(K=3, seed=1))
    b = fit_fca(two, FcaConfig(K=3, seed=1))
    same = (np.array_equal(a.centers, b.centers) and np.array_equal(a.probs, b.probs)
            and a.history == b.history)
    criterion(12, ratio >= 0.9 and same,
              f"3-group Balance/Bal* {ratio:.3f}; G=2 bit-identical {same}")


def test_c13_kmedian(criterion):
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(20):
        x = np.round(rng.normal(size=int(rng.integers(2, 15))), 3)
        w = rng.random(x.size) + 0.05
        w /= w.sum()
        med = lloyd_weighted(x, w, np.array([[x[0]]]), "kmedian").centers[0, 0]
        # the L1 objective is piecewise linear with kinks at the data, so the grid includes them
        grid = np.union1d(np.linspace(x.min(), x.max(), 20001), x)
        vals = np.abs(x[None] - grid[:, None]) @ w
        best = grid[np.isclose(vals, vals.min(), rtol=0, atol=1e-12)]
        worst = max(worst, float(np.min(np.abs(best - med))))
    bal_ok = True
    for seed in range(3):
        pts = np.random.default_rng(seed).normal(size=(40, 2))
        ds = _pair_dataset(pts, pts.copy())
        res = fit_fca(ds, FcaConfig(K=3, seed=seed, mode="kmedian"))
        bal_ok &= res.report.balance == res.report.balance_star
    criterion(13, worst <= 1e-6 and bal_ok,
              f"median vs grid max diff {worst:.1e}; duplicated-group Balance = Bal* {bal_ok}")
