import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairalign.data import Dataset, SyntheticSpec, full_partitioning, generate_synthetic, make_partitioning
from fairalign.fca import FcaConfig, fit_fca
from fairalign.oracle import brute_force_coupling
from fairalign.transport import (Coupling, SolverError, SolverOptions, build_cost_matrices,
                                 mix_couplings, read_coupling_csv, solve_blocks, solve_lp,
                                 solve_partitioned, solve_sinkhorn, transport_cost_matrix)


def test_cost_matrices_hand_example():
    ds = Dataset(np.array([0.0, 2.0]), [0, 1])
    C, D = build_cost_matrices(ds, np.array([[1.0]]), transport_weight=2.0)
    assert C.tolist() == [[2.0]] and D.tolist() == [[0.0]]
    # the default weight pi0*pi1 makes the pair cost split exactly
    C1, _ = build_cost_matrices(ds, np.array([[1.0]]))
    assert C1.tolist() == [[1.0]]


def test_cost_matrices_identical_points_and_midpoint():
    x = np.random.default_rng(0).normal(size=(4, 2))
    ds = Dataset(np.concatenate([x, x]), [0] * 4 + [1] * 4)
    C, D = build_cost_matrices(ds, x[:2])
    assert np.all(np.diag(C) == 0)
    mid = 0.5 * (x[0] + x[3])
    expect = min(np.sum((mid - c) ** 2) for c in x[:2])
    assert D[0, 3] == pytest.approx(expect)
    assert D[3, 0] == pytest.approx(expect)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pair_cost_split_identity(seed):
    rng = np.random.default_rng(seed)
    x0, x1, mu = rng.normal(size=(3, 3))
    pi0 = float(rng.uniform(0.1, 0.9))
    pi1 = 1 - pi0
    lhs = pi0 * np.sum((x0 - mu) ** 2) + pi1 * np.sum((x1 - mu) ** 2)
    t = pi0 * x0 + pi1 * x1
    rhs = transport_cost_matrix(x0[None], x1[None], pi0, pi1)[0, 0] + np.sum((t - mu) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_lp_forced_and_zero_cost():
    cp = solve_lp(np.array([[5.0, 1.0]]))
    np.testing.assert_allclose(cp.dense(), [[0.5, 0.5]])
    cp = solve_lp(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(cp.dense(), np.diag([0.5, 0.5]))
    assert cp.objective == 0.0


def test_lp_three_by_three_matches_permutations():
    rng = np.random.default_rng(5)
    for _ in range(20):
        cost = rng.integers(0, 20, size=(3, 3)).astype(float)
        ref, _ = brute_force_coupling(cost)
        assert solve_lp(cost).objective == pytest.approx(ref, abs=1e-12)


def test_lp_rejects_bad_cost():
    with pytest.raises(ValueError):
        solve_lp(np.array([[np.inf, 1.0]]))


def test_lp_pivot_cap_carries_feasible_coupling():
    cost = np.random.default_rng(0).random((15, 15))
    with pytest.raises(SolverError) as info:
        solve_lp(cost, max_pivots=1)
    assert info.value.coupling.marginal_error() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.integers(0, 10_000))
def test_lp_marginals_and_vertex_support(n0, n1, seed):
    cost = np.random.default_rng(seed).random((n0, n1))
    cp = solve_lp(cost)
    assert cp.marginal_error() <= 1e-8
    assert abs(cp.mass.sum() - 1) <= 1e-8
    assert cp.support_size <= n0 + n1 - 1
    assert cp.objective == pytest.approx(cp.value(cost))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000))
def test_lp_square_is_permutation(n, seed):
    cp = solve_lp(np.random.default_rng(seed).random((n, n)))
    assert cp.support_size == n
    assert np.unique(cp.rows).size == n
    np.testing.assert_allclose(cp.mass, 1.0 / n, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_lp_constant_shift(seed, shift):
    cost = np.random.default_rng(seed).random((6, 9)) * 10
    a, b = solve_lp(cost), solve_lp(cost + shift)
    assert b.objective == pytest.approx(a.objective + shift, abs=1e-9)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.cols, b.cols)


def test_lp_beats_random_feasible_couplings():
    rng = np.random.default_rng(42)
    cost = rng.random((5, 7)) * 4
    best = solve_lp(cost).objective
    others = []
    for _ in range(500):
        others.append(solve_sinkhorn(cost, float(rng.uniform(0.05, 10.0))).value(cost))
    for _ in range(500):
        others.append(solve_lp(rng.random((5, 7))).value(cost))
    assert best <= min(others) + 1e-12


def test_lp_warm_start_same_optimum():
    rng = np.random.default_rng(1)
    cost = rng.random((30, 40))
    first = solve_lp(cost)
    again = solve_lp(cost + rng.random((30, 40)) * 0.01)
    warm = solve_lp(cost, warm_start=again)
    assert warm.objective == pytest.approx(first.objective, abs=1e-12)


def test_sinkhorn_symmetric_uniform():
    cp = solve_sinkhorn(np.ones((2, 2)), 0.3)
    np.testing.assert_allclose(cp.dense(), 0.25, atol=1e-12)


def test_sinkhorn_large_reg_is_product():
    cost = np.random.default_rng(2).random((5, 7)) * 3
    cp = solve_sinkhorn(cost, 1e6)
    assert np.abs(cp.dense() - 1 / 35).max() <= 1e-3


def test_sinkhorn_small_reg_near_lp():
    rng = np.random.default_rng(1)
    for _ in range(10):
        cost = rng.integers(0, 10, size=(3, 3)).astype(float)
        lp = solve_lp(cost).objective
        sk = solve_sinkhorn(cost, 0.01)
        assert abs(sk.objective - lp) <= 0.02 * max(lp, 1e-12) + 1e-9
        assert np.abs(sk.row_marginal() - 1 / 3).sum() <= 1e-9
        assert np.abs(sk.col_marginal() - 1 / 3).sum() <= 1e-9


def test_sinkhorn_errors():
    with pytest.raises(ValueError):
        solve_sinkhorn(np.ones((2, 2)), 0.0)
    with pytest.raises(SolverError, match="did not reach"):
        solve_sinkhorn(np.random.default_rng(0).random((30, 40)) * 5, 0.01, max_iter=50)


def test_solver_options_parse():
    assert SolverOptions.parse("lp").method == "lp"
    opt = SolverOptions.parse("sinkhorn:0.5", threads=3)
    assert (opt.method, opt.reg, opt.threads) == ("sinkhorn", 0.5, 3)
    with pytest.raises(ValueError):
        SolverOptions.parse("simplex")


def test_partitioned_single_block_equals_lp():
    ds = generate_synthetic(SyntheticSpec(n=80, J=2, seed=1))
    mu = ds.points[:3]
    C, D = build_cost_matrices(ds, mu)
    a = solve_partitioned(ds, mu, full_partitioning(ds))
    b = solve_lp(C + D)
    assert a.objective == pytest.approx(b.objective, abs=1e-12)
    np.testing.assert_allclose(a.dense(), b.dense(), atol=1e-15)


def test_blocks_of_identical_data_average():
    cost = np.random.default_rng(3).random((4, 4))
    blocks = [(np.arange(4), np.arange(4)), (np.arange(4, 8), np.arange(4, 8))]
    cp = solve_blocks([cost, cost], blocks, (8, 8))
    assert cp.objective == pytest.approx(solve_lp(cost).objective)
    assert cp.marginal_error() <= 1e-12


def test_partitioned_unequal_blocks_row_mass():
    ds = Dataset(np.random.default_rng(0).normal(size=(12, 2)), [0] * 5 + [1] * 7)
    part = make_partitioning(ds, 6, seed=0)
    cp = solve_partitioned(ds, ds.points[:2], part)
    rows = cp.row_marginal()
    local = {int(v): i for i, v in enumerate(ds.group_index[0])}
    for b in part.blocks:
        for g in b[0]:
            assert rows[local[int(g)]] == pytest.approx(1 / (part.L * b[0].size))
    assert cp.mass.sum() == pytest.approx(1.0)


def test_partitioned_block_error_names_block():
    ds = generate_synthetic(SyntheticSpec(n=60, J=2, seed=0))
    opts = SolverOptions("sinkhorn", reg=0.001, max_iter=2)
    with pytest.raises(SolverError, match="block 0"):
        solve_partitioned(ds, ds.points[:2], make_partitioning(ds, 30), opts)


def test_partitioned_threads_deterministic():
    ds = generate_synthetic(SyntheticSpec(n=400, J=4, seed=2))
    part = make_partitioning(ds, 50, seed=1)
    a = solve_partitioned(ds, ds.points[:3], part, SolverOptions(threads=1))
    b = solve_partitioned(ds, ds.points[:3], part, SolverOptions(threads=4))
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.mass, b.mass)


def test_partitioned_fca_cost_close_to_full():
    ds = generate_synthetic(SyntheticSpec(n=200, J=4, seed=0))
    full = fit_fca(ds, FcaConfig(K=3, seed=0))
    part = fit_fca(ds, FcaConfig(K=3, seed=0, partition_m=50))
    assert abs(part.report.cost - full.report.cost) <= 0.05 * full.report.cost


def test_coupling_csv_roundtrip(tmp_path):
    cp = solve_lp(np.random.default_rng(0).random((4, 6)))
    cp.to_csv(tmp_path / "c.csv")
    back = read_coupling_csv(tmp_path / "c.csv", cp.shape)
    np.testing.assert_array_equal(back.dense(), cp.dense())


def test_mix_couplings_merges():
    a = Coupling(np.array([0, 1]), np.array([0, 1]), np.array([0.5, 0.5]), (2, 2))
    b = Coupling(np.array([0, 1]), np.array([1, 0]), np.array([0.5, 0.5]), (2, 2))
    m = mix_couplings(a, b, 0.5)
    np.testing.assert_allclose(m.dense(), 0.25)
    assert mix_couplings(a, a, 0.3).support_size == 2
