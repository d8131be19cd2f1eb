import itertools

import numpy as np
import pytest

from fairalign.data import Dataset
from fairalign.oracle import brute_force_coupling, brute_force_fair_kmeans, fair_cost_of
from fairalign.transport import solve_lp


def _ds(x0, x1):
    x0, x1 = np.asarray(x0, float), np.asarray(x1, float)
    return Dataset(np.concatenate([x0, x1]), [0] * len(x0) + [1] * len(x1))


def _set_partitions(items, K):
    """All ways to split items into at most K unlabeled non-empty blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest, K):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        if len(part) < K:
            yield [[first]] + part


def _independent_fair_optimum(x0, x1, K):
    """Reference with a different enumeration order: matchings x set partitions."""
    n = len(x0)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        for part in _set_partitions(list(range(n)), K):
            total = 0.0
            for block in part:
                pts = np.concatenate([x0[block], x1[[perm[i] for i in block]]])
                total += ((pts - pts.mean(axis=0)) ** 2).sum()
            best = min(best, total / (2 * n))
    return best


def test_single_pair():
    cost, match, lab = brute_force_fair_kmeans(_ds([0.0], [2.0]), 1)
    assert cost == 1.0 and match == (0,) and lab == (0,)


def test_duplicated_groups_identity_matching_optimal():
    x = np.array([[0.0], [1.0], [5.0], [6.0]])
    cost, match, _ = brute_force_fair_kmeans(_ds(x, x), 2)
    assert cost == pytest.approx(0.25)
    assert match == (0, 1, 2, 3)


def test_matches_independent_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(6):
        x0 = rng.normal(size=(3, 1))
        x1 = rng.normal(size=(3, 1)) + 1
        ds = _ds(x0, x1)
        cost, match, lab = brute_force_fair_kmeans(ds, 2)
        assert cost == pytest.approx(_independent_fair_optimum(x0, x1, 2), rel=1e-12)
        assert fair_cost_of(ds, match, lab, 2) == pytest.approx(cost)


def test_size_caps():
    with pytest.raises(ValueError):
        brute_force_fair_kmeans(_ds(np.zeros((6, 1)), np.ones((6, 1))), 2)
    with pytest.raises(ValueError):
        brute_force_fair_kmeans(_ds(np.zeros((2, 1)), np.ones((3, 1))), 2)
    with pytest.raises(ValueError):
        brute_force_coupling(np.zeros((8, 8)))


def test_coupling_examples():
    assert brute_force_coupling(np.array([[0.0, 1.0], [1.0, 0.0]])) == (0.0, (0, 1))
    cost = np.full((4, 4), 5.0) - 4 * np.eye(4)
    assert brute_force_coupling(cost)[1] == (0, 1, 2, 3)


def test_coupling_oracle_agrees_with_lp():
    rng = np.random.default_rng(11)
    for _ in range(10):
        cost = rng.random((5, 5))
        ref, perm = brute_force_coupling(cost)
        assert solve_lp(cost).objective == pytest.approx(ref, abs=1e-9)
        assert ref == pytest.approx(cost[np.arange(5), perm].mean())
