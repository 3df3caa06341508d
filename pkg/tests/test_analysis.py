import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advrec.analysis import median_gamma, mmd_rbf, topk_metrics
from helpers import brute_topk


def test_mmd_identical_sets_is_zero():
    x = np.random.default_rng(0).normal(size=(30, 3))
    assert abs(mmd_rbf(x, x[::-1], 0.7).value) <= 1e-9


def test_mmd_two_points():
    assert mmd_rbf([[0.0]], [[1.0]], 1.0).value == pytest.approx(2 - 2 * math.exp(-1), abs=1e-12)


def test_mmd_detects_mean_shift():
    rng_a, rng_b, rng_c = (np.random.default_rng(s) for s in (11, 12, 13))
    x = rng_a.normal(size=(200, 2))
    same = rng_b.normal(size=(200, 2))
    shifted = rng_c.normal(size=(200, 2)) + 3.0
    assert mmd_rbf(x, shifted, 0.5).value > 10 * mmd_rbf(x, same, 0.5).value


def test_mmd_errors():
    with pytest.raises(ValueError):
        mmd_rbf(np.ones((2, 2)), np.ones((2, 3)), 1.0)
    with pytest.raises(ValueError):
        mmd_rbf(np.ones((2, 2)), np.ones((2, 2)), 0.0)


vec_sets = st.integers(1, 12).flatmap(
    lambda n: st.lists(st.lists(st.floats(-3, 3), min_size=2, max_size=2), min_size=1, max_size=n))


@settings(max_examples=60)
@given(vec_sets, vec_sets, st.floats(0.05, 5))
def test_mmd_symmetric_and_nonnegative(x, y, gamma):
    a = mmd_rbf(x, y, gamma).value
    b = mmd_rbf(y, x, gamma).value
    assert abs(a - b) <= 1e-12
    assert a >= -1e-9
    assert mmd_rbf(x, x, gamma).value <= 1e-9


def test_median_gamma():
    x = np.array([[0.0], [1.0], [3.0]])
    # pairwise squared distances 1, 9, 4 -> median 4
    assert median_gamma(x) == pytest.approx(1 / 8)


def test_median_gamma_ignores_coincident_points():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(5, 16)) * 0.3
    x = base[rng.integers(5, size=60)]
    d2 = ((x[:, None] - x[None]) ** 2).sum(-1)[np.triu_indices(60, 1)]
    assert median_gamma(x) == pytest.approx(1 / (2 * np.median(d2[d2 > 0])), rel=1e-12)


def test_topk_single_hit_at_top():
    m = topk_metrics([list(range(10))], [{0}], 10)
    assert (m.ndcg, m.recall, m.hit_ratio, m.precision) == (1.0, 1.0, 1.0, pytest.approx(0.1))


def test_topk_no_hits():
    m = topk_metrics([list(range(10))], [{42}], 10)
    assert (m.ndcg, m.recall, m.hit_ratio, m.precision) == (0.0, 0.0, 0.0, 0.0)


def _ndcg_by_enumeration(n_items, rel, ranked, k):
    """NDCG from the best achievable DCG over every ordering of the candidates."""
    def dcg(order):
        return sum(1 / math.log2(i + 2) for i, it in enumerate(order[:k]) if it in rel)
    best = max(dcg(list(p)) for p in itertools.permutations(range(n_items)))
    return dcg(ranked) / best


def test_topk_worked_example_hits_at_two_and_three():
    ranked = [5, 0, 1, 6, 7, 8, 9, 10, 11, 12]
    rel = {0, 1}
    m = topk_metrics([ranked], [rel], 10)
    expected_dcg = 1 / math.log2(3) + 1 / math.log2(4)
    expected_idcg = 1 + 1 / math.log2(3)
    assert m.ndcg == pytest.approx(expected_dcg / expected_idcg, abs=1e-12)
    assert m.ndcg == pytest.approx(0.6934, abs=5e-5)
    assert (m.recall, m.hit_ratio, m.precision) == (1.0, 1.0, pytest.approx(0.2))
    # enumeration over a 7-item catalogue gives the same ideal ordering
    small = [5, 0, 1, 6, 2, 3, 4]
    assert topk_metrics([small], [rel], 5).ndcg == pytest.approx(_ndcg_by_enumeration(7, rel, small, 5))


def test_topk_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n_items = int(rng.integers(5, 21))
        k = int(rng.integers(1, 6))
        n_users = int(rng.integers(1, 6))
        rankings = [rng.permutation(n_items).tolist() for _ in range(n_users)]
        relevant = [set(rng.choice(n_items, size=int(rng.integers(0, 6)), replace=False).tolist())
                    for _ in range(n_users)]
        m = topk_metrics(rankings, relevant, k)
        assert (m.ndcg, m.recall, m.hit_ratio, m.precision) == brute_topk(rankings, relevant, k)


def test_topk_excludes_users_without_relevant_items():
    m = topk_metrics([[0, 1], [0, 1]], [{0}, set()], 1)
    assert m.users == 1 and m.ndcg == 1.0


def test_topk_short_list_errors():
    with pytest.raises(ValueError):
        topk_metrics([[0, 1]], [{0}], 3)


@given(st.permutations(range(12)), st.integers(1, 6))
def test_ndcg_invariant_below_cutoff(perm, k):
    rel = {0, 3, 5}
    head, tail = list(perm[:k]), list(perm[k:])
    a = topk_metrics([head + tail], [rel], k)
    b = topk_metrics([head + tail[::-1]], [rel], k)
    assert a == b


@given(st.lists(st.permutations(range(8)), min_size=1, max_size=4), st.integers(1, 8))
def test_metrics_in_unit_interval(rankings, k):
    relevant = [{0, 1}] * len(rankings)
    m = topk_metrics(rankings, relevant, k)
    for v in (m.ndcg, m.recall, m.hit_ratio, m.precision):
        assert 0.0 <= v <= 1.0
    assert m.precision <= m.hit_ratio
