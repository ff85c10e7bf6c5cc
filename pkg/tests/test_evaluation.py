import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecechain.evaluation import FilterIndex, compute_metrics, rank_batch, rank_target

from conftest import make_vocabs


def brute_rank(scores, answer, known, policy="mean"):
    """Sort-based oracle: positions of the answer among ties after filtering."""
    keep = [e for e in range(len(scores)) if e == answer or e not in set(known)]
    order = sorted(keep, key=lambda e: -scores[e])
    tied = [i for i, e in enumerate(order) if scores[e] == scores[answer]]
    best, worst = tied[0] + 1, tied[-1] + 1
    return {"optimistic": best, "pessimistic": worst, "mean": (best + worst) / 2}[policy]


def test_strict_best_is_one():
    assert rank_target([0.1, 5.0, 0.3], 1) == 1.0


def test_full_tie():
    for n in (1, 2, 7, 50):
        assert rank_target(np.zeros(n), n - 1) == (n + 1) / 2


def test_tie_policies():
    s = [1.0, 2.0, 2.0, 2.0, 0.0]
    assert rank_target(s, 2, tie_policy="optimistic") == 1
    assert rank_target(s, 2, tie_policy="pessimistic") == 3
    assert rank_target(s, 2, tie_policy="mean") == 2
    with pytest.raises(ValueError):
        rank_target(s, 2, tie_policy="random")


def test_fifty_with_five_filtered():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=50)
    known = [3, 17, 22, 40, 8]
    for answer in range(50):
        assert rank_target(scores, answer, known) == brute_rank(scores, answer, known)


def test_answer_in_filter_is_kept():
    assert rank_target([3.0, 2.0, 1.0], 1, known_true=[0, 1]) == 1.0


def test_answer_out_of_range():
    with pytest.raises(IndexError):
        rank_target([1.0, 2.0], 2)


def test_batch_oracle_with_ties_and_filters():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        scores = rng.integers(0, 6, size=n).astype(np.float64)
        answer = int(rng.integers(0, n))
        known = rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist()
        for policy in ("mean", "optimistic", "pessimistic"):
            assert rank_target(scores, answer, known, policy) == brute_rank(scores, answer, known, policy)


def test_metrics_examples():
    r = compute_metrics([1])
    assert r.mrr == 1.0 and r.hits == {1: 1.0, 3: 1.0, 10: 1.0}
    r = compute_metrics([1, 2, 4, 20])
    assert r.mrr == pytest.approx(0.45, abs=1e-15)
    assert r.hits == {1: 0.25, 3: 0.5, 10: 0.75}


def test_empty_ranks_rejected():
    with pytest.raises(ValueError):
        compute_metrics([])


@given(st.lists(st.floats(1, 1000), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_metric_bounds(ranks):
    r = compute_metrics(ranks)
    assert 0 <= r.mrr <= 1
    assert r.hits[1] <= r.hits[3] <= r.hits[10]


def test_filtered_never_worse_than_raw():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=(200, 30))
    answers = rng.integers(0, 30, 200)
    lists = [rng.choice(30, size=int(rng.integers(0, 10)), replace=False) for _ in range(200)]
    indptr = np.concatenate([[0], np.cumsum([len(x) for x in lists])])
    idx = np.concatenate(lists)
    assert (rank_batch(scores, answers, indptr, idx) <= rank_batch(scores, answers)).all()


def test_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=(100, 25))
    answers = rng.integers(0, 25, 100)
    base = rank_batch(scores, answers)
    for transform in (np.exp, lambda x: 3 * x + 7, lambda x: x ** 3, np.arctan):
        np.testing.assert_array_equal(rank_batch(transform(scores), answers), base)


def test_filter_index_is_time_aware():
    vocabs = make_vocabs(4, 1, 3)
    quads = np.array([[0, 0, 1, 0], [0, 0, 2, 0], [0, 0, 3, 1]])
    f = FilterIndex(quads, vocabs)
    assert f.known(0, 0, 0).tolist() == [1, 2]
    assert f.known(0, 0, 1).tolist() == [3]
    assert f.known(1, 1, 0).tolist() == [0]
    assert f.known(2, 0, 2).tolist() == []
