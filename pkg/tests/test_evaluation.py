import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgattack.evaluation import FilterIndex, compute_ranks, evaluate, evaluate_all, rank_of_tail
from kgattack.models import AlgebraKind, ModelParams, init_params

from oracles import full_sort_rank


def test_rank_simple():
    assert rank_of_tail(np.array([0.9, 0.5, 0.1]), 1, mode="raw") == 2.0


def test_rank_all_equal_is_middle():
    for t in range(5):
        assert rank_of_tail(np.zeros(5), t, mode="raw") == 3.0


def test_rank_tie_modes():
    s = np.array([1.0, 1.0, 1.0, 0.0])
    assert rank_of_tail(s, 0, mode="raw", tie_mode="optimistic") == 1.0
    assert rank_of_tail(s, 0, mode="raw", tie_mode="pessimistic") == 3.0
    assert rank_of_tail(s, 0, mode="raw", tie_mode="mean") == 2.0


def test_filtered_removes_other_known_tails():
    s = np.array([0.9, 0.8, 0.7, 0.1])
    assert rank_of_tail(s, 2, [0, 2], mode="raw") == 3.0
    assert rank_of_tail(s, 2, [0, 2], mode="filtered") == 2.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**32 - 1), st.booleans())
def test_rank_matches_full_sort_oracle(n, seed, coarse):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=n)
    if coarse:
        scores = np.round(scores)  # force ties
    t = int(rng.integers(n))
    known = rng.choice(n, size=int(rng.integers(0, n)), replace=False).tolist()
    assert rank_of_tail(scores, t, known, mode="filtered") == full_sort_rank(scores, t, known, True)
    assert rank_of_tail(scores, t, known, mode="raw") == full_sort_rank(scores, t, known, False)


def oracle_params(n):
    """DistMult with identity tables: score(h, r, t) is 1 iff h == r == t."""
    return ModelParams(AlgebraKind("DistMult"), np.eye(n), np.eye(n))


def test_oracle_model_has_mrr_one():
    params = oracle_params(6)
    triples = np.array([[r, r, r] for r in range(6)])
    rep = evaluate(params, triples, FilterIndex(triples), mode="filtered")
    assert rep.mrr == 1.0 and rep.hits1 == 1.0 and rep.n_evaluated == 6


def test_filtered_never_worse(umls):
    params = init_params(AlgebraKind("DistMult"), umls.num_entities, umls.num_relations, np.random.default_rng(0))
    filt = FilterIndex.from_graph(umls)
    ranks = compute_ranks(params, umls.test, filt)
    assert np.all(ranks["filtered"] <= ranks["raw"])
    raw, filtered = evaluate_all(params, umls.test, filt)
    assert filtered.mrr >= raw.mrr


def test_random_distmult_mrr_close_to_uniform_expectation(umls):
    n = umls.num_entities
    expected = sum(1 / k for k in range(1, n + 1)) / n
    second = sum(1 / k**2 for k in range(1, n + 1)) / n
    sigma = math.sqrt((second - expected**2) / len(umls.test))
    assert expected == pytest.approx(0.0406, abs=1e-4)
    mrrs = []
    for seed in range(5):
        params = init_params(AlgebraKind("DistMult"), n, umls.num_relations, np.random.default_rng(seed))
        mrrs.append(evaluate(params, umls.test, mode="raw").mrr)
    for m in mrrs:
        assert abs(m - expected) < 3 * sigma, (m, expected, sigma)


def test_report_invariants(umls):
    params = init_params(AlgebraKind("ComplEx"), umls.num_entities, umls.num_relations, np.random.default_rng(1))
    for rep in evaluate_all(params, umls.test, FilterIndex.from_graph(umls)):
        assert 0 <= rep.hits1 <= rep.hits3 <= rep.hits10 <= 1
        assert rep.mrr >= rep.hits1


def test_evaluate_is_deterministic(umls):
    params = init_params(AlgebraKind("QMult"), umls.num_entities, umls.num_relations, np.random.default_rng(2))
    filt = FilterIndex.from_graph(umls)
    assert evaluate(params, umls.test, filt) == evaluate(params, umls.test, filt)


def test_filtered_requires_index():
    params = oracle_params(3)
    with pytest.raises(ValueError):
        evaluate(params, np.array([[0, 0, 0]]), None, mode="filtered")


def test_rank_dump(tmp_path):
    params = oracle_params(4)
    triples = np.array([[1, 1, 1], [2, 2, 2]])
    path = tmp_path / "ranks.tsv"
    evaluate_all(params, triples, FilterIndex(triples), dump_path=path)
    assert path.read_text().splitlines() == ["h\tr\tt\trank", "1\t1\t1\t1", "2\t2\t2\t1"]


def test_filter_index_contains_all_splits(umls):
    filt = FilterIndex.from_graph(umls)
    for split in (umls.train, umls.valid, umls.test):
        assert all(tuple(t) in filt for t in split)
