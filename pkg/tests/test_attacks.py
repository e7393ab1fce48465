import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgattack.attacks import (
    AttackConfig, NoiseSpec, apply_attack, lp_faulty_triples, num_selected, perturb_graph,
    perturb_labels, perturb_params, select_subset,
)
from kgattack.kg_core import MiniBatch, build_graph
from kgattack.models import AlgebraKind, init_params
from kgattack.training import ATTACK, stream


def random_batch(rng, m, n_ent, n_rel):
    return MiniBatch(rng.integers(0, n_ent, m), rng.integers(0, n_rel, m), rng.random((m, n_ent)) < 0.2)


def same_batch(a, b):
    return (np.array_equal(a.heads, b.heads) and np.array_equal(a.relations, b.relations)
            and np.array_equal(a.labels, b.labels))


@pytest.mark.parametrize("n, k, expected", [(100, 0.0, 0), (100, 0.64, 64), (10, 1.0, 10),
                                            (1024, 0.01, 10), (50, 0.01, 1), (150, 0.01, 2)])
def test_select_subset_size(n, k, expected):
    sel = select_subset(n, k, np.random.default_rng(0))
    assert len(sel) == expected == num_selected(n, k)
    assert len(set(sel.tolist())) == expected
    assert all(0 <= i < n for i in sel)


def test_select_subset_deterministic():
    a = select_subset(100, 0.3, np.random.default_rng(9))
    b = select_subset(100, 0.3, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_select_subset_rejects_bad_ratio():
    with pytest.raises(ValueError):
        select_subset(10, 1.5, np.random.default_rng(0))


@pytest.mark.parametrize("transform", ["gp", "lp", "pp"])
def test_identity_at_zero_ratio(transform, rng):
    batch = random_batch(rng, 64, 20, 5)
    params = init_params(AlgebraKind("DistMult"), 20, 5, rng, dim=8)
    before = params.copy()
    if transform == "gp":
        out = perturb_graph(batch, 0.0, 20, 5, rng)
    elif transform == "lp":
        out = perturb_labels(batch, 0.0, rng)
    else:
        params, out = perturb_params(params, batch, 0.0, NoiseSpec(), "persistent", rng)
        assert out.head_offset is None and out.rel_offset is None
    assert same_batch(out, batch)
    assert params.equals(before)


def test_gp_changes_at_most_one_field(rng):
    batch = random_batch(rng, 500, 50, 10)
    out = perturb_graph(batch, 1.0, 50, 10, rng)
    both = (out.heads != batch.heads) & (out.relations != batch.relations)
    assert not both.any()
    assert np.array_equal(out.labels, batch.labels)
    assert ((out.heads != batch.heads) | (out.relations != batch.relations)).sum() > 400


def test_gp_stays_in_vocabulary(rng):
    batch = random_batch(rng, 300, 7, 3)
    out = perturb_graph(batch, 0.64, 7, 3, rng)
    assert out.heads.min() >= 0 and out.heads.max() < 7
    assert out.relations.min() >= 0 and out.relations.max() < 3


def test_gp_einstein_example():
    g = build_graph([("Einstein", "bornIn", "Ulm"), ("Laplace", "capitalOf", "Ulm")])
    e, r = g.vocab.entity_to_id, g.vocab.relation_to_id
    base = MiniBatch(np.array([e["Einstein"]]), np.array([r["bornIn"]]), np.array([[False, True, False]]))
    seen = set()
    for seed in range(64):
        out = perturb_graph(base, 1.0, g.num_entities, g.num_relations, np.random.default_rng(seed))
        seen.add((g.vocab.entities[out.heads[0]], g.vocab.relations[out.relations[0]]))
        assert np.array_equal(out.labels, base.labels)
    # Ulm is also an entity, so a head replacement may give (Ulm, bornIn)
    assert ("Laplace", "bornIn") in seen and ("Einstein", "capitalOf") in seen
    assert seen <= {("Einstein", "bornIn"), ("Laplace", "bornIn"), ("Ulm", "bornIn"), ("Einstein", "capitalOf")}


def test_gp_head_relation_balance():
    # a huge vocabulary makes accidental no-op replacements negligible
    n = 2**40
    rng = np.random.default_rng(21)
    batch = MiniBatch(np.zeros(10_000, dtype=np.int64), np.zeros(10_000, dtype=np.int64),
                      np.zeros((10_000, 1), dtype=bool))
    out = perturb_graph(batch, 1.0, n, n, rng)
    head_frac = np.mean(out.heads != 0)
    assert abs(head_frac - 0.5) <= 0.02
    assert np.mean((out.heads != 0) ^ (out.relations != 0)) == 1.0


def test_lp_single_positive_inverts_to_all_but_one():
    n_ent = 40_943
    labels = np.zeros((1, n_ent), dtype=bool)
    labels[0, 123] = True
    batch = MiniBatch(np.array([0]), np.array([0]), labels)
    out = perturb_labels(batch, 1.0, np.random.default_rng(0))
    assert out.labels.sum() == 40_942
    assert not out.labels[0, 123]
    assert lp_faulty_triples(1, n_ent, 1.0) - 1 == 40_942


def test_lp_involution(rng):
    batch = random_batch(rng, 100, 30, 4)
    sel = select_subset(100, 0.32, rng)
    once = perturb_labels(batch, 0.32, rng, selection=sel)
    twice = perturb_labels(once, 0.32, rng, selection=sel)
    assert same_batch(twice, batch)
    assert np.array_equal(once.heads, batch.heads) and np.array_equal(once.relations, batch.relations)
    changed = np.flatnonzero((once.labels != batch.labels).any(axis=1))
    assert np.array_equal(changed, sel)
    assert np.all(once.labels[sel] == ~batch.labels[sel])


def _distinct_batch(m, n_ent, n_rel):
    # every example has its own head and relation row
    return MiniBatch(np.arange(m), np.arange(m), np.zeros((m, n_ent), dtype=bool))


def test_pp_persistent_touches_one_row_per_selected_example():
    rng = np.random.default_rng(3)
    params = init_params(AlgebraKind("DistMult"), 200, 200, rng)
    before = params.copy()
    batch = _distinct_batch(100, 200, 200)
    record = []
    params, out = perturb_params(params, batch, 0.32, NoiseSpec(), "persistent", rng, record=record)
    assert same_batch(out, batch)
    (rec,) = record
    assert len(rec.selected) == 32
    d_ent = np.abs(params.entity - before.entity)
    d_rel = np.abs(params.relation - before.relation)
    assert d_ent.max() <= 0.1 and d_rel.max() <= 0.1
    for i, on_rel in zip(rec.selected, rec.on_relation):
        assert d_rel[i].any() == on_rel
        assert d_ent[i].any() == (not on_rel)
    unselected = np.setdiff1d(np.arange(200), rec.selected)
    assert np.array_equal(params.entity[unselected], before.entity[unselected])
    assert np.array_equal(params.relation[unselected], before.relation[unselected])


def test_pp_transient_leaves_tables_and_matches_persistent_forward():
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    base = init_params(AlgebraKind("ComplEx"), 60, 60, np.random.default_rng(0))
    batch = _distinct_batch(50, 60, 60)
    persistent = base.copy()
    persistent, _ = perturb_params(persistent, batch, 0.5, NoiseSpec(), "persistent", rng_a)
    transient = base.copy()
    same, view = perturb_params(transient, batch, 0.5, NoiseSpec(), "transient", rng_b)
    assert same is transient and transient.equals(base)
    # same draws, so the offsets equal what persistent mode wrote into the tables
    np.testing.assert_array_equal(base.entity[batch.heads] + view.head_offset, persistent.entity[batch.heads])
    np.testing.assert_array_equal(base.relation[batch.relations] + view.rel_offset,
                                  persistent.relation[batch.relations])


def test_pp_noise_moment():
    # E||q||^2 for q ~ U[-0.1, 0.1]^32 is 32 * 0.2^2 / 12
    expected = 32 * 0.2**2 / 12
    rng = np.random.default_rng(8)
    params = init_params(AlgebraKind("DistMult"), 1, 1, rng)
    batch = MiniBatch(np.zeros(10_000, dtype=np.int64), np.zeros(10_000, dtype=np.int64),
                      np.zeros((10_000, 1), dtype=bool))
    record = []
    perturb_params(params, batch, 1.0, NoiseSpec(), "transient", rng, record=record)
    sq = np.array([q @ q for q in record[0].noise])
    assert abs(sq.mean() - expected) / expected < 0.03
    # Bernoulli balance between head and relation, 3 sigma = 0.015
    assert abs(record[0].on_relation.mean() - 0.5) < 3 * 0.5 / np.sqrt(10_000)


def test_pp_mure_relation_noise_covers_full_row():
    rng = np.random.default_rng(4)
    params = init_params(AlgebraKind("MuRE"), 10, 10, rng)
    record = []
    perturb_params(params, _distinct_batch(10, 10, 10), 1.0, NoiseSpec(), "transient", rng, record=record)
    for on_rel, q in zip(record[0].on_relation, record[0].noise):
        assert len(q) == (64 if on_rel else 32)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(low=0.1, high=0.1)
    with pytest.raises(ValueError):
        NoiseSpec(distribution="normal")


def test_apply_attack_none_is_identity(rng):
    batch = random_batch(rng, 40, 10, 3)
    params = init_params(AlgebraKind("MuRE"), 10, 3, rng)
    before = params.copy()
    for k in (0.0, 0.5, 1.0):
        out, p = apply_attack(AttackConfig("none", k), batch, params, rng)
        assert out is batch and p is params and params.equals(before)


def test_apply_attack_gp_deterministic(rng):
    batch = random_batch(rng, 200, 40, 6)
    params = init_params(AlgebraKind("DistMult"), 40, 6, rng)
    cfg = AttackConfig("gp", 0.08, seed=17)
    a, _ = apply_attack(cfg, batch, params, stream(cfg.seed, ATTACK, 0, 0))
    b, _ = apply_attack(cfg, batch, params, stream(cfg.seed, ATTACK, 0, 0))
    assert same_batch(a, b)
    assert not same_batch(a, batch)


def test_unknown_surface_rejected():
    with pytest.raises(ValueError):
        AttackConfig("xx", 0.1)
    with pytest.raises(ValueError):
        AttackConfig("gp", 1.5)


def test_selection_resampled_each_epoch():
    selections = [tuple(select_subset(100, 0.16, stream(99, ATTACK, epoch, 0)).tolist()) for epoch in range(5)]
    assert len(set(selections)) == 5


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["gp", "lp", "pp"]), st.floats(0.0, 1.0), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_transforms_preserve_structure(surface, k, m, seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, m, 9, 4)
    params = init_params(AlgebraKind("DistMult"), 9, 4, rng, dim=4)
    out, _ = apply_attack(AttackConfig(surface, k, pp_mode="transient"), batch, params, rng)
    assert len(out) == m and out.labels.shape == batch.labels.shape
    sel = num_selected(m, k)
    if surface in ("gp", "pp"):
        assert np.array_equal(out.labels, batch.labels)
    if surface in ("lp", "pp"):
        assert np.array_equal(out.heads, batch.heads) and np.array_equal(out.relations, batch.relations)
    if surface == "lp":
        assert (out.labels != batch.labels).any(axis=1).sum() == sel
    if surface == "gp":
        assert ((out.heads != batch.heads) | (out.relations != batch.relations)).sum() <= sel
