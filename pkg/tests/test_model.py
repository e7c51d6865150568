import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fewshot_kg.kg import KnowledgeGraph, Vocab
from fewshot_kg.model import (
    HyperParams,
    adapt,
    encode_entity_lookup,
    encode_entity_rgcn,
    init_state,
    load_pretrained_embeddings,
    margin_loss,
    rel_learner_mlp,
    relation_embed,
    score_candidates,
    score_query,
    support_gradient_step,
    transe_distance,
)
from fewshot_kg.tasks import FewShotTask, task_from_pairs


def small_state(variant="MetaR", n=10, d=4, **kw):
    return init_state(variant, n, 3, HyperParams(d=d, **kw), seed=0)


def small_task(n=10, k=3, seed=0):
    rng = np.random.default_rng(seed)
    pairs = np.unique(rng.integers(n, size=(12, 2)), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return task_from_pairs("rel", pairs, k, "all-remaining", np.arange(n), seed)


def test_lookup():
    s = small_state()
    s.params["entity"][:] = 0
    assert np.array_equal(encode_entity_lookup(s, 3), np.zeros(4))
    s.params["entity"][3] = [1, 2, 3, 4]
    assert np.array_equal(encode_entity_lookup(s, 3), [1, 2, 3, 4])
    with pytest.raises(IndexError):
        encode_entity_lookup(s, 10)


def test_init_bounds_and_determinism():
    a, b = small_state(d=16), small_state(d=16)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert np.abs(a.params["entity"]).max() <= 6 / np.sqrt(16)


def test_mlp_zero_weights_gives_bias():
    s = small_state()
    for k in ("mlp.W1", "mlp.b1", "mlp.W2"):
        s.params[k][:] = 0
    s.params["mlp.b2"][:] = [1, -2, 3, 0.5]
    rng = np.random.default_rng(0)
    assert np.array_equal(rel_learner_mlp(s, [(rng.normal(size=4), rng.normal(size=4)) for _ in range(3)]),
                          [1, -2, 3, 0.5])
    assert np.array_equal(relation_embed(s, small_task()), [1, -2, 3, 0.5])


def test_mlp_permutation_invariant():
    s = small_state()
    rng = np.random.default_rng(1)
    pairs = [(rng.normal(size=4), rng.normal(size=4)) for _ in range(5)]
    assert np.allclose(rel_learner_mlp(s, pairs), rel_learner_mlp(s, pairs[::-1]), atol=1e-14)
    t = small_task(k=4)
    t2 = t.with_support(t.support[::-1])
    assert np.allclose(relation_embed(s, t), relation_embed(s, t2), atol=1e-14)


def test_mlp_empty_support():
    with pytest.raises(ValueError):
        rel_learner_mlp(small_state(), [])
    with pytest.raises(ValueError):
        relation_embed(small_state(), small_task(k=0))


def test_shared_embed_same_across_relations():
    s = small_state("SharedEmbed")
    a = relation_embed(s, small_task(seed=1))
    b = relation_embed(s, small_task(seed=2))
    assert np.array_equal(a, b) and np.array_equal(a, s.params["r_g"])


def test_zeroshot_ignores_support_bitwise():
    s = small_state("ZeroShot")
    t = small_task()
    other = t.with_support(np.array([[9, 8], [7, 6]]))
    assert relation_embed(s, t).tobytes() == relation_embed(s, other).tobytes()
    assert adapt(s, t).tobytes() == adapt(s, other).tobytes() == s.params["r_g"].tobytes()


def test_zeroshot_accepts_empty_support():
    s = small_state("ZeroShot")
    t = small_task(k=0)
    assert score_candidates(s, t, adapt(s, t)).shape == (len(t.queries), len(t.candidates))


@pytest.mark.parametrize("norm,expected", [("L2", 5.0), ("L1", 7.0)])
def test_transe_345(norm, expected):
    assert transe_distance([0, 0], [3, 4], [0, 0], norm) == expected


def test_transe_zero_and_mismatch():
    assert transe_distance([1, 2], [0, 0], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        transe_distance([1, 2], [0, 0, 0], [1, 2])


vec = arrays(np.float64, 5, elements=st.floats(-10, 10))


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec, vec)
def test_transe_translation_consistency(h, r, t, c):
    for norm in ("L1", "L2"):
        assert transe_distance(h, r, t, norm) == pytest.approx(transe_distance(h + c, r, t + c, norm), abs=1e-9)


def test_margin_loss_examples():
    assert margin_loss([0.2], [[1.5]], 1.0)[0] == 0.0
    assert margin_loss([0.7], [[0.7]], 1.0)[0] == 1.0
    loss, dp, dn = margin_loss([0.2, 1.0], [[1.5, 0.1], [3.0, 0.5]], 1.0)
    # active pairs: (0, 1) 1.1, (1, 1) 1.5
    assert loss == pytest.approx(2.6 / 4)
    assert np.allclose(dp, [0.25, 0.25]) and np.allclose(dn, [[0, -0.25], [0, -0.25]])
    with pytest.raises(ValueError):
        margin_loss([], [], 1.0)


def test_support_step_eta_zero_and_errors():
    s = small_state("SharedEmbed")
    t = small_task()
    r = s.params["r_g"].copy()
    assert np.array_equal(support_gradient_step(s, t, r, 0.0, seed=0), r)
    with pytest.raises(ValueError):
        support_gradient_step(s, t, r, -0.1, seed=0)


def test_support_step_zeroshot_returns_rg():
    s = small_state("ZeroShot")
    r = s.params["r_g"]
    for sup in ([[1, 2]], [[3, 4], [5, 6]], []):
        t = small_task().with_support(np.array(sup).reshape(-1, 2))
        assert np.array_equal(support_gradient_step(s, t, r, 1.0, seed=3), r)


def test_support_step_moves_relation():
    s = small_state("SharedEmbed", d=8)
    t = small_task()
    r = s.params["r_g"]
    assert not np.array_equal(support_gradient_step(s, t, r, 1.0, seed=0), r)


def test_shared_embed_congruence():
    s = small_state("SharedEmbed")
    t1 = small_task(seed=4)
    t2 = FewShotTask("rel", t1.support, t1.queries[:1], t1.candidates, 99, t1.known)
    assert np.array_equal(adapt(s, t1, seed=5), adapt(s, t2, seed=5))


def test_score_query_examples():
    s = small_state("SharedEmbed", d=2)
    E = s.params["entity"]
    E[0] = [0, 0]
    E[1] = [1, 1]
    E[2] = [1, 2]
    E[3] = [1, 3]
    t = FewShotTask("r", np.zeros((0, 2), np.int64), np.array([[0, 1]]), np.array([1, 2, 3]))
    r = np.array([1.0, 1.0])
    assert score_query(s, t, r, (0, 1)) == 0.0
    assert score_query(s, t, r, (0, 2)) == -1.0
    assert score_query(s, t, r, (0, 3)) == -2.0
    with pytest.raises(ValueError):
        score_query(s, t, r, (0, 5))


def test_scores_match_straight_line_recomputation():
    s = small_state("MetaR", n=12, d=5)
    rng = np.random.default_rng(8)
    t = FewShotTask("r", np.array([[0, 1], [2, 3]]), np.array([[4, 5], [6, 7]]),
                    np.array(sorted(rng.choice(12, 5, replace=False).tolist() + [5, 7])) if False else np.array([5, 7, 8, 9, 11]))
    r = adapt(s, t, seed=2)
    got = score_candidates(s, t, r, seed=2)
    E = s.params["entity"]
    for i, (h, _) in enumerate(t.queries.tolist()):
        for j, c in enumerate(t.candidates.tolist()):
            diff = E[h] + r - E[c]
            assert got[i, j] == pytest.approx(-np.sqrt(sum(x * x for x in diff)), rel=1e-12)


def test_rgcn_zero_messages_identity():
    g = KnowledgeGraph.from_strings([("a", "r", "b"), ("b", "s", "c"), ("c", "r", "a")])
    hp = HyperParams(d=3, rgcn_hidden=3)
    s = init_state("RGCN", g.n_entities, g.n_relations, hp, seed=0)
    for layer in (0, 1):
        s.params[f"rgcn.a{layer}"][:] = 0
        s.params[f"rgcn.S{layer}"] = np.eye(3)
    v = np.array([0.5, 0.0, 2.0])
    s.params["entity"][1] = v
    assert np.allclose(encode_entity_rgcn(s, g, 1), v)


@pytest.mark.parametrize("hidden", [50, 20])
def test_rgcn_output_width(hidden):
    g = KnowledgeGraph.from_strings([("a", "r", "b"), ("b", "s", "c")])
    s = init_state("RGCN", g.n_entities, g.n_relations, HyperParams(d=8, rgcn_hidden=hidden), seed=0)
    assert encode_entity_rgcn(s, g, 0).shape == (hidden,)


def test_rgcn_requires_params():
    g = KnowledgeGraph.from_strings([("a", "r", "b")])
    with pytest.raises(ValueError):
        encode_entity_rgcn(small_state("MetaR"), g, 0)


def test_rgcn_neighbor_sampling_capped_and_seeded():
    from fewshot_kg.rgcn import sample_neighbors
    g = KnowledgeGraph.from_strings([("hub", f"r{i % 3}", f"x{i}") for i in range(30)])
    a = sample_neighbors(g, 0, 0, 5, seed=1)
    assert len(a) == 5 and a == sample_neighbors(g, 0, 0, 5, seed=1)
    assert all(r >= g.n_relations for _, r in sample_neighbors(g, 1, 0, 5, seed=1))


def test_hyperparam_validation():
    with pytest.raises(ValueError, match="eta"):
        HyperParams(eta=-1).validate()
    with pytest.raises(ValueError, match="gamma"):
        HyperParams(gamma=0).validate()
    with pytest.raises(ValueError):
        init_state("Other", 3, 1, HyperParams(), 0)


def write_emb(path, dim, rows):
    lines = [f"d {dim}"] + [f"{name}\t{' '.join(map(str, vec))}" for name, vec in rows]
    path.write_text("\n".join(lines) + "\n")


def test_pretrained_partial_with_warning(tmp_path, caplog):
    vocab = Vocab(["a", "b", "c", "d", "e"])
    s = init_state("SharedEmbed", 5, 1, HyperParams(d=3), seed=0)
    before = s.params["entity"].copy()
    write_emb(tmp_path / "emb.txt", 3, [("a", [1, 2, 3]), ("c", [4, 5, 6]), ("e", [7, 8, 9]), ("zzz", [0, 0, 0])])
    load_pretrained_embeddings(tmp_path / "emb.txt", s, vocab, freeze=False)
    E = s.params["entity"]
    assert np.array_equal(E[[0, 2, 4]], [[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert np.array_equal(E[[1, 3]], before[[1, 3]])
    assert "2 entities not covered" in caplog.text
    assert not s.frozen_entities


def test_pretrained_errors(tmp_path):
    vocab = Vocab(["a"])
    s = init_state("SharedEmbed", 1, 1, HyperParams(d=100), seed=0)
    write_emb(tmp_path / "e50.txt", 50, [("a", [0.0] * 50)])
    with pytest.raises(ValueError, match="dim 50"):
        load_pretrained_embeddings(tmp_path / "e50.txt", s, vocab)
    (tmp_path / "bad.txt").write_text("d 2\na\t1.0 x\n")
    s2 = init_state("SharedEmbed", 1, 1, HyperParams(d=2), seed=0)
    with pytest.raises(ValueError, match=":2:"):
        load_pretrained_embeddings(tmp_path / "bad.txt", s2, vocab)
