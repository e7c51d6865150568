import numpy as np
import networkx as nx
import pytest

from fewshot_kg.kg import KnowledgeGraph
from fewshot_kg.louvain import CommunityPartition, louvain, louvain_local, modularity
from fewshot_kg.nullmodels import (
    gen_positional,
    gen_symmetric,
    gen_transitive,
    generate_null_relations,
    read_null_relations,
    write_null_relations,
)
from graph_fixtures import SMALL, barbell, clique, path
from oracles import best_modularity, modularity_dense


def kg_from_edges(edges):
    return KnowledgeGraph.from_strings([(f"n{u}", "r", f"n{v}") for u, v, _ in edges])


def test_clique_is_one_community():
    labels, q = louvain_local(5, clique(range(5)))
    assert set(labels.tolist()) == {0} and abs(q) < 1e-12


def test_barbell_recovers_cliques():
    n, edges, (left, right) = barbell(5)
    labels, q = louvain_local(n, edges)
    assert len(set(labels.tolist())) == 2
    assert {i for i in range(n) if labels[i] == labels[0]} == left
    assert q == pytest.approx(modularity_dense(n, edges, labels), abs=1e-12)


def test_path6_follows_ascending_sweep():
    # ascending sweeps pair nodes greedily: {0,1} {2,3} {4,5}, a local optimum
    labels, q = louvain_local(6, path(6))
    assert labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert q == pytest.approx(0.26, abs=1e-12)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_modularity_matches_dense_definition(name):
    n, edges = SMALL[name]
    labels, q = louvain_local(n, edges)
    assert abs(q - modularity_dense(n, edges, labels)) <= 1e-12
    assert abs(modularity(n, edges, labels) - q) <= 1e-12
    assert q >= modularity_dense(n, edges, np.arange(n)) - 1e-12


def test_random_small_graphs_bounded_by_optimum():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(3, 8))
        edges = [(u, v, 1.0) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.5]
        if not edges:
            continue
        labels, q = louvain_local(n, edges)
        assert q <= best_modularity(n, edges) + 1e-12
        assert q >= modularity_dense(n, edges, np.arange(n)) - 1e-12


def test_modularity_agrees_with_networkx():
    rng = np.random.default_rng(3)
    G = nx.gnp_random_graph(30, 0.15, seed=3)
    edges = [(u, v, 1.0) for u, v in G.edges]
    labels = rng.integers(4, size=30)
    parts = [set(np.flatnonzero(labels == c).tolist()) for c in range(4)]
    parts = [p for p in parts if p]
    assert modularity(30, edges, labels) == pytest.approx(nx.community.modularity(G, parts), abs=1e-12)


def test_louvain_on_kg_partition_consistent():
    n, edges, _ = barbell(5)
    g = kg_from_edges(edges + [(0, 1, 1.0)])  # a parallel triple doubles the edge weight
    part = louvain(g)
    assert isinstance(part, CommunityPartition)
    assert set().union(*part.communities) == set(range(g.n_entities))
    for c, members in enumerate(part.communities):
        assert all(part.assignment[e] == c for e in members)
    assert -0.5 <= part.modularity <= 1


def test_louvain_deterministic_and_lcc_default():
    g = KnowledgeGraph.from_strings([("a", "r", "b"), ("b", "r", "c"), ("x", "r", "y")])
    p1, p2 = louvain(g), louvain(g)
    assert p1.assignment == p2.assignment
    assert set(p1.assignment) == {g.entities.id(n) for n in "abc"}
    with pytest.raises(ValueError):
        louvain(g, nodes=[])


LCC = list(range(50))


def test_symmetric_examples():
    r = gen_symmetric(LCC, 3, seed=0)
    assert len(r.triples) == 6
    assert sorted(r.triples) == sorted((t, h) for h, t in r.triples)
    assert all(h != t for h, t in r.triples)
    with pytest.raises(ValueError):
        gen_symmetric([1], 3, 0)


def test_transitive_examples():
    r = gen_transitive(LCC, 2, seed=0)
    assert len(r.triples) == 6
    for i in range(2):
        (a, b), (b2, c), (a2, c2) = r.triples[3 * i:3 * i + 3]
        assert b == b2 and a == a2 and c == c2 and len({a, b, c}) == 3
    with pytest.raises(ValueError):
        gen_transitive([1, 2], 1, 0)


def two_communities():
    comms = [set(range(0, 10)), set(range(10, 20))]
    return CommunityPartition({e: c for c, m in enumerate(comms) for e in m}, comms, 0.5)


def test_positional_examples():
    part = two_communities()
    r = gen_positional(part, 10, seed=0)
    assert len(r.triples) == 10
    assert all(part.assignment[h] == part.assignment[t] and h != t for h, t in r.triples)
    one = CommunityPartition({e: 0 for e in range(5)}, [set(range(5))], 0.0)
    assert all(h in range(5) and t in range(5) for h, t in gen_positional(one, 10, 1).triples)


def test_positional_skips_singletons():
    comms = [{0}, {1, 2}, {3}]
    part = CommunityPartition({0: 0, 1: 1, 2: 1, 3: 2}, comms, 0.0)
    r = gen_positional(part, 20, seed=2)
    assert set(map(frozenset, r.triples)) == {frozenset({1, 2})}
    with pytest.raises(ValueError):
        gen_positional(CommunityPartition({0: 0, 1: 1}, [{0}, {1}], 0.0), 1, 0)


def test_generators_deterministic():
    part = two_communities()
    for fn, arg in ((gen_symmetric, LCC), (gen_transitive, LCC), (gen_positional, part)):
        assert fn(arg, 7, 5).triples == fn(arg, 7, 5).triples
        assert fn(arg, 7, 5).triples != fn(arg, 7, 6).triples


def test_positional_community_choice_uniform():
    comms = [set(range(10 * c, 10 * c + 10)) for c in range(5)]
    part = CommunityPartition({e: c for c, m in enumerate(comms) for e in m}, comms, 0.0)
    r = gen_positional(part, 10_000, seed=4)
    counts = np.bincount([part.assignment[h] for h, _ in r.triples], minlength=5)
    expected = 10_000 / 5
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - expected) <= 3 * sigma)
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 18.47  # 0.999 quantile, 4 degrees of freedom


def test_generate_and_round_trip(tmp_path):
    part = two_communities()
    rels = generate_null_relations(range(20), part, n=6, per_pattern=2, seed=1)
    assert [r.name for r in rels] == ["null_sym_0", "null_sym_1", "null_trans_0", "null_trans_1",
                                      "null_pos_0", "null_pos_1"]
    assert [len(r.triples) for r in rels] == [12, 12, 18, 18, 6, 6]
    names = [f"e{i}" for i in range(20)]
    write_null_relations(rels, names, tmp_path / "t.json", tmp_path / "s.json", {"seed": 1})
    from fewshot_kg.kg import Vocab
    back = read_null_relations(tmp_path / "t.json", tmp_path / "s.json", Vocab(names))
    assert {(r.name, r.pattern, tuple(r.triples)) for r in back} == {(r.name, r.pattern, tuple(r.triples)) for r in rels}
    with pytest.raises(ValueError):
        generate_null_relations(range(20), part, 3, 1, 0, patterns=["cyclic"])
