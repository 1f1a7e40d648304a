import random

import pytest

from siailp.kg_core import Vocab, build_graph
from siailp.path_miner import (
    MinerBudget,
    PathCache,
    QualifiedSet,
    find_connecting_paths,
    find_paths,
    inverse_path,
    mine_connection_corpus,
    mine_subgraph_corpus,
    mine_subgraph_paths,
    run_miner,
)

from conftest import graph_from, random_graph
from oracles import all_walks

BIG = 10**9


def pairs(result):
    return {(t, p) for t, ps in result.items() for p in ps}


def test_one_edge_single_target(one_edge):
    res = find_paths(one_edge, 0, QualifiedSet.single_target(1), MinerBudget(10, BIG, BIG), random.Random(0))
    assert res == {1: [(0,)]}


def test_diamond_single_target(diamond):
    g = diamond
    s, t = g.entities.lookup("s"), g.entities.lookup("t")
    res = find_paths(g, s, QualifiedSet.single_target(t), MinerBudget(2, BIG, BIG), random.Random(1))
    assert set(res[t]) == {(0, 1), (2, 3)}
    capped = find_paths(g, s, QualifiedSet.single_target(t), MinerBudget(2, BIG, 1), random.Random(1))
    assert len(capped[t]) == 1


def test_inverse_path():
    R = 5
    assert inverse_path((1, 2 + R, 3), R) == (3 + R, 2, 1 + R)
    assert inverse_path((4,), R) == (4 + R,)
    rng = random.Random(3)
    for _ in range(200):
        p = tuple(rng.randrange(2 * R) for _ in range(rng.randint(1, 6)))
        assert inverse_path(inverse_path(p, R), R) == p


@pytest.mark.parametrize("mode", ["all", "neighbors", "single"])
def test_oracle_equivalence(mode):
    rng = random.Random(1234)
    for trial in range(50):
        g = random_graph(rng)
        L = rng.randint(1, 4)
        s = rng.randrange(g.num_entities)
        walks = all_walks(g, s, L)
        if mode == "all":
            q, expected = QualifiedSet.all_entities(), walks
        elif mode == "neighbors":
            nbrs = {t for _, t in g.neighbors(s)} - {s}
            q, expected = QualifiedSet.direct_neighbors(), {w for w in walks if w[0] in nbrs}
        else:
            t0 = rng.randrange(g.num_entities)
            q, expected = QualifiedSet.single_target(t0), {w for w in walks if w[0] == t0}
        got = find_paths(g, s, q, MinerBudget(L, BIG, BIG), random.Random(trial))
        assert pairs(got) == expected, (trial, g.triples, s, L)


def test_witnesses_are_acyclic_routes():
    rng = random.Random(7)
    for trial in range(30):
        g = random_graph(rng)
        s = rng.randrange(g.num_entities)
        state = run_miner(g, s, QualifiedSet.all_entities(), MinerBudget(4, BIG, BIG), random.Random(trial),
                          record_witnesses=True)
        for target, path, route in state.witnesses:
            assert len(set(route)) == len(route)
            assert route[0] == s and route[-1] == target and len(route) == len(path) + 1
            for a, r, b in zip(route, path, route[1:]):
                assert g.has_triple(a, r, b)


def test_quota_respect():
    rng = random.Random(11)
    for trial in range(30):
        g = random_graph(rng, max_entities=8, max_triples=20)
        s = rng.randrange(g.num_entities)
        C, N = rng.randint(1, 6), rng.randint(1, 3)
        state = run_miner(g, s, QualifiedSet.all_entities(), MinerBudget(4, C, N), random.Random(trial))
        assert all(c <= C for c in state.recursion_counts)
        assert all(len(ps) <= N for ps in state.recorded.values())
        for ps in state.recorded.values():
            assert len(set(ps)) == len(ps)


def test_source_never_recorded():
    g = graph_from([("a", "r", "a"), ("a", "r", "b"), ("b", "q", "a")])
    res = find_paths(g, 0, QualifiedSet.all_entities(), MinerBudget(4, BIG, BIG), random.Random(0))
    assert 0 not in res


def test_inverse_paths_found_in_reverse_mining():
    rng = random.Random(5)
    for trial in range(20):
        g = random_graph(rng)
        s, t = rng.randrange(g.num_entities), rng.randrange(g.num_entities)
        fwd = find_connecting_paths(g, s, t, MinerBudget(4, BIG, BIG), random.Random(trial))
        back = set(find_connecting_paths(g, t, s, MinerBudget(4, BIG, BIG), random.Random(trial + 1)))
        for p in fwd:
            assert inverse_path(p, g.num_relations) in back


def test_avoid_popular_skips_hub_once_quota_met():
    # s reaches t directly and through a popular hub
    triples = [("s", "r", "t"), ("s", "q", "hub"), ("hub", "q", "t")] + [("hub", "q", f"x{i}") for i in range(30)]
    g = graph_from(triples)
    prof = g.degree_profile()
    hub = g.entities.lookup("hub")
    assert hub in prof.popular
    s, t = g.entities.lookup("s"), g.entities.lookup("t")
    q = QualifiedSet.single_target(t)
    state = run_miner(g, s, q, MinerBudget(3, BIG, 1), random.Random(0), avoid_popular=prof)
    assert list(state.recorded[t]) == [(0,)]
    assert state.recursion_counts[0] == 1
    # quota unmet: the hub is still used so targets stay reachable
    state = run_miner(g, s, q, MinerBudget(3, BIG, 5), random.Random(0), avoid_popular=prof)
    assert (1, 1) in state.recorded[t]


def test_avoid_popular_orders_non_popular_first():
    triples = [("s", "q", "hub")] + [("hub", "q", f"x{i}") for i in range(30)] + [("s", "r", f"y{i}") for i in range(3)]
    g = graph_from(triples)
    prof = g.degree_profile()
    for seed in range(10):
        state = run_miner(g, 0, QualifiedSet.all_entities(), MinerBudget(1, BIG, BIG), random.Random(seed),
                          avoid_popular=prof)
        targets = [t for t, _ in state.order]
        assert targets[-1] == g.entities.lookup("hub")


def test_connection_corpus_one_edge(one_edge):
    cache = mine_connection_corpus(one_edge, MinerBudget(10, 20000, 50), repeats=2, seed=0)
    assert set(cache.keys()) == {(0, 1), (1, 0)}
    assert cache[(1, 0)] == [(1,)]


def test_connection_corpus_chain_repeats_no_effect(chain2):
    one = mine_connection_corpus(chain2, repeats=1, seed=3)
    ten = mine_connection_corpus(chain2, repeats=10, seed=3)
    assert {k: set(v) for k, v in one.data.items()} == {k: set(v) for k, v in ten.data.items()}


def test_connection_corpus_diamond_matches_oracle(diamond):
    g = diamond
    cache = mine_connection_corpus(g, MinerBudget(10, BIG, BIG), repeats=1, seed=0)
    for s in range(g.num_entities):
        nbrs = {t for _, t in g.neighbors(s)} - {s}
        walks = {w for w in all_walks(g, s, 10) if w[0] in nbrs}
        got = {(t, p) for (src, t), ps in cache.data.items() if src == s for p in ps}
        assert got == walks


def test_connection_corpus_diamond_with_direct_edge():
    g = graph_from([("s", "r1", "a"), ("a", "r2", "t"), ("s", "r3", "b"), ("b", "r4", "t"), ("s", "r5", "t")])
    cache = mine_connection_corpus(g, MinerBudget(2, BIG, BIG), repeats=1, seed=0)
    s, t = g.entities.lookup("s"), g.entities.lookup("t")
    assert set(cache[(s, t)]) == {(0, 1), (2, 3), (4,)}


def test_subgraph_paths():
    ents = Vocab(["s", "t", "lonely"])
    rels = Vocab(["r"])
    g = build_graph([(0, 0, 1)], ents, rels)
    assert mine_subgraph_paths(g, 2, MinerBudget(3, 20000, 50), random.Random(0)) == []
    assert mine_subgraph_paths(g, 0, MinerBudget(3, 20000, 50), random.Random(0)) == [(0,)]


def test_subgraph_paths_chain_matches_oracle(chain2):
    got = mine_subgraph_paths(chain2, 0, MinerBudget(3, 20000, 50), random.Random(0))
    assert set(got) == {p for _, p in all_walks(chain2, 0, 3)} == {(0,), (0, 1)}
    assert len(got) == len(set(got))


def test_connecting_paths_cases(diamond):
    g = graph_from([("a", "r", "b"), ("c", "r", "d")])
    assert find_connecting_paths(g, 0, 2, MinerBudget(10, 20000, 50), random.Random(0)) == []
    assert find_connecting_paths(g, 0, 1, MinerBudget(10, 20000, 50), random.Random(0)) == [(0,)]
    s, t = diamond.entities.lookup("s"), diamond.entities.lookup("t")
    got = find_connecting_paths(diamond, s, t, MinerBudget(10, 20000, 50), random.Random(0))
    assert set(got) == {(0, 1), (2, 3)}


def test_unknown_source(one_edge):
    with pytest.raises(IndexError):
        find_paths(one_edge, 5, QualifiedSet.all_entities(), MinerBudget(), random.Random(0))


def test_budget_validation():
    with pytest.raises(ValueError):
        MinerBudget(0, 1, 1)


def test_cache_roundtrip_and_determinism(tmp_path):
    rng = random.Random(9)
    g = random_graph(rng, max_entities=8, max_triples=16)
    paths = []
    for i in range(2):
        cache = mine_connection_corpus(g, MinerBudget(5, 50, 5), repeats=3, seed=42)
        p = tmp_path / f"c{i}.txt"
        cache.write(p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = PathCache.read(paths[0])
    assert back.data == cache.data and back.budget == cache.budget and back.seed == 42
    assert paths[0].read_text().splitlines()[0] == "SIAILP-PATHS v1 mode=connection L=5 C=50 N=5 seed=42"


def test_subgraph_cache_format(tmp_path, one_edge):
    cache = mine_subgraph_corpus(one_edge, MinerBudget(3, 20000, 50), seed=1)
    cache.write(tmp_path / "s.txt")
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert lines[1:] == ["0\t-1\t0", "1\t-1\t1"]
    assert PathCache.read(tmp_path / "s.txt").data == {0: [(0,)], 1: [(1,)]}


def test_parallel_mining_matches_serial():
    g = random_graph(random.Random(21), max_entities=8, max_triples=18)
    serial = mine_connection_corpus(g, MinerBudget(5, 100, 10), repeats=2, seed=5, workers=1)
    parallel = mine_connection_corpus(g, MinerBudget(5, 100, 10), repeats=2, seed=5, workers=3)
    assert serial.data == parallel.data
