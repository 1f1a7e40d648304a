import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siailp.errors import DataError, ParseError, VocabularyError
from siailp.kg_core import (
    Vocab,
    build_graph,
    inverse_of,
    load_graph,
    load_query_triples,
    load_triples,
    read_relation_vocab,
    write_relation_vocab,
    write_triples,
)

from conftest import graph_from


def write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_single_line_file(tmp_path):
    raw, ents, rels = load_triples(write(tmp_path, "A\t_hypernym\tB\n"))
    assert raw == [(0, 0, 1)]
    assert len(ents) == 2 and len(rels) == 1


def test_empty_file(tmp_path):
    raw, ents, rels = load_triples(write(tmp_path, ""))
    assert raw == [] and len(ents) == 0 and len(rels) == 0


def test_duplicates_removed_at_build(tmp_path):
    lines = [f"e{i}\tr{i % 3}\te{i + 1}" for i in range(8)]
    lines += [lines[2], lines[5]]
    raw, ents, rels = load_triples(write(tmp_path, "\n".join(lines) + "\n"))
    assert len(raw) == 10
    g = build_graph(raw, ents, rels)
    assert len(g.initial_triples) == 8
    assert len(g.triples) == 16


def test_malformed_line_reports_line_number(tmp_path):
    p = write(tmp_path, "A\tr\tB\nA r B\n")
    with pytest.raises(ParseError, match=":2:"):
        load_triples(p)


def test_unknown_relation_under_frozen_vocab(tmp_path):
    p = write(tmp_path, "A\tr\tB\nB\tq\tC\n")
    with pytest.raises(VocabularyError):
        load_triples(p, relation_vocab=Vocab(["r"], frozen=True))


def test_entity_vocab_fresh_per_graph(tmp_path):
    rels = Vocab(["r"], frozen=True)
    g1 = load_graph(write(tmp_path, "A\tr\tB\n", "a.txt"), relation_vocab=rels)
    g2 = load_graph(write(tmp_path, "X\tr\tY\n", "b.txt"), relation_vocab=rels)
    assert g1.entities.names == ["A", "B"] and g2.entities.names == ["X", "Y"]
    assert g1.relations == g2.relations


def test_missing_file():
    with pytest.raises(DataError):
        load_triples("/nonexistent/triples.txt")


def test_one_triple_closure(one_edge):
    assert set(one_edge.triples) == {(0, 0, 1), (1, 1, 0)}


def test_expanded_relation_ids_span():
    g = graph_from([(f"a{i}", f"r{i}", f"b{i}") for i in range(9)])
    rels = {r for _, r, _ in g.triples}
    assert rels == set(range(18))
    assert g.expanded_relations == 18


def test_symmetric_pair_not_collapsed():
    g = graph_from([("a", "r", "b"), ("b", "r", "a")])
    assert len(g.triples) == 4


def test_neighbors(one_edge):
    assert list(one_edge.neighbors(0)) == [(0, 1)]
    assert list(one_edge.neighbors(1)) == [(1, 0)]
    with pytest.raises(IndexError):
        one_edge.neighbors(2)


def test_star_neighbors():
    g = graph_from([("h", "r", x) for x in "xyz"])
    assert len(g.neighbors(g.entities.lookup("h"))) == 3


def test_degree_profile_uniform():
    g = graph_from([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "a")])
    assert g.degree_profile().popular == frozenset()


def test_degree_profile_star():
    g = graph_from([("hub", "r", f"leaf{i}") for i in range(20)])
    prof = g.degree_profile(5.0)
    assert prof.degrees[0] == 20
    assert prof.mean_degree == pytest.approx(40 / 21)
    assert prof.popular == {0}
    assert g.degree_profile(math.inf).popular == frozenset()


def test_degree_profile_empty_graph():
    g = build_graph([], Vocab(), Vocab())
    with pytest.raises(DataError):
        g.degree_profile()


def test_build_rejects_inverse_ids():
    with pytest.raises(ValueError):
        build_graph([(0, 1, 1)], Vocab(["a", "b"]), Vocab(["r"]))


def test_inverse_relation_names(one_edge):
    assert one_edge.relation_name(1) == "r^-1"
    assert one_edge.parse_relation("r^-1") == 1
    assert one_edge.parse_relation("r") == 0


def test_relation_vocab_file_roundtrip(tmp_path):
    v = Vocab(["a", "b c", "_x"])
    write_relation_vocab(tmp_path / "rel.txt", v)
    assert read_relation_vocab(tmp_path / "rel.txt") == v


def test_query_triples_use_graph_vocab(tmp_path):
    g = load_graph(write(tmp_path, "A\tr\tB\nB\tq\tC\n"))
    q = load_query_triples(write(tmp_path, "A\tq\tC\n", "test.txt"), g)
    assert q == [(0, 1, 2)]
    with pytest.raises(VocabularyError):
        load_query_triples(write(tmp_path, "A\tq\tZ\n", "bad.txt"), g)


raw_triples = st.integers(1, 4).flatmap(
    lambda R: st.tuples(
        st.just(R),
        st.lists(st.tuples(st.integers(0, 6), st.integers(0, R - 1), st.integers(0, 6)), max_size=25),
    )
)


@settings(max_examples=100, deadline=None)
@given(raw_triples)
def test_inverse_closure_and_adjacency(data):
    R, raw = data
    g = build_graph(raw, Vocab(f"e{i}" for i in range(7)), Vocab(f"r{i}" for i in range(R)))
    stored = set(g.triples)
    assert len(stored) == len(g.triples)
    assert len(g.triples) <= 2 * len(raw)
    for s, r, t in stored:
        assert (t, g.inverse_of(r), s) in stored
        assert inverse_of(inverse_of(r, R), R) == r
    for e in range(g.num_entities):
        assert len(g.neighbors(e)) == sum(1 for s, _, _ in stored if s == e)
        assert {(s, r, t) for r, t in g.neighbors(e) for s in [e]} == {x for x in stored if x[0] == e}


@settings(max_examples=50, deadline=None)
@given(raw_triples)
def test_write_load_roundtrip(tmp_path_factory, data):
    R, raw = data
    g = build_graph(raw, Vocab(f"e{i}" for i in range(7)), Vocab(f"r{i}" for i in range(R)))
    path = tmp_path_factory.mktemp("rt") / "g.txt"
    write_triples(path, g)
    g2 = load_graph(path)
    names = lambda graph: {
        (graph.entities.names[s], graph.relation_name(r), graph.entities.names[t]) for s, r, t in graph.triples
    }
    assert names(g2) == names(g)
