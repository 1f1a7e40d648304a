import random

import pytest

from siailp.kg_core import Vocab, build_graph


def graph_from(triples, relations=None):
    """Build a graph from (head, relation, tail) name triples."""
    ents = Vocab()
    rels = Vocab(relations or ())
    raw = [(ents.add(h), rels.add(r), ents.add(t)) for h, r, t in triples]
    return build_graph(raw, ents, rels)


def random_graph(rng: random.Random, max_entities=8, max_relations=3, max_triples=14):
    n = rng.randint(2, max_entities)
    R = rng.randint(1, max_relations)
    m = rng.randint(1, max_triples)
    ents = Vocab(f"e{i}" for i in range(n))
    rels = Vocab(f"r{i}" for i in range(R))
    raw = [(rng.randrange(n), rng.randrange(R), rng.randrange(n)) for _ in range(m)]
    return build_graph(raw, ents, rels)


@pytest.fixture
def one_edge():
    return graph_from([("s", "r", "t")])


@pytest.fixture
def diamond():
    return graph_from([("s", "r1", "a"), ("a", "r2", "t"), ("s", "r3", "b"), ("b", "r4", "t")])


@pytest.fixture
def chain2():
    return graph_from([("s", "r1", "a"), ("a", "r2", "b")])


def family_triples(families=4):
    """Small two-generation family graph with three relations and some composite structure."""
    trip = []
    for k in range(families):
        gp, p, c1, c2 = f"gp{k}", f"p{k}", f"c{k}a", f"c{k}b"
        trip += [(gp, "parent", p), (p, "parent", c1), (p, "parent", c2),
                 (gp, "grandparent", c1), (gp, "grandparent", c2), (c1, "sibling", c2)]
    return trip


@pytest.fixture
def family():
    return graph_from(family_triples())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
