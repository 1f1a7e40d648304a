"""Triple files, vocabularies and the inverse-added knowledge graph.

Relation ids ``0 <= k < R`` are the initial relations read from disk; id
``k + R`` is the inverse of ``k``.  Every graph stores both directions of
each triple, so ``neighbors(e)`` already contains the inverse edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from siailp.errors import DataError, ParseError, VocabularyError

INVERSE_SUFFIX = "^-1"


class Vocab:
    """Bidirectional string <-> id mapping, ids assigned in first-seen order."""

    def __init__(self, names=(), frozen=False):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        self.frozen = False
        for name in names:
            self.add(name)
        self.frozen = frozen

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is not None:
            return idx
        if self.frozen:
            raise VocabularyError(f"unknown name {name!r} in frozen vocabulary")
        idx = len(self.names)
        self.names.append(name)
        self.index[name] = idx
        return idx

    def lookup(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise VocabularyError(f"unknown name {name!r}") from None

    def freeze(self) -> "Vocab":
        self.frozen = True
        return self

    def copy(self, frozen=None) -> "Vocab":
        return Vocab(self.names, frozen=self.frozen if frozen is None else frozen)

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.names == other.names

    def __repr__(self):
        return f"Vocab({len(self.names)} names, frozen={self.frozen})"


def inverse_of(relation: int, num_relations: int) -> int:
    return (relation + num_relations) % (2 * num_relations)


def load_triples(path, relation_vocab: Vocab | None = None, entity_vocab: Vocab | None = None):
    """Read a tab-separated ``head relation tail`` file.

    Returns ``(raw_triples, entity_vocab, relation_vocab)``.  A fresh entity
    vocabulary is built unless ``entity_vocab`` is given; with a frozen
    vocabulary (either kind) unseen names raise :class:`VocabularyError`.
    Duplicate lines are kept here and removed by :func:`build_graph`.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"triple file not found: {path}")
    entities = Vocab() if entity_vocab is None else entity_vocab
    relations = Vocab() if relation_vocab is None else relation_vocab
    triples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            head, rel, tail = fields
            try:
                r = relations.add(rel)
            except VocabularyError:
                raise VocabularyError(f"{path}:{lineno}: unknown relation {rel!r}") from None
            try:
                s = entities.add(head)
                t = entities.add(tail)
            except VocabularyError as exc:
                raise VocabularyError(f"{path}:{lineno}: {exc}") from None
            triples.append((s, r, t))
    return triples, entities, relations


@dataclass(frozen=True)
class DegreeProfile:
    degrees: tuple
    mean_degree: float
    popular: frozenset
    popularity_factor: float = 5.0

    def is_popular(self, entity: int) -> bool:
        return entity in self.popular


class KnowledgeGraph:
    """Immutable inverse-added triple store with per-entity adjacency."""

    def __init__(self, entities: Vocab, relations: Vocab, raw_triples):
        self.entities = entities
        self.relations = relations
        self.num_relations = len(relations)
        R = self.num_relations
        n = len(entities)
        initial = {}
        for s, r, t in raw_triples:
            if not (0 <= r < R):
                raise ValueError(f"relation id {r} is not an initial relation (|R|={R})")
            if not (0 <= s < n and 0 <= t < n):
                raise ValueError(f"entity id out of range in {(s, r, t)}")
            initial.setdefault((s, r, t), None)
        # dict keys keep first-seen order
        self.initial_triples: tuple = tuple(initial)
        ordered = {}
        for s, r, t in self.initial_triples:
            ordered.setdefault((s, r, t), None)
            ordered.setdefault((t, r + R, s), None)
        self.triples: tuple = tuple(ordered)
        self._triple_set = frozenset(self.triples)
        adjacency = [[] for _ in range(n)]
        for s, r, t in self.triples:
            adjacency[s].append((r, t))
        self.adjacency = tuple(tuple(a) for a in adjacency)
        pair_relations = {}
        for s, r, t in self.initial_triples:
            pair_relations.setdefault((s, t), set()).add(r)
        self._pair_relations = {k: frozenset(v) for k, v in pair_relations.items()}

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def expanded_relations(self) -> int:
        return 2 * self.num_relations

    def inverse_of(self, relation: int) -> int:
        return inverse_of(relation, self.num_relations)

    def neighbors(self, entity: int):
        if not (0 <= entity < self.num_entities):
            raise IndexError(f"entity id {entity} out of range [0, {self.num_entities})")
        return self.adjacency[entity]

    def has_triple(self, s: int, r: int, t: int) -> bool:
        return (s, r, t) in self._triple_set

    def relations_between(self, s: int, t: int) -> frozenset:
        """Initial relations r with (s, r, t) in the graph."""
        return self._pair_relations.get((s, t), frozenset())

    def relation_name(self, relation: int) -> str:
        R = self.num_relations
        if relation < R:
            return self.relations.names[relation]
        return self.relations.names[relation - R] + INVERSE_SUFFIX

    def parse_relation(self, name: str) -> int:
        """Expanded id for a relation name; ``name^-1`` denotes the inverse."""
        if name.endswith(INVERSE_SUFFIX) and name not in self.relations:
            return self.relations.lookup(name[: -len(INVERSE_SUFFIX)]) + self.num_relations
        return self.relations.lookup(name)

    def degree_profile(self, popularity_factor: float = 5.0) -> DegreeProfile:
        if self.num_entities == 0 or not self.triples:
            raise DataError("degree profile of an empty graph")
        degrees = tuple(len(a) for a in self.adjacency)
        mean = sum(degrees) / len(degrees)
        if math.isinf(popularity_factor):
            popular = frozenset()
        else:
            threshold = popularity_factor * mean
            popular = frozenset(e for e, d in enumerate(degrees) if d > threshold)
        return DegreeProfile(degrees, mean, popular, popularity_factor)

    def __len__(self):
        return len(self.triples)

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
            f"triples={len(self.triples)})"
        )


def build_graph(raw_triples, entities: Vocab, relations: Vocab) -> KnowledgeGraph:
    return KnowledgeGraph(entities, relations, raw_triples)


def degree_profile(graph: KnowledgeGraph, popularity_factor: float = 5.0) -> DegreeProfile:
    return graph.degree_profile(popularity_factor)


def neighbors(graph: KnowledgeGraph, entity: int):
    return graph.neighbors(entity)


def load_graph(path, relation_vocab: Vocab | None = None) -> KnowledgeGraph:
    """Load a graph file; pass the training relation vocabulary for inference graphs."""
    if relation_vocab is not None and not relation_vocab.frozen:
        relation_vocab = relation_vocab.copy(frozen=True)
    raw, entities, relations = load_triples(path, relation_vocab=relation_vocab)
    return build_graph(raw, entities, relations)


def write_triples(path, graph: KnowledgeGraph) -> None:
    """Write the initial (non-inverse) triples back to tab-separated text."""
    ent = graph.entities.names
    rel = graph.relations.names
    with open(path, "w", encoding="utf-8") as fh:
        for s, r, t in graph.initial_triples:
            fh.write(f"{ent[s]}\t{rel[r]}\t{ent[t]}\n")


def load_query_triples(path, graph: KnowledgeGraph):
    """Triples to score against ``graph``: entity and relation names must already exist there."""
    raw, _, _ = load_triples(
        path,
        relation_vocab=graph.relations.copy(frozen=True),
        entity_vocab=graph.entities.copy(frozen=True),
    )
    return list(dict.fromkeys(raw))


def read_relation_vocab(path) -> Vocab:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"relation vocabulary file not found: {path}")
    names = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or fields[0] != str(len(names)):
                raise ParseError(path, lineno, "expected '<id>\\t<name>' with consecutive ids")
            names.append(fields[1])
    return Vocab(names, frozen=True)


def write_relation_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(vocab.names):
            fh.write(f"{i}\t{name}\n")
