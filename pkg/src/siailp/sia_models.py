"""Connection-based and subgraph-based siamese scorers.

Both models share one encoder stack per model (two bi-LSTM layers and a
dimension-wise max-pool) across all path slots.  A batch of paths is
deduplicated and grouped by length, so each distinct path is encoded once
at its true length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from siailp import ndiff
from siailp.ndiff import PAD_ID, ParamStore, Trace
from siailp.path_miner import inverse_path

EMPTY_PATH = ()  # zero-embedding pseudo-path standing in for missing material


def select_paths(available, k, rng):
    """Pick ``k`` slot paths: without replacement when enough exist, else pad with repeats."""
    available = list(available)
    if not available:
        return []
    if len(available) >= k:
        return rng.sample(available, k)
    chosen = available + [rng.choice(available) for _ in range(k - len(available))]
    rng.shuffle(chosen)
    return chosen


def _path_ids(path):
    return list(path) if path else [PAD_ID]


class _SiameseModel:
    kind = None

    def __init__(self, store: ParamStore):
        if store.kind != self.kind:
            raise ValueError(f"{type(self).__name__} needs a {self.kind!r} parameter store, got {store.kind!r}")
        self.store = store

    @property
    def num_paths(self):
        return self.store.num_paths

    @property
    def num_relations(self):
        return self.store.num_relations

    def _check_paths(self, paths):
        limit = 2 * self.num_relations
        for p in paths:
            for r in p:
                if not (0 <= r < limit):
                    raise IndexError(f"relation id {r} in path {p} outside [0, {limit})")

    def encode_unique(self, tr: Trace, paths):
        """Encode distinct paths; returns (Var of shape (U, D), {path: row})."""
        unique = list(dict.fromkeys(paths))
        self._check_paths(unique)
        by_len: dict = {}
        for p in unique:
            by_len.setdefault(max(len(p), 1), []).append(p)
        parts, row_of = [], {}
        emb = tr.param("emb_in")
        layers = [
            [tr.param(f"{layer}.{d}.{w}") for d in ("fwd", "bwd") for w in ("W", "b")]
            for layer in ("lstm1", "lstm2")
        ]
        start = 0
        for length in sorted(by_len):
            group = by_len[length]
            ids = np.array([_path_ids(p) for p in group], dtype=np.int64)
            x = ndiff.embed(tr, emb, ids)
            for Wf, bf, Wb, bb in layers:
                x = ndiff.bilstm_layer(tr, x, Wf, bf, Wb, bb)
            parts.append(ndiff.maxpool_dimwise(tr, x))
            for j, p in enumerate(group):
                row_of[p] = start + j
            start += len(group)
        return ndiff.concat_rows(tr, parts), row_of

    def encode_path(self, path) -> np.ndarray:
        """h_max of a single path through the shared stack."""
        enc, row_of = self.encode_unique(Trace(self.store, record=False), [tuple(path)])
        return enc.value[row_of[tuple(path)]]

    def represent(self, tr: Trace, slot_lists):
        """Unit-normalized representation for each sample's ordered slot paths -> (S, D)."""
        flat = [tuple(p) for slots in slot_lists for p in slots]
        enc, row_of = self.encode_unique(tr, flat)
        k = len(slot_lists[0])
        if any(len(s) != k for s in slot_lists):
            raise ValueError("every sample needs the same number of path slots")
        index = np.array([[row_of[tuple(p)] for p in slots] for slots in slot_lists], dtype=np.int64)
        x = ndiff.take_rows(tr, enc, index)
        h = ndiff.ffn(tr, x, tr.param("ffn.W1"), tr.param("ffn.b1"), tr.param("ffn.W2"), tr.param("ffn.b2"))
        return ndiff.unit_normalize(tr, h)

    def cosines(self, tr: Trace, slot_lists, relations):
        relations = np.asarray(relations, dtype=np.int64)
        if relations.size and (relations.min() < 0 or relations.max() >= self.num_relations):
            raise IndexError(f"target relation must be an initial relation in [0, {self.num_relations})")
        rep = self.represent(tr, slot_lists)
        out_emb = ndiff.unit_normalize(tr, ndiff.embed(tr, tr.param("emb_out"), relations))
        return ndiff.cosine_score(tr, rep, out_emb)

    def loss(self, tr: Trace, slot_lists, relations, labels):
        return ndiff.bce_loss(tr, self.cosines(tr, slot_lists, relations), labels)

    def probabilities(self, slot_lists, relations) -> np.ndarray:
        tr = Trace(self.store, record=False)
        return ndiff.score_to_prob(self.cosines(tr, slot_lists, relations).value)

    def relation_probabilities(self, slot_lists) -> np.ndarray:
        """(S, |R|) probabilities of every initial relation for each sample."""
        tr = Trace(self.store, record=False)
        rep = self.represent(tr, slot_lists).value
        out = self.store["emb_out"][: self.num_relations]
        out = out / np.linalg.norm(out, axis=1, keepdims=True)
        return ndiff.score_to_prob(np.clip(rep @ out.T, -1.0, 1.0))


class ConnectionModel(_SiameseModel):
    kind = "connection"

    def slots(self, paths):
        if len(paths) != self.num_paths:
            raise ValueError(f"connection model takes exactly {self.num_paths} paths, got {len(paths)}")
        return [tuple(p) for p in paths]

    def score(self, paths, relation) -> float:
        return float(self.probabilities([self.slots(paths)], [relation])[0])


class SubgraphModel(_SiameseModel):
    kind = "subgraph"

    def slots(self, src_paths, tgt_paths):
        k = self.num_paths
        if len(src_paths) != k or len(tgt_paths) != k:
            raise ValueError(f"subgraph model takes {k} source and {k} target paths")
        return [tuple(p) for p in src_paths] + [tuple(p) for p in tgt_paths]

    def score(self, src_paths, tgt_paths, relation) -> float:
        return float(self.probabilities([self.slots(src_paths, tgt_paths)], [relation])[0])


def score_connection(model: ConnectionModel, paths, relation) -> float:
    return model.score(paths, relation)


def score_subgraph(model: SubgraphModel, src_paths, tgt_paths, relation) -> float:
    return model.score(src_paths, tgt_paths, relation)


def combine_hybrid(connection_score, subgraph_score):
    """Mean of both probabilities; subgraph alone when no connecting path exists."""
    if connection_score is None:
        return subgraph_score
    return (connection_score + subgraph_score) / 2.0


def score_hybrid(conn_model, sub_model, relation, conn_paths, src_paths, tgt_paths) -> float:
    """Hybrid score of one query from already-selected slot paths (``conn_paths`` may be empty)."""
    sub = sub_model.score(src_paths, tgt_paths, relation)
    conn = conn_model.score(conn_paths, relation) if conn_paths else None
    return combine_hybrid(conn, sub)


@dataclass(frozen=True)
class Query:
    source: int
    relation: int
    target: int
    conn_paths: tuple = ()
    src_paths: tuple = ()
    tgt_paths: tuple = ()


def canonicalize_query(query: Query, num_relations: int) -> Query:
    """Rewrite a query on an inverse relation as the equivalent initial-relation query."""
    if query.relation < num_relations:
        return query
    return Query(
        query.target,
        query.relation - num_relations,
        query.source,
        tuple(inverse_path(p, num_relations) for p in query.conn_paths),
        query.tgt_paths,
        query.src_paths,
    )


@dataclass(frozen=True)
class ScoredTriple:
    source: int
    relation: int
    target: int
    score: float
    provenance: str
