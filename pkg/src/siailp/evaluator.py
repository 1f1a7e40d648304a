"""AUC-PR and Hits@k evaluation on an inference graph.

Ties are always broken against the positive: a positive tied with ``m``
negatives is ranked ``better + m + 1``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from siailp.errors import DataError, InductiveContractError
from siailp.kg_core import KnowledgeGraph, Vocab
from siailp.path_miner import CONNECTION_BUDGET, SUBGRAPH_BUDGET, MinerBudget, find_connecting_paths, mine_subgraph_paths
from siailp.seeding import py_rng
from siailp.sia_models import EMPTY_PATH, ConnectionModel, SubgraphModel, combine_hybrid, select_paths

log = logging.getLogger(__name__)

SETTINGS = ("auc-pr", "hits10-entity", "hits1-relation", "hits3-relation")
MODES = ("solo", "hybrid")
DEFAULT_MODE = {"auc-pr": "solo", "hits10-entity": "solo", "hits1-relation": "hybrid", "hits3-relation": "hybrid"}


# ---------------------------------------------------------------- metrics


def auc_pr(pos_scores, neg_scores) -> float:
    """Average precision with positives sorted after negatives on equal scores."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc_pr needs at least one positive and one negative score")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    # descending score, then negatives (label 0) before positives
    order = np.lexsort((labels, -scores))
    hits = np.cumsum(labels[order])
    ranks = np.arange(1, scores.size + 1)
    is_pos = labels[order] == 1
    return float(np.mean(hits[is_pos] / ranks[is_pos]))


def pessimistic_rank(pos_score, neg_scores) -> int:
    neg = np.asarray(neg_scores, dtype=np.float64)
    return int(np.sum(neg >= pos_score)) + 1


def hits_at_k(ranks, k) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= k))


def relation_ranks(score_table, true_relations):
    """Rank of the true relation in each row of a (queries, |R|) score table."""
    table = np.asarray(score_table, dtype=np.float64)
    ranks = []
    for row, r in zip(table, true_relations):
        others = np.delete(row, r)
        ranks.append(pessimistic_rank(row[r], others))
    return ranks


# ---------------------------------------------------------------- negatives


def make_entity_negatives(graph: KnowledgeGraph, triple, k, rng, known=None):
    """``k`` distinct head- or tail-corrupted triples absent from ``known`` and the graph."""
    s, r, t = triple
    n = graph.num_entities
    known = set() if known is None else known

    def bad(c):
        return c == triple or c in known or graph.has_triple(*c)

    # head and tail corruptions only coincide on the positive itself
    available = sum(1 for e in range(n) if not bad((e, r, t))) + sum(1 for e in range(n) if not bad((s, r, e)))
    if available < k:
        raise DataError(f"only {available} distinct negatives exist for {triple}, {k} requested")
    chosen = {}
    while len(chosen) < k:
        e = rng.randrange(n)
        cand = (e, r, t) if rng.random() < 0.5 else (s, r, e)
        if bad(cand) or cand in chosen:
            continue
        chosen[cand] = None
    return list(chosen)


# ---------------------------------------------------------------- scoring


@dataclass
class EvalConfig:
    setting: str = "auc-pr"
    mode: str | None = None
    negatives_per_positive: int = 50
    seed: int = 0
    connection_budget: MinerBudget = CONNECTION_BUDGET
    subgraph_budget: MinerBudget = SUBGRAPH_BUDGET
    avoid_popular: bool = False
    popularity_factor: float = 5.0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; choose from {SETTINGS}")
        if self.mode is None:
            self.mode = DEFAULT_MODE[self.setting]
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")

    @property
    def k(self) -> int:
        return {"hits10-entity": 10, "hits1-relation": 1, "hits3-relation": 3}.get(self.setting, 0)


class TripleScorer:
    """Mines evaluation paths on the inference graph and scores triples.

    Every random choice is drawn from a stream keyed by the evaluation seed
    and the entities involved, so a triple gets the same paths no matter
    which ranking it appears in.
    """

    def __init__(self, graph, sub_model: SubgraphModel, conn_model: ConnectionModel | None = None,
                 mode="solo", seed=0, connection_budget=CONNECTION_BUDGET, subgraph_budget=SUBGRAPH_BUDGET,
                 avoid_popular=None):
        if mode == "hybrid" and conn_model is None:
            raise ValueError("hybrid scoring needs a connection model")
        for m in (sub_model, conn_model):
            if m is not None and m.num_relations != graph.num_relations:
                raise InductiveContractError(
                    f"model has {m.num_relations} relations, inference graph has {graph.num_relations}"
                )
        self.graph = graph
        self.sub = sub_model
        self.conn = conn_model
        self.mode = mode
        self.seed = seed
        self.connection_budget = connection_budget
        self.subgraph_budget = subgraph_budget
        self.avoid_popular = avoid_popular
        self._out = {}
        self._conn = {}

    def out_paths(self, e):
        paths = self._out.get(e)
        if paths is None:
            rng = py_rng(self.seed, "eval-subgraph", e)
            paths = self._out[e] = mine_subgraph_paths(self.graph, e, self.subgraph_budget, rng, self.avoid_popular)
        return paths

    def connecting_paths(self, s, t):
        key = (s, t)
        paths = self._conn.get(key)
        if paths is None:
            rng = py_rng(self.seed, "eval-connection", s, t)
            paths = self._conn[key] = find_connecting_paths(
                self.graph, s, t, self.connection_budget, rng, self.avoid_popular
            )
        return paths

    def materials(self, s, t):
        """Slot paths for the pair (s, t): (connection slots or None, subgraph slots, empty flag)."""
        rng = py_rng(self.seed, "eval-select", s, t)
        k = self.sub.num_paths
        src, tgt = self.out_paths(s), self.out_paths(t)
        empty = not src or not tgt
        src_slots = select_paths(src, k, rng) or [EMPTY_PATH] * k
        tgt_slots = select_paths(tgt, k, rng) or [EMPTY_PATH] * k
        conn_slots = None
        if self.mode == "hybrid":
            conn = self.connecting_paths(s, t)
            if conn:
                conn_slots = select_paths(conn, self.conn.num_paths, rng)
        return conn_slots, tuple(src_slots) + tuple(tgt_slots), empty

    def score_triples(self, triples):
        """Probabilities for initial-relation triples; also returns how many used empty material."""
        mats = [self.materials(s, t) for s, _, t in triples]
        rels = [r for _, r, _ in triples]
        sub = self.sub.probabilities([m[1] for m in mats], rels)
        scores = sub.copy()
        if self.mode == "hybrid":
            idx = [i for i, m in enumerate(mats) if m[0] is not None]
            if idx:
                conn = self.conn.probabilities([mats[i][0] for i in idx], [rels[i] for i in idx])
                for j, i in enumerate(idx):
                    scores[i] = combine_hybrid(conn[j], sub[i])
        return scores, sum(1 for m in mats if m[2])

    def score_relations(self, s, t):
        """Probabilities of every initial relation between s and t -> shape (|R|,)."""
        conn_slots, sub_slots, empty = self.materials(s, t)
        scores = self.sub.relation_probabilities([sub_slots])[0]
        if self.mode == "hybrid" and conn_slots is not None:
            scores = combine_hybrid(self.conn.relation_probabilities([conn_slots])[0], scores)
        return scores, empty


# ---------------------------------------------------------------- settings


def hits_at_k_entity(scorer: TripleScorer, test_triples, k=10, negatives=50, seed=0, known=None):
    """Returns (hits fraction, ranks, positives scored with empty material)."""
    known = set(test_triples) if known is None else known
    ranks, skipped = [], 0
    for i, triple in enumerate(test_triples):
        rng = py_rng(seed, "eval-negatives", i)
        negs = make_entity_negatives(scorer.graph, triple, negatives, rng, known)
        scores, _ = scorer.score_triples([triple] + negs)
        s, _, t = triple
        skipped += int(not scorer.out_paths(s) or not scorer.out_paths(t))
        ranks.append(pessimistic_rank(scores[0], scores[1:]))
    return hits_at_k(ranks, k), ranks, skipped


def hits_at_k_relation(scorer: TripleScorer, test_triples, k=3):
    ranks, skipped = [], 0
    table = []
    for s, r, t in test_triples:
        scores, empty = scorer.score_relations(s, t)
        table.append(scores)
        skipped += int(empty)
    ranks = relation_ranks(table, [r for _, r, _ in test_triples]) if table else []
    return hits_at_k(ranks, k), ranks, skipped


def auc_pr_setting(scorer: TripleScorer, test_triples, seed=0, known=None):
    known = set(test_triples) if known is None else known
    negs = []
    for i, triple in enumerate(test_triples):
        negs.extend(make_entity_negatives(scorer.graph, triple, 1, py_rng(seed, "eval-negatives", i), known))
    pos, skipped = scorer.score_triples(test_triples)
    neg, _ = scorer.score_triples(negs)
    return auc_pr(pos, neg), skipped


@dataclass
class MetricsReport:
    metric: str
    value: float
    n: int
    skipped: int
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"metric value {self.value} outside [0, 1]")

    def record(self) -> str:
        return f"metric={self.metric} value={self.value:.17g} n={self.n} skipped={self.skipped} seed={self.seed}"

    def table(self) -> str:
        rows = [("metric", self.metric), ("value", f"{self.value:.4f}"), ("positives", str(self.n)),
                ("skipped", str(self.skipped)), ("seed", str(self.seed))]
        rows += [(k, str(v)) for k, v in sorted(self.config.items())]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def check_inductive_contract(graph_inf: KnowledgeGraph, train_relations: Vocab | None = None,
                             train_entities: Vocab | None = None) -> None:
    if train_relations is not None and graph_inf.relations.names != train_relations.names:
        raise InductiveContractError(
            f"relation vocabulary mismatch: training has {len(train_relations)} relations, "
            f"inference graph has {len(graph_inf.relations)} (or a different order)"
        )
    if train_entities is not None:
        shared = set(train_entities.names) & set(graph_inf.entities.names)
        if shared:
            example = sorted(shared)[:3]
            raise InductiveContractError(
                f"inference graph shares {len(shared)} entities with training, e.g. {example}"
            )


def evaluate(config: EvalConfig, graph_inf: KnowledgeGraph, test_triples, sub_model: SubgraphModel,
             conn_model: ConnectionModel | None = None, train_relations: Vocab | None = None,
             train_entities: Vocab | None = None) -> MetricsReport:
    check_inductive_contract(graph_inf, train_relations, train_entities)
    if not test_triples:
        raise DataError("no test triples to evaluate")
    R = graph_inf.num_relations
    if any(not (0 <= r < R) for _, r, _ in test_triples):
        raise DataError("test triples must use initial relations")
    profile = graph_inf.degree_profile(config.popularity_factor) if config.avoid_popular else None
    scorer = TripleScorer(graph_inf, sub_model, conn_model, config.mode, config.seed,
                          config.connection_budget, config.subgraph_budget, profile)
    known = set(graph_inf.initial_triples) | set(test_triples)
    if config.setting == "auc-pr":
        value, skipped = auc_pr_setting(scorer, test_triples, config.seed, known)
    elif config.setting == "hits10-entity":
        value, _, skipped = hits_at_k_entity(scorer, test_triples, config.k, config.negatives_per_positive,
                                             config.seed, known)
    else:
        value, _, skipped = hits_at_k_relation(scorer, test_triples, config.k)
    echo = {k: (asdict(v) if isinstance(v, MinerBudget) else v) for k, v in asdict(config).items()}
    echo["num_paths"] = sub_model.num_paths
    return MetricsReport(config.setting, value, len(test_triples), skipped, config.seed, echo)
