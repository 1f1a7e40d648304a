"""Budgeted depth-first enumeration of acyclic relation paths.

A path is identified by its relation sequence only (a tuple of expanded
relation ids).  Mining from a source ``s`` walks entity-distinct routes of
length at most ``L``; ``C`` caps the number of child expansions made from
paths of each length and ``N`` caps the distinct sequences recorded per
target.  Targets are recorded only when they belong to the qualified set.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path as FsPath

from siailp.errors import DataError, ParseError
from siailp.kg_core import DegreeProfile, KnowledgeGraph, inverse_of
from siailp.seeding import py_rng

log = logging.getLogger(__name__)

CACHE_MAGIC = "SIAILP-PATHS"
CACHE_VERSION = "v1"
NO_TARGET = -1


def inverse_path(path, num_relations: int) -> tuple:
    """Reverse the sequence and invert every relation; maps s->t paths to t->s."""
    return tuple(inverse_of(r, num_relations) for r in reversed(path))


@dataclass(frozen=True)
class MinerBudget:
    L: int = 10
    C: int = 20000
    N: int = 50

    def __post_init__(self):
        for name in ("L", "C", "N"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"budget {name} must be a positive integer, got {value!r}")


CONNECTION_BUDGET = MinerBudget(L=10, C=20000, N=50)
SUBGRAPH_BUDGET = MinerBudget(L=3, C=20000, N=50)


@dataclass(frozen=True)
class QualifiedSet:
    mode: str
    target: int | None = None

    ALL = "all-entities"
    NEIGHBORS = "direct-neighbors-of-source"
    SINGLE = "single-target"

    def __post_init__(self):
        if self.mode not in (self.ALL, self.NEIGHBORS, self.SINGLE):
            raise ValueError(f"unknown qualified-set mode {self.mode!r}")
        if self.mode == self.SINGLE and self.target is None:
            raise ValueError("single-target qualified set needs a target entity")

    @classmethod
    def all_entities(cls):
        return cls(cls.ALL)

    @classmethod
    def direct_neighbors(cls):
        return cls(cls.NEIGHBORS)

    @classmethod
    def single_target(cls, target: int):
        return cls(cls.SINGLE, int(target))


@dataclass
class MinerState:
    """Counters and results of one mining run from a single source."""

    source: int
    recursion_counts: list
    recorded: dict = field(default_factory=dict)  # target -> {path: None}, insertion ordered
    order: list = field(default_factory=list)  # (target, path) in recording order
    witnesses: list | None = None  # (target, path, entity route) when instrumented

    def recorded_count(self, target: int) -> int:
        return len(self.recorded.get(target, ()))

    def paths(self) -> dict:
        return {t: list(ps) for t, ps in self.recorded.items()}


def _ordered_neighbors(adj, rng, popular):
    order = list(adj)
    rng.shuffle(order)
    if popular:
        order = [x for x in order if x[1] not in popular] + [x for x in order if x[1] in popular]
    return order


def run_miner(
    graph: KnowledgeGraph,
    source: int,
    qualified: QualifiedSet,
    budget: MinerBudget,
    rng,
    avoid_popular: DegreeProfile | None = None,
    record_witnesses: bool = False,
) -> MinerState:
    """Run the recursive path finder from ``source`` with an explicit stack."""
    n = graph.num_entities
    if not (0 <= source < n):
        raise IndexError(f"source entity {source} out of range [0, {n})")
    L, C, N = budget.L, budget.C, budget.N
    adj = graph.adjacency
    state = MinerState(source, [0] * L, witnesses=[] if record_witnesses else None)
    recorded = state.recorded

    if qualified.mode == QualifiedSet.ALL:
        qset = None
        quota_slots = n - 1
    elif qualified.mode == QualifiedSet.NEIGHBORS:
        qset = {t for _, t in adj[source]} - {source}
        quota_slots = len(qset)
    else:
        if not (0 <= qualified.target < n):
            raise IndexError(f"target entity {qualified.target} out of range [0, {n})")
        qset = {qualified.target} - {source}
        quota_slots = len(qset)
    popular = avoid_popular.popular if avoid_popular is not None else None
    saturated = 0

    rels: list = []
    route: list = [source]
    on_path = {source}
    stack = [[_ordered_neighbors(adj[source], rng, popular), 0]]
    counts = state.recursion_counts
    while stack:
        frame = stack[-1]
        order, i = frame
        depth = len(rels)
        if i >= len(order) or counts[depth] >= C:
            stack.pop()
            if rels:
                rels.pop()
                on_path.discard(route.pop())
            continue
        frame[1] = i + 1
        rel, nb = order[i]
        if nb in on_path:
            continue
        if popular and nb in popular and saturated >= quota_slots:
            # every recording quota is full; popular hubs are only worth it otherwise
            continue
        counts[depth] += 1
        rels.append(rel)
        route.append(nb)
        on_path.add(nb)
        if qset is None or nb in qset:
            bucket = recorded.get(nb)
            if bucket is None:
                bucket = recorded[nb] = {}
            if len(bucket) < N:
                path = tuple(rels)
                if path not in bucket:
                    bucket[path] = None
                    state.order.append((nb, path))
                    if state.witnesses is not None:
                        state.witnesses.append((nb, path, tuple(route)))
                    if len(bucket) == N:
                        saturated += 1
        if len(rels) < L:
            stack.append([_ordered_neighbors(adj[nb], rng, popular), 0])
        else:
            rels.pop()
            on_path.discard(route.pop())
    return state


def find_paths(graph, source, qualified, budget, rng, avoid_popular=None) -> dict:
    """Map target entity -> list of distinct relation sequences found from ``source``."""
    return run_miner(graph, source, qualified, budget, rng, avoid_popular).paths()


def find_connecting_paths(graph, s, t, budget=CONNECTION_BUDGET, rng=None, avoid_popular=None) -> list:
    if rng is None:
        rng = py_rng(0, "connect", s, t)
    state = run_miner(graph, s, QualifiedSet.single_target(t), budget, rng, avoid_popular)
    return list(state.recorded.get(t, ()))


def mine_subgraph_paths(graph, entity, budget=SUBGRAPH_BUDGET, rng=None, avoid_popular=None) -> list:
    """Flat, deduplicated out-reaching relation sequences from ``entity``."""
    if rng is None:
        rng = py_rng(0, "subgraph", entity)
    state = run_miner(graph, entity, QualifiedSet.all_entities(), budget, rng, avoid_popular)
    return list(dict.fromkeys(p for _, p in state.order))


class PathCache:
    """Mined path corpus, keyed by ``(source, target)`` or by source.

    Connection caches map ``(s, t) -> [path, ...]``; subgraph caches map
    ``s -> [path, ...]``.  Path lists keep discovery order.
    """

    CONNECTION = "connection"
    SUBGRAPH = "subgraph"

    def __init__(self, mode: str, budget: MinerBudget, seed: int, data: dict | None = None):
        if mode not in (self.CONNECTION, self.SUBGRAPH):
            raise ValueError(f"unknown cache mode {mode!r}")
        self.mode = mode
        self.budget = budget
        self.seed = int(seed)
        self.data: dict = {} if data is None else data

    def __getitem__(self, key):
        return self.data.get(key, [])

    def __contains__(self, key):
        return key in self.data

    def __len__(self):
        return len(self.data)

    def keys(self):
        return self.data.keys()

    def num_paths(self) -> int:
        return sum(len(v) for v in self.data.values())

    def header(self) -> str:
        b = self.budget
        return f"{CACHE_MAGIC} {CACHE_VERSION} mode={self.mode} L={b.L} C={b.C} N={b.N} seed={self.seed}"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header() + "\n")
            for key in sorted(self.data):
                src, dst = (key if self.mode == self.CONNECTION else (key, NO_TARGET))
                for p in self.data[key]:
                    fh.write(f"{src}\t{dst}\t{','.join(map(str, p))}\n")

    @classmethod
    def read(cls, path) -> "PathCache":
        path = FsPath(path)
        if not path.is_file():
            raise DataError(f"path cache not found: {path}")
        with path.open(encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            parts = header.split()
            if len(parts) != 7 or parts[0] != CACHE_MAGIC or parts[1] != CACHE_VERSION:
                raise ParseError(path, 1, f"not a {CACHE_MAGIC} {CACHE_VERSION} file")
            try:
                fields = dict(p.split("=", 1) for p in parts[2:])
                mode = fields["mode"]
                budget = MinerBudget(int(fields["L"]), int(fields["C"]), int(fields["N"]))
                seed = int(fields["seed"])
            except (KeyError, ValueError) as exc:
                raise ParseError(path, 1, f"bad header: {exc}") from None
            cache = cls(mode, budget, seed)
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    src, dst, seq = line.split("\t")
                    key = (int(src), int(dst)) if mode == cls.CONNECTION else int(src)
                    p = tuple(int(x) for x in seq.split(","))
                except ValueError:
                    raise ParseError(path, lineno, "expected 'src<TAB>dst<TAB>r1,r2,...'") from None
                cache.data.setdefault(key, []).append(p)
        return cache

    def check_against(self, graph: KnowledgeGraph) -> None:
        """Raise DataError when ids in the cache do not fit ``graph``."""
        n, r2 = graph.num_entities, graph.expanded_relations
        for key, paths in self.data.items():
            ents = key if isinstance(key, tuple) else (key,)
            if any(not (0 <= e < n) for e in ents):
                raise DataError(f"cache key {key} references an entity outside the graph")
            for p in paths:
                if any(not (0 <= r < r2) for r in p):
                    raise DataError(f"cache path {p} uses relation ids outside [0, {r2})")


# worker-process globals for parallel mining
_GRAPH = None


def _init_worker(graph):
    global _GRAPH
    _GRAPH = graph


def _mine_connection_source(args):
    s, budget, repeats, seed, profile = args
    merged: dict = {}
    for k in range(repeats):
        state = run_miner(_GRAPH, s, QualifiedSet.direct_neighbors(), budget, py_rng(seed, "mine", s, k), profile)
        for t, paths in state.recorded.items():
            bucket = merged.setdefault((s, t), {})
            for p in paths:
                bucket[p] = None
    return {key: list(v) for key, v in merged.items()}


def _mine_subgraph_source(args):
    e, budget, repeats, seed, profile = args
    merged: dict = {}
    for k in range(repeats):
        rng = py_rng(seed, "mine", e, k)
        for p in mine_subgraph_paths(_GRAPH, e, budget, rng, profile):
            merged[p] = None
    return {e: list(merged)} if merged else {}


def _mine_all(graph, fn, budget, repeats, seed, profile, workers, sources, progress):
    global _GRAPH
    sources = list(range(graph.num_entities)) if sources is None else list(sources)
    jobs = [(s, budget, repeats, seed, profile) for s in sources]
    data: dict = {}
    step = max(1, len(jobs) // 20)
    if workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker, initargs=(graph,)) as pool:
            results = pool.imap(fn, jobs, chunksize=max(1, len(jobs) // (workers * 8)))
            for i, part in enumerate(results, start=1):
                data.update(part)
                if progress and (i % step == 0 or i == len(jobs)):
                    progress(i, len(jobs))
    else:
        _init_worker(graph)
        try:
            for i, job in enumerate(jobs, start=1):
                data.update(fn(job))
                if progress and (i % step == 0 or i == len(jobs)):
                    progress(i, len(jobs))
        finally:
            _GRAPH = None
    return data


def mine_connection_corpus(
    graph, budget=CONNECTION_BUDGET, repeats=10, seed=0, avoid_popular=None, workers=1, sources=None, progress=None
) -> PathCache:
    """Paths from every entity to each of its direct neighbors, unioned over ``repeats`` runs."""
    data = _mine_all(graph, _mine_connection_source, budget, repeats, seed, avoid_popular, workers, sources, progress)
    return PathCache(PathCache.CONNECTION, budget, seed, data)


def mine_subgraph_corpus(
    graph, budget=SUBGRAPH_BUDGET, repeats=1, seed=0, avoid_popular=None, workers=1, sources=None, progress=None
) -> PathCache:
    """Out-reaching paths (all targets qualified) for every entity."""
    data = _mine_all(graph, _mine_subgraph_source, budget, repeats, seed, avoid_popular, workers, sources, progress)
    return PathCache(PathCache.SUBGRAPH, budget, seed, data)
