"""Contrastive training of the two siamese scorers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from siailp.errors import DataError, NumericError
from siailp.kg_core import KnowledgeGraph
from siailp.ndiff import ParamStore, Trace
from siailp.path_miner import PathCache
from siailp.seeding import np_rng, py_rng
from siailp.sia_models import ConnectionModel, SubgraphModel, select_paths

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    num_paths: int = 3
    dim: int = 300
    hidden: int = 150
    ffn_hidden: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mask_target_edge: bool = False

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.adam_eps > 0):
            raise ValueError("learning_rate and adam_eps must be positive")
        for name in ("batch_size", "epochs", "num_paths", "dim", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.ffn_hidden is not None and self.ffn_hidden < 1:
            raise ValueError("ffn_hidden must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.dim != 2 * self.hidden:
            raise ValueError(f"dim ({self.dim}) must equal 2 * hidden ({2 * self.hidden})")


@dataclass(frozen=True)
class TrainSample:
    kind: str
    triple: tuple  # (s, r, t) actually scored, after corruption
    label: int
    slots: tuple  # ordered slot paths fed to the model
    origin: int  # index of the training triple that produced the sample


@dataclass
class SampleStats:
    samples: int = 0
    skipped_no_paths: int = 0
    skipped_no_negative: int = 0
    extra: dict = field(default_factory=dict)


def make_connection_samples(graph: KnowledgeGraph, cache: PathCache, rng, num_paths=3, mask_target_edge=False):
    """One positive and one relation-corrupted negative per triple with connecting paths."""
    R = graph.num_relations
    samples, stats = [], SampleStats()
    for idx, (s, r, t) in enumerate(graph.initial_triples):
        avail = cache[(s, t)]
        if mask_target_edge:
            avail = [p for p in avail if p != (r,)]
        if not avail:
            stats.skipped_no_paths += 1
            continue
        true_rels = graph.relations_between(s, t)
        if len(true_rels) >= R:
            stats.skipped_no_negative += 1
            continue
        slots = tuple(select_paths(avail, num_paths, rng))
        neg = rng.randrange(R)
        while neg in true_rels:
            neg = rng.randrange(R)
        samples.append(TrainSample("connection", (s, r, t), 1, slots, idx))
        samples.append(TrainSample("connection", (s, neg, t), 0, slots, idx))
    stats.samples = len(samples)
    return samples, stats


def make_subgraph_samples(graph: KnowledgeGraph, out_paths: PathCache, rng, num_paths=3, mask_target_edge=False):
    """(s,r,t) labelled 1 plus (s,r',t), (s,r,t'), (s',r,t) labelled 0 for every triple."""
    R, n = graph.num_relations, graph.num_entities
    if R < 2:
        raise DataError("subgraph training needs at least two relations to corrupt")
    samples, stats = [], SampleStats()
    for idx, (s, r, t) in enumerate(graph.initial_triples):
        s_neg = rng.randrange(n)
        t_neg = rng.randrange(n)
        r_neg = rng.randrange(R)
        while r_neg == r:
            r_neg = rng.randrange(R)
        for triple, label in (((s, r, t), 1), ((s, r_neg, t), 0), ((s, r, t_neg), 0), ((s_neg, r, t), 0)):
            a, _, b = triple
            src, tgt = out_paths[a], out_paths[b]
            if mask_target_edge:
                src = [p for p in src if p != (r,)]
                tgt = [p for p in tgt if p != (r + R,)]
            if not src or not tgt:
                stats.skipped_no_paths += 1
                continue
            slots = tuple(select_paths(src, num_paths, rng)) + tuple(select_paths(tgt, num_paths, rng))
            samples.append(TrainSample("subgraph", triple, label, slots, idx))
    stats.samples = len(samples)
    return samples, stats


class Adam:
    """Per-block Adam; blocks whose gradient is all zero are left untouched."""

    def __init__(self, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}

    def step(self, store, grads):
        adam_step(store, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(store, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    for name, g in grads.items():
        if not np.any(g):
            continue
        st = state.get(name)
        if st is None:
            st = state[name] = {"m": np.zeros_like(g), "v": np.zeros_like(g), "t": 0}
        st["t"] += 1
        st["m"] *= beta1
        st["m"] += (1.0 - beta1) * g
        st["v"] *= beta2
        st["v"] += (1.0 - beta2) * g * g
        m_hat = st["m"] / (1.0 - beta1 ** st["t"])
        v_hat = st["v"] / (1.0 - beta2 ** st["t"])
        store[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def new_store(kind, graph: KnowledgeGraph, config: TrainConfig) -> ParamStore:
    store = ParamStore(kind, config.dim, config.hidden, graph.num_relations, config.num_paths, config.ffn_hidden)
    return store.initialize(np_rng(config.seed, "init", kind))


def build_model(store: ParamStore):
    return ConnectionModel(store) if store.kind == "connection" else SubgraphModel(store)


def format_loss_line(epoch, samples, mean_loss):
    return f"epoch={epoch} samples={samples} mean_loss={mean_loss:.17g}"


@dataclass
class TrainResult:
    store: ParamStore
    epoch_losses: list
    batch_losses: list
    checkpoints: list
    stats: list


def train(kind, graph: KnowledgeGraph, cache: PathCache, config: TrainConfig, out_dir=None, on_epoch=None,
          store: ParamStore | None = None) -> TrainResult:
    """Run the contrastive protocol for ``kind`` and return the trained store.

    With ``out_dir`` set, writes ``<kind>-epoch<k>.ckpt`` after every epoch,
    ``<kind>-final.ckpt`` at the end and ``<kind>-loss.log``.
    """
    expected = PathCache.CONNECTION if kind == "connection" else PathCache.SUBGRAPH
    if cache.mode != expected:
        raise DataError(f"{kind} training needs a {expected} path cache, got {cache.mode}")
    cache.check_against(graph)
    if store is None:
        store = new_store(kind, graph, config)
    elif store.num_relations != graph.num_relations:
        raise DataError("parameter store and graph disagree on the number of relations")
    model = build_model(store)
    make = make_connection_samples if kind == "connection" else make_subgraph_samples
    rng = py_rng(config.seed, "train", kind)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / f"{kind}-loss.log", "w", encoding="utf-8")
    else:
        log_fh = None
    result = TrainResult(store, [], [], [], [])
    try:
        for epoch in range(1, config.epochs + 1):
            samples, stats = make(graph, cache, rng, config.num_paths, config.mask_target_edge)
            if not samples:
                raise DataError("no training samples: every triple lacks mined paths")
            rng.shuffle(samples)
            total = 0.0
            for b, start in enumerate(range(0, len(samples), config.batch_size)):
                batch = samples[start : start + config.batch_size]
                tr = Trace(store)
                loss = model.loss(tr, [smp.slots for smp in batch], [smp.triple[1] for smp in batch],
                                  [smp.label for smp in batch])
                value = float(loss.value)
                if not math.isfinite(value):
                    ids = [smp.origin for smp in batch]
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}, training triples {ids}")
                opt.step(store, tr.backward(loss))
                total += value * len(batch)
                result.batch_losses.append(value)
            mean = total / len(samples)
            result.epoch_losses.append(mean)
            result.stats.append(stats)
            line = format_loss_line(epoch, len(samples), mean)
            log.info(line)
            if log_fh is not None:
                log_fh.write(line + "\n")
                log_fh.flush()
                ckpt = out_dir / f"{kind}-epoch{epoch}.ckpt"
                store.save(ckpt)
                result.checkpoints.append(ckpt)
            if on_epoch is not None:
                on_epoch(epoch, mean, stats)
        if out_dir is not None:
            final = out_dir / f"{kind}-final.ckpt"
            store.save(final)
            result.checkpoints.append(final)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
