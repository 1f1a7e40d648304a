"""Command line entry point: ``siailp {mine,train,eval,score}``.

Options can also come from a flat ``key = value`` file given with
``--config``; command-line flags override file keys, which override the
built-in defaults.  Exit codes: 0 ok, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from siailp.errors import DataError, NumericError
from siailp.evaluator import MODES, SETTINGS, EvalConfig, TripleScorer, evaluate
from siailp.kg_core import (
    Vocab,
    load_graph,
    load_query_triples,
    read_relation_vocab,
    write_relation_vocab,
)
from siailp.ndiff import ParamStore
from siailp.path_miner import (
    CONNECTION_BUDGET,
    SUBGRAPH_BUDGET,
    MinerBudget,
    PathCache,
    mine_connection_corpus,
    mine_subgraph_corpus,
)
from siailp.sia_models import ConnectionModel, Query, SubgraphModel, canonicalize_query
from siailp.trainer import TrainConfig, train

log = logging.getLogger("siailp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _parse_bool(value):
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def _add_common(p):
    p.add_argument("--config", help="flat key = value file; flags override its keys")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="parallel workers; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_budget(p, prefix, default: MinerBudget):
    p.add_argument(f"--{prefix}-L", dest=f"{prefix}_L", type=int, default=default.L)
    p.add_argument(f"--{prefix}-C", dest=f"{prefix}_C", type=int, default=default.C)
    p.add_argument(f"--{prefix}-N", dest=f"{prefix}_N", type=int, default=default.N)


def _add_model_inputs(p):
    p.add_argument("--graph", required=True, help="inference graph triples (e.g. <split>_ind/train.txt)")
    vocab = p.add_mutually_exclusive_group(required=True)
    vocab.add_argument("--relations", help="relations.txt written by 'train'")
    vocab.add_argument("--train-graph", help="training graph; its relation order defines the vocabulary")
    p.add_argument("--subgraph-ckpt", help="subgraph model checkpoint")
    p.add_argument("--connection-ckpt", help="connection model checkpoint (hybrid mode)")
    p.add_argument("--avoid-popular", action="store_true")
    p.add_argument("--popularity-factor", type=float, default=5.0)
    _add_budget(p, "conn", CONNECTION_BUDGET)
    _add_budget(p, "sub", SUBGRAPH_BUDGET)


def build_parser():
    parser = _Parser(prog="siailp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mine", help="mine a path cache from a graph")
    _add_common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("connection", "subgraph"), default="connection")
    p.add_argument("--L", type=int, default=None, help="max path length (10 connection / 3 subgraph)")
    p.add_argument("--C", type=int, default=None, help="max expansions per path length (20000)")
    p.add_argument("--N", type=int, default=None, help="max paths per (source, target) (50)")
    p.add_argument("--repeats", type=int, default=None, help="independent runs unioned (10 connection / 1 subgraph)")
    p.add_argument("--avoid-popular", action="store_true")
    p.add_argument("--popularity-factor", type=float, default=5.0)

    p = sub.add_parser("train", help="train a connection or subgraph model")
    _add_common(p)
    p.add_argument("--model", choices=("connection", "subgraph"), required=True)
    p.add_argument("--graph", required=True, help="training graph triples")
    p.add_argument("--cache", required=True, help="path cache from 'mine'")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--dim", type=int, default=300, help="embedding width D (= 2H)")
    p.add_argument("--hidden", type=int, default=150, help="LSTM units H per direction")
    p.add_argument("--ffn-hidden", type=int, default=None, help="FFN hidden width (default 2D)")
    p.add_argument("--num-paths", type=int, default=3)
    p.add_argument("--mask-target-edge", action="store_true",
                   help="drop the single-edge path that is the training triple itself")

    p = sub.add_parser("eval", help="evaluate checkpoints on an inference graph")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--test", required=True, help="test triples scored against --graph")
    p.add_argument("--setting", choices=SETTINGS, default="auc-pr")
    p.add_argument("--mode", choices=MODES, default=None, help="default: solo for entity settings, hybrid for relation")
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--table", action="store_true", help="also print a human-readable table")
    p.add_argument("--out", help="append the record line to this file")

    p = sub.add_parser("score", help="score one triple given by names")
    _add_common(p)
    _add_model_inputs(p)
    p.add_argument("--source", required=True)
    p.add_argument("--relation", required=True, help="relation name; append ^-1 for the inverse")
    p.add_argument("--target", required=True)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        for key, value in cfg.items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for '{args.command}'")
            if isinstance(actions[key], argparse._StoreTrueAction):
                cfg[key] = _parse_bool(value)
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def echo_config(args, stream=None):
    stream = sys.stderr if stream is None else stream
    for key in sorted(vars(args)):
        if key not in ("command", "verbose"):
            print(f"# {key} = {getattr(args, key)}", file=stream)


def _positive(**values):
    for name, v in values.items():
        if v is None:
            continue
        if not (v > 0) or (isinstance(v, float) and not math.isfinite(v)):
            raise UsageError(f"--{name.replace('_', '-')} must be positive, got {v}")


def _budget(args, prefix):
    L, C, N = (getattr(args, f"{prefix}_{x}") for x in "LCN")
    _positive(**{f"{prefix}_L": L, f"{prefix}_C": C, f"{prefix}_N": N})
    return MinerBudget(L, C, N)


def cmd_mine(args):
    defaults = CONNECTION_BUDGET if args.mode == "connection" else SUBGRAPH_BUDGET
    budget_args = dict(L=args.L or defaults.L, C=args.C or defaults.C, N=args.N or defaults.N)
    repeats = args.repeats if args.repeats is not None else (10 if args.mode == "connection" else 1)
    _positive(L=args.L, C=args.C, N=args.N, repeats=repeats, workers=args.workers,
              popularity_factor=args.popularity_factor)
    budget = MinerBudget(**budget_args)
    out = Path(args.out)
    if not out.parent.exists():
        raise DataError(f"output directory does not exist: {out.parent}")
    graph = load_graph(args.graph)
    profile = graph.degree_profile(args.popularity_factor) if args.avoid_popular else None

    def progress(done, total):
        print(f"mined {done}/{total} entities", file=sys.stderr)

    mine = mine_connection_corpus if args.mode == "connection" else mine_subgraph_corpus
    cache = mine(graph, budget, repeats=repeats, seed=args.seed, avoid_popular=profile,
                 workers=args.workers, progress=progress)
    try:
        cache.write(out)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc}") from None
    print(f"wrote {out}: {len(cache)} keys, {cache.num_paths()} paths "
          f"({graph.num_entities} entities, {graph.num_relations} relations)")
    return EXIT_OK


def cmd_train(args):
    _positive(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, dim=args.dim, hidden=args.hidden,
              num_paths=args.num_paths, ffn_hidden=args.ffn_hidden)
    try:
        config = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                             num_paths=args.num_paths, dim=args.dim, hidden=args.hidden,
                             ffn_hidden=args.ffn_hidden, mask_target_edge=args.mask_target_edge)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    graph = load_graph(args.graph)
    cache = PathCache.read(args.cache)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_relation_vocab(out_dir / "relations.txt", graph.relations)
    print(f"# training {args.model} model: {graph}")
    result = train(args.model, graph, cache, config, out_dir=out_dir,
                   on_epoch=lambda e, loss, st: print(f"epoch={e} samples={st.samples} mean_loss={loss:.17g}"))
    print(f"wrote {len(result.checkpoints)} checkpoints to {out_dir}")
    return EXIT_OK


def _load_models(args, need_conn):
    if args.relations:
        relations = read_relation_vocab(args.relations)
        train_entities = None
    else:
        train_graph = load_graph(args.train_graph)
        relations = train_graph.relations.copy(frozen=True)
        train_entities = train_graph.entities
    graph = load_graph(args.graph, relation_vocab=relations)
    if not args.subgraph_ckpt:
        raise UsageError("--subgraph-ckpt is required")
    sub_store = ParamStore.load(args.subgraph_ckpt)
    conn = None
    if args.connection_ckpt:
        conn = ConnectionModel(ParamStore.load(args.connection_ckpt))
    elif need_conn:
        raise UsageError("hybrid mode needs --connection-ckpt")
    for store in [sub_store] + ([conn.store] if conn else []):
        if store.num_relations != len(relations):
            raise DataError(
                f"checkpoint has R={store.num_relations}, relation vocabulary has {len(relations)} relations"
            )
    return graph, relations, train_entities, SubgraphModel(sub_store), conn


def cmd_eval(args):
    _positive(negatives=args.negatives, workers=args.workers)
    try:
        config = EvalConfig(args.setting, args.mode, args.negatives, args.seed, _budget(args, "conn"),
                            _budget(args, "sub"), args.avoid_popular, args.popularity_factor)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    graph, relations, train_entities, sub, conn = _load_models(args, config.mode == "hybrid")
    test = load_query_triples(args.test, graph)
    report = evaluate(config, graph, test, sub, conn, train_relations=relations, train_entities=train_entities)
    print(report.record())
    if args.table:
        print(report.table())
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(report.record() + "\n")
    return EXIT_OK


def _fmt_paths(graph, paths):
    return ["[" + ", ".join(graph.relation_name(r) for r in p) + "]" if p else "[<empty>]" for p in paths]


def cmd_score(args):
    graph, relations, _, sub, conn = _load_models(args, need_conn=False)
    s = graph.entities.lookup(args.source)
    t = graph.entities.lookup(args.target)
    r = graph.parse_relation(args.relation)
    q = canonicalize_query(Query(s, r, t), graph.num_relations)
    if (q.source, q.relation, q.target) != (s, r, t):
        print(f"canonical query: ({graph.entities.names[q.source]}, {graph.relation_name(q.relation)}, "
              f"{graph.entities.names[q.target]})")
    scorer = TripleScorer(graph, sub, conn, "hybrid" if conn else "solo", args.seed,
                          _budget(args, "conn"), _budget(args, "sub"),
                          graph.degree_profile(args.popularity_factor) if args.avoid_popular else None)
    conn_slots, sub_slots, empty = scorer.materials(q.source, q.target)
    sub_score = sub.score(sub_slots[: sub.num_paths], sub_slots[sub.num_paths :], q.relation)
    conn_score = conn.score(conn_slots, q.relation) if conn and conn_slots else None
    hybrid = (conn_score + sub_score) / 2.0 if conn_score is not None else sub_score
    print(f"connection = {'n/a' if conn_score is None else f'{conn_score:.6f}'}")
    print(f"subgraph   = {sub_score:.6f}{'  (empty path material)' if empty else ''}")
    print(f"hybrid     = {hybrid:.6f}")
    if conn_slots:
        print("connection paths: " + " ".join(_fmt_paths(graph, conn_slots)))
    k = sub.num_paths
    print("source paths: " + " ".join(_fmt_paths(graph, sub_slots[:k])))
    print("target paths: " + " ".join(_fmt_paths(graph, sub_slots[k:])))
    return EXIT_OK


COMMANDS = {"mine": cmd_mine, "train": cmd_train, "eval": cmd_eval, "score": cmd_score}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"siailp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse: --help or a malformed command line
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    echo_config(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"siailp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"siailp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"siailp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
