"""Command-line entry point: ``expertmatch <command> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors (with a
one-line JSON object on stderr).  A ``--config`` JSON file supplies flag
defaults: keys are flag names (``retrieve-k`` or ``retrieve_k``), optionally
prefixed with a command (``recommend.retrieve-k``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from functools import partial
from pathlib import Path

from . import __version__
from .core import load_dataset, normalize_tokens, parallel_map, save_dataset
from .embedding import SkipgramConfig, load_vectors, nbow, save_vectors, train_skipgram
from .errors import ExpertMatchError
from .evaluation import (
    METHODS,
    build_question_data,
    decline_stats,
    load_external_scores,
    run_experiment,
)
from .features import FeatureConfig, FeatureContext
from .rankfg import (
    InferenceConfig,
    TrainConfig,
    graph_from_arrays,
    load_model,
    rank_candidates,
    save_model,
    train,
)
from .retrieval import DEFAULT_K, CollectionIndex, build_index, generate_candidates
from .synth import SynthConfig, synth_generate
from .transport import qtoe_exact, qtoe_relaxed

log = logging.getLogger("expertmatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="JSON file of flag defaults")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output path (default: stdout)")
    g.add_argument("--quiet", action="store_true", help="only log warnings")
    return p


def _data(p, required=True):
    p.add_argument("--data", help="dataset directory" + (" (required)" if required else ""))


def _embeddings(p):
    p.add_argument("--embeddings", help="word-vector file (default: <data>/vectors.txt)")


def _features(p):
    p.add_argument("--qtoe", choices=("exact", "relaxed"), help="transport distance mode")
    p.add_argument("--keyword-k", type=int, help="tf-idf keywords per question")


def _train_flags(p):
    p.add_argument("--eta", type=float, default=0.01, help="learning rate")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-4, help="stop when max |gradient| < tol")
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--no-correlations", action="store_true", help="force beta = 0")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="expertmatch", description="Expert finding with decline-aware ranking.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a dataset and report counts")
    _data(p)
    p.add_argument("--write", help="also write the normalized dataset to this directory")

    p = sub.add_parser("train-embeddings", parents=[common], help="skip-gram word vectors")
    _data(p)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--mode", choices=("full_softmax", "negative_sampling"), default="full_softmax")
    p.add_argument("--negatives", type=int, default=5)

    p = sub.add_parser("index", parents=[common], help="build the retrieval index cache")
    _data(p)
    p.add_argument("--lam", type=float, help="smoothing weight (default: mean document length)")

    p = sub.add_parser("distance", parents=[common], help="transport distance of two text files")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="mode", action="store_const", const="exact")
    mode.add_argument("--relaxed", dest="mode", action="store_const", const="relaxed")
    p.add_argument("--doc-a")
    p.add_argument("--doc-b")
    p.add_argument("--embeddings")

    p = sub.add_parser("train-rankfg", parents=[common], help="train the ranking model")
    _data(p)
    _embeddings(p)
    _features(p)
    _train_flags(p)
    p.add_argument("--workers", type=int, default=1)

    for name, text in (("rank", "rank the responders of one question"),
                       ("recommend", "retrieve, featurize and rank experts")):
        p = sub.add_parser(name, parents=[common], help=text)
        _data(p)
        _embeddings(p)
        _features(p)
        p.add_argument("--model")
        p.add_argument("--question", help="question id" + (" (default: all)" if name == "recommend" else ""))
        p.add_argument("--score", choices=("marginal", "max_marginal", "local"), default="marginal")
        p.add_argument("--retrieve-k", type=int, default=DEFAULT_K)
        if name == "recommend":
            p.add_argument("--index", help="index cache written by `index`")
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("evaluate", parents=[common], help="repeated-split evaluation")
    _data(p)
    _embeddings(p)
    _features(p)
    _train_flags(p)
    p.add_argument("--method", choices=METHODS, default="rankfg")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--train-ratio", type=float, default=0.6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--scores", help="CSV (question_id, expert_id, score) for --method external")
    p.add_argument("--format", choices=("json", "table", "csv"), default="json")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--questions", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--experts", type=int)

    p = sub.add_parser("stats", parents=[common], help="decline statistics")
    _data(p)
    p.add_argument("--min-declines", type=int, default=1)
    return parser


# ------------------------------------------------------------------- config

def _actions(parser: argparse.ArgumentParser) -> dict:
    out = {}
    for a in parser._actions:
        for opt in a.option_strings:
            if opt.startswith("--"):
                out[opt[2:]] = a
    return out


def _apply_config(parser, command, path) -> dict:
    """Use ``path`` as flag defaults; return the keys no flag claims."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"--config: no such file: {path}") from None
    except ValueError as exc:
        raise UsageError(f"--config: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError("--config: expected a JSON object")
    actions = _actions(parser)
    extra = {}
    for key, value in doc.items():
        scope, _, name = key.rpartition(".")
        if scope and scope != command:
            continue
        name = name.replace("_", "-")
        action = actions.get(name)
        if action is None or name in ("config", "help"):
            extra[key.rpartition(".")[2]] = value
            continue
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        if isinstance(action, argparse._StoreConstAction) and not isinstance(
                action, argparse._StoreTrueAction):
            if value:
                parser.set_defaults(**{action.dest: action.const})
            continue
        parser.set_defaults(**{action.dest: value})
    return extra


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("expertmatch: a command is required (see --help)")
    extra = {}
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        extra = _apply_config(sub, args.command, args.config)
        args = parser.parse_args(argv)
    if extra and args.command != "synth":
        raise UsageError(f"--config: unknown keys {sorted(extra)}")
    args.extra_config = extra
    return args


def _need(args, flag, kind="path"):
    value = getattr(args, flag.replace("-", "_"))
    if value is None:
        raise UsageError(f"--{flag} is required")
    if kind == "dir" and not Path(value).is_dir():
        raise UsageError(f"--{flag}: no such directory: {value}")
    if kind == "file" and not Path(value).is_file():
        raise UsageError(f"--{flag}: no such file: {value}")
    return value


# ----------------------------------------------------------------- commands

def _emit(args, text: str):
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _embedding_path(args) -> str:
    if args.embeddings is None:
        default = Path(args.data) / "vectors.txt"
        if not default.is_file():
            raise UsageError("--embeddings is required (no vectors.txt in the dataset directory)")
        return str(default)
    return _need(args, "embeddings", "file")


def _feature_config(args, base: dict | None = None) -> FeatureConfig:
    cfg = dict(base or {})
    if args.qtoe is not None:
        cfg["qtoe_mode"] = args.qtoe
    if args.keyword_k is not None:
        cfg["keyword_k"] = args.keyword_k
    return FeatureConfig(**cfg)


def _context(args, base=None, index=None) -> FeatureContext:
    ds = load_dataset(_need(args, "data", "dir"))
    emb = load_vectors(_embedding_path(args))
    return FeatureContext(ds, emb, _feature_config(args, base), index)


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.eta, max_iterations=args.max_iters,
                       grad_tolerance=args.tol, l2=args.l2,
                       use_correlations=not args.no_correlations, seed=args.seed)


def cmd_ingest(args):
    ds = load_dataset(_need(args, "data", "dir"))
    if args.write:
        save_dataset(ds, args.write)
    _emit(args, _dump(ds.counts()))


def cmd_train_embeddings(args):
    ds = load_dataset(_need(args, "data", "dir"))
    corpus = [d.tokens for d in ds.documents] + [q.tokens for q in ds.questions]
    cfg = SkipgramConfig(dim=args.dim, window=args.window, epochs=args.epochs,
                         learning_rate=args.learning_rate, mode=args.mode,
                         negatives=args.negatives, seed=args.seed)
    table = train_skipgram([c for c in corpus if c], cfg)
    for epoch, obj in enumerate(table.history, 1):
        log.info("epoch %d objective %.6f", epoch, obj)
    if args.out:
        save_vectors(table, args.out)
    else:
        save_vectors(table, sys.stdout)


def cmd_index(args):
    ds = load_dataset(_need(args, "data", "dir"))
    _need(args, "out")
    index = build_index(ds, args.lam)
    index.save(args.out)
    log.info("indexed %d experts, %d words", len(index.expert_ids), len(index.vocabulary))


def cmd_distance(args):
    a = Path(_need(args, "doc-a", "file")).read_text(encoding="utf-8")
    b = Path(_need(args, "doc-b", "file")).read_text(encoding="utf-8")
    emb = load_vectors(_need(args, "embeddings", "file"))
    da, db = nbow(normalize_tokens(a), emb), nbow(normalize_tokens(b), emb)
    if args.mode == "relaxed":
        value = qtoe_relaxed(da, db, emb)
    else:
        value = qtoe_exact(da, db, emb)[0]
    _emit(args, f"{value!r}\n")


def cmd_train_rankfg(args):
    ctx = _context(args)
    data = build_question_data(ctx.dataset, ctx, args.workers)
    cfg = _train_config(args)
    result = train([qd.graph for qd in data], cfg)
    log.info("trained %d iterations, converged=%s, max|grad|=%.3g",
             result.iterations, result.converged, result.grad_norm)
    _need(args, "out")
    meta = result.metadata(cfg)
    meta["questions"] = len(data)
    save_model(args.out, result.params, meta, asdict(ctx.config))


def _ranking_lines(qid, ranked) -> list[str]:
    return [json.dumps({"question_id": qid, "rank": r, "expert_id": e, "score": s})
            for r, (e, s) in enumerate(ranked, 1)]


def _rank_pool(ctx, question, candidates, params, args):
    feats = ctx.pool_features(question, candidates)
    g = graph_from_arrays(question.id, candidates, *ctx.relations.pool_arrays(candidates), feats)
    return rank_candidates(g, params, InferenceConfig(seed=args.seed), score=args.score)


def cmd_rank(args):
    _need(args, "data", "dir")
    params, doc = load_model(_need(args, "model", "file"))
    ctx = _context(args, doc.get("feature_config"))
    qid = _need(args, "question")
    q = ctx.dataset.question(qid)
    pool = sorted(r.expert_id for r in ctx.dataset.responses if r.question_id == qid)
    if not pool:
        pool = sorted(generate_candidates(ctx.index, q, args.retrieve_k).expert_ids)
    _emit(args, "\n".join(_ranking_lines(qid, _rank_pool(ctx, q, pool, params, args))) + "\n")


def _recommend_one(state, qid):
    ctx, params, args = state
    q = ctx.dataset.question(qid)
    cands = sorted(generate_candidates(ctx.index, q, args.retrieve_k).expert_ids)
    return _ranking_lines(qid, _rank_pool(ctx, q, cands, params, args))


def cmd_recommend(args):
    _need(args, "data", "dir")
    params, doc = load_model(_need(args, "model", "file"))
    index = CollectionIndex.load(_need(args, "index", "file")) if args.index else None
    ctx = _context(args, doc.get("feature_config"), index)
    if args.retrieve_k < 1:
        raise UsageError("--retrieve-k must be >= 1")
    if args.question is not None:
        ctx.dataset.question(args.question)
        qids = [args.question]
    else:
        qids = sorted(q.id for q in ctx.dataset.questions)
    out = parallel_map(partial(_recommend_one, (ctx, params, args)), qids, args.workers)
    _emit(args, "".join(line + "\n" for lines in out for line in lines))


def cmd_evaluate(args):
    ctx = _context(args)
    external = None
    if args.method == "external":
        external = load_external_scores(_need(args, "scores", "file"))
    report = run_experiment(ctx.dataset, args.method, ctx, repetitions=args.repetitions,
                            train_ratio=args.train_ratio, base_seed=args.seed,
                            train_config=_train_config(args),
                            inference_config=InferenceConfig(seed=args.seed),
                            workers=args.workers, external_scores=external)
    text = {"json": report.to_json, "table": report.to_table, "csv": report.to_csv}[args.format]()
    _emit(args, text)


def cmd_synth(args):
    out = _need(args, "out")
    cfg = dict(args.extra_config)
    for flag, key in (("questions", "n_questions"), ("candidates", "candidates_per_question"),
                      ("experts", "n_experts")):
        if getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    unknown = sorted(set(cfg) - set(SynthConfig.__dataclass_fields__))
    if unknown:
        raise UsageError(f"--config: unknown keys {unknown}")
    cfg.setdefault("seed", args.seed)
    try:
        config = SynthConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--config: {exc}") from None
    data = synth_generate(config)
    data.write(out)
    log.info("wrote %s", out)


def cmd_stats(args):
    ds = load_dataset(_need(args, "data", "dir"))
    _emit(args, _dump(decline_stats(ds, args.min_declines)))


COMMANDS = {
    "ingest": cmd_ingest,
    "train-embeddings": cmd_train_embeddings,
    "index": cmd_index,
    "distance": cmd_distance,
    "train-rankfg": cmd_train_rankfg,
    "rank": cmd_rank,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ExpertMatchError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
