"""Command-line workflow for the question answering engine.

Subcommands cover the whole life cycle: ``ingest`` builds a knowledge
base snapshot from data files, ``synth`` fabricates a seeded benchmark,
``gen-data`` derives training files, ``train-pipeline`` / ``train-e2e``
fit the two model families, ``answer`` runs a line-in/JSON-out loop, and
``eval`` scores a strategy and writes report files.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input
files, with file and line), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Callable, Iterator, Mapping, Optional, Sequence, TextIO

from qakb import datagen, e2e, evalharness, pipeline
from qakb.aliasindex import build_index, retrieve_question_candidates
from qakb.errors import (
    EmptyEvalSet,
    EmptyTrainingSet,
    LabelFailure,
    MalformedId,
    NoCandidates,
    NoRelation,
    ParseError,
    QAKBError,
)
from qakb.kb import KnowledgeBase, build_kb, load_kb, lookup_objects, save_kb
from qakb.nn import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
SEED_ENV_VAR = "QAKB_SEED"


class UsageError(Exception):
    """Bad flags or flag combinations; exits 1."""


class DataError(Exception):
    """Bad or missing input data; exits 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: A003 - argparse hook
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def read_config_file(path: str) -> dict[str, str]:
    """Parse simple ``key=value`` lines; ``#`` comments and blanks skip."""
    _require_file(path)
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise DataError(f"{path}:{line_no}: expected key=value")
            key, _, value = stripped.partition("=")
            out[key.strip()] = value.strip()
    return out


def resolve_seed(flag: Optional[int], config: Mapping[str, str],
                 env: Mapping[str, str] = os.environ) -> int:
    """Flag beats config file beats QAKB_SEED beats the default."""
    if flag is not None:
        return flag
    if "seed" in config:
        return int(config["seed"])
    if SEED_ENV_VAR in env:
        return int(env[SEED_ENV_VAR])
    return DEFAULT_SEED


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file")


def _require_files(*paths: Optional[str]) -> None:
    for path in paths:
        if path is not None:
            _require_file(path)


def _parse_file(path: str, parse_fn: Callable):
    _require_file(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_fn(fh)
    except (ParseError, MalformedId) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _load_kb(path: str) -> KnowledgeBase:
    _require_file(path)
    try:
        return load_kb(path)
    except (ParseError, MalformedId) as exc:
        raise DataError(f"{path}: {exc}") from exc


_CONFIG_FIELDS = (
    ("epochs", int),
    ("batch_size", int),
    ("hidden_size", int),
    ("embed_dim", int),
    ("char_dim", int),
    ("max_len", int),
    ("learning_rate", float),
    ("gamma", float),
    ("dropout_p", float),
)


def train_config(args: argparse.Namespace,
                 config: Mapping[str, str]) -> TrainConfig:
    """Build a TrainConfig from flags, config file, then class defaults."""
    kwargs = {"seed": resolve_seed(args.seed, config)}
    for field, cast in _CONFIG_FIELDS:
        value = getattr(args, field, None)
        if value is None and field in config:
            value = cast(config[field])
        if value is not None:
            kwargs[field] = value
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--hidden-size", type=int, dest="hidden_size")
    sub.add_argument("--embed-dim", type=int, dest="embed_dim")
    sub.add_argument("--char-dim", type=int, dest="char_dim")
    sub.add_argument("--max-len", type=int, dest="max_len")
    sub.add_argument("--learning-rate", type=float, dest="learning_rate")
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--dropout", type=float, dest="dropout_p")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    from qakb.kb import parse_alias_lines, parse_triples_tsv, parse_type_lines

    _require_files(args.facts, args.aliases, args.types)
    facts = _parse_file(args.facts, parse_triples_tsv)
    aliases = (_parse_file(args.aliases, parse_alias_lines)
               if args.aliases else [])
    types = (_parse_file(args.types, parse_type_lines).resolve()
             if args.types else [])
    kb = build_kb(facts, aliases, types)
    save_kb(kb, args.out)
    print(f"{len(kb.facts)} facts, {len(kb.entities)} entities -> {args.out}")
    return 0


def cmd_synth(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    try:
        spec = evalharness.SyntheticSpec(
            seed=resolve_seed(args.seed, config),
            n_entities=args.entities,
            n_relations=args.relations,
            collision_rate=args.collision_rate,
            twin_outdegree_gap=args.outdegree_gap,
            twin_type_distinct=args.type_distinct,
            test_fraction=args.test_fraction,
        )
        kb, train, test = evalharness.generate_synthetic(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    save_kb(kb, os.path.join(args.out, "kb.qakb"))
    for name, split in (("train.tsv", train), ("test.tsv", test)):
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(datagen.serialize_questions_tsv(split))
    print(f"{len(kb.facts)} facts, {len(train)}+{len(test)} questions "
          f"-> {args.out}")
    return 0


def cmd_gen_data(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    kb = _load_kb(args.kb)
    questions = _parse_file(args.questions, datagen.parse_questions_tsv)
    index = build_index(kb)
    os.makedirs(args.out, exist_ok=True)

    labeled, dropped = datagen.label_questions(questions, kb)
    datagen.write_labeled_questions(
        os.path.join(args.out, "tagged.tsv"), labeled
    )

    table = datagen.build_relation_domains({f.relation for f in kb.facts})
    relation_pairs = []
    type_pairs = []
    for q in questions:
        relation_pairs.extend(
            datagen.gen_relation_pairs(q, q.gold.relation, table)
        )
        candidates = retrieve_question_candidates(index, q.text)
        type_pairs.extend(datagen.gen_type_pairs(q, kb, candidates))
    datagen.write_matcher_pairs(
        os.path.join(args.out, "relation_pairs.tsv"), relation_pairs
    )
    datagen.write_matcher_pairs(
        os.path.join(args.out, "type_pairs.tsv"), type_pairs
    )
    print(f"{len(labeled)} tagged ({dropped} dropped), "
          f"{len(relation_pairs)} relation pairs, "
          f"{len(type_pairs)} type pairs -> {args.out}")
    return 0


def cmd_train_pipeline(args: argparse.Namespace,
                       config: Mapping[str, str]) -> int:
    cfg = train_config(args, config)
    tagged_path = os.path.join(args.data, "tagged.tsv")
    relation_path = os.path.join(args.data, "relation_pairs.tsv")
    type_path = os.path.join(args.data, "type_pairs.tsv")
    _require_files(tagged_path, relation_path)
    try:
        tagged = datagen.read_labeled_questions(tagged_path)
        relation_pairs = datagen.read_matcher_pairs(relation_path)
        type_pairs = (datagen.read_matcher_pairs(type_path)
                      if os.path.isfile(type_path) else [])
    except ParseError as exc:
        raise DataError(f"{args.data}: {exc}") from exc

    os.makedirs(args.out, exist_ok=True)
    tagger, tagger_curve = pipeline.train_tagger(tagged, cfg)
    pipeline.save_tagger(tagger, os.path.join(args.out, "tagger.nn"))
    relation, rel_curve = pipeline.train_matcher(relation_pairs, cfg,
                                                 name="relation")
    pipeline.save_matcher(relation, os.path.join(args.out, "relation.nn"))
    lines = [
        f"tagger: {len(tagged)} examples, final loss {tagger_curve[-1]:.4f}",
        f"relation: {len(relation_pairs)} pairs, "
        f"final loss {rel_curve[-1]:.4f}",
    ]
    if type_pairs:
        typem, type_curve = pipeline.train_matcher(type_pairs, cfg,
                                                   name="type")
        pipeline.save_matcher(typem, os.path.join(args.out, "type.nn"))
        lines.append(f"type: {len(type_pairs)} pairs, "
                     f"final loss {type_curve[-1]:.4f}")
    else:
        logger.info("no type pairs; skipping the type matcher")
    print("\n".join(lines))
    return 0


def cmd_train_e2e(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    cfg = train_config(args, config)
    kb = _load_kb(args.kb)
    questions = _parse_file(args.questions, datagen.parse_questions_tsv)
    index = build_index(kb)
    variant = e2e.variant_from_name(args.variant)
    pools = datagen.build_negative_pools(questions, kb, index, cfg.seed)
    model, curve = e2e.train_e2e(questions, kb, pools, variant, cfg)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    e2e.save_e2e(model, args.out)
    print(f"{args.variant}: {len(questions)} questions, "
          f"final loss {curve[-1]:.4f} -> {args.out}")
    return 0


def _load_pipeline_models(model_dir: str) -> pipeline.PipelineModels:
    tagger_path = os.path.join(model_dir, "tagger.nn")
    relation_path = os.path.join(model_dir, "relation.nn")
    type_path = os.path.join(model_dir, "type.nn")
    _require_files(tagger_path, relation_path)
    try:
        return pipeline.PipelineModels(
            tagger=pipeline.load_tagger(tagger_path),
            relation_matcher=pipeline.load_matcher(relation_path),
            type_matcher=(pipeline.load_matcher(type_path)
                          if os.path.isfile(type_path) else None),
        )
    except ValueError as exc:
        raise DataError(f"{model_dir}: {exc}") from exc


def _load_e2e_model(path: str) -> e2e.E2EModel:
    _require_file(path)
    try:
        return e2e.load_e2e(path)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _answer_mode(args: argparse.Namespace) -> str:
    has_pipeline = args.pipeline is not None
    has_model = args.model is not None
    if has_pipeline == has_model:
        raise UsageError("pass exactly one of --pipeline or --model")
    if has_pipeline and args.strategy is None:
        raise UsageError("--pipeline needs --strategy")
    if has_model and args.variant is None:
        raise UsageError("--model needs --variant")
    return "pipeline" if has_pipeline else "e2e"


def _answer_lines(args: argparse.Namespace, kb, index,
                  stream: TextIO) -> Iterator[str]:
    mode = _answer_mode(args)
    if mode == "pipeline":
        models = _load_pipeline_models(args.pipeline)
        for line in stream:
            question = line.strip()
            if not question:
                continue
            try:
                pred = pipeline.predict(args.strategy, question, models,
                                        kb, index)
            except (NoCandidates, NoRelation) as exc:
                yield _error_record(question, exc)
                continue
            yield pipeline.answer_record(question, pred, kb, args.strategy)
        return
    model = _load_e2e_model(args.model)
    variant = e2e.variant_from_name(args.variant, args.out_degree_sort)
    for line in stream:
        question = line.strip()
        if not question:
            continue
        try:
            top = e2e.answer(model, kb, index, question, variant, k=1)[0]
        except NoCandidates as exc:
            yield _error_record(question, exc)
            continue
        scores = {"s_qs": top.s_qs, "s_qp": top.s_qp, "combined": top.combined}
        if top.s_qt is not None:
            scores["s_qt"] = top.s_qt
        yield json.dumps({
            "question": question,
            "entity": top.fact.subject,
            "relation": top.fact.relation,
            "objects": lookup_objects(kb, top.fact.subject,
                                      top.fact.relation),
            "scores": scores,
            "variant": args.variant,
        }, sort_keys=True)


def _error_record(question: str, exc: QAKBError) -> str:
    kind = {"NoCandidates": "no_candidates",
            "NoRelation": "no_relation"}[type(exc).__name__]
    return json.dumps({"question": question, "error": kind}, sort_keys=True)


def cmd_answer(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    _answer_mode(args)  # validate flags before touching any file
    kb = _load_kb(args.kb)
    index = build_index(kb)
    if args.questions is not None:
        _require_file(args.questions)
        with open(args.questions, encoding="utf-8") as fh:
            for record in _answer_lines(args, kb, index, fh):
                print(record)
    else:
        for record in _answer_lines(args, kb, index, sys.stdin):
            print(record, flush=True)
    return 0


def cmd_eval(args: argparse.Namespace, config: Mapping[str, str]) -> int:
    kb = _load_kb(args.kb)
    dataset = _parse_file(args.questions, datagen.parse_questions_tsv)
    index = build_index(kb)
    if args.oracle:
        if args.strategy is None:
            raise UsageError("--oracle needs --strategy")
        models = evalharness.oracle_models(dataset, kb)
        strategy = evalharness.PipelineStrategy(args.strategy, models, kb,
                                                index)
        name = f"{args.strategy}(oracle)"
    elif args.pipeline is not None:
        if args.strategy is None:
            raise UsageError("--pipeline needs --strategy")
        models = _load_pipeline_models(args.pipeline)
        strategy = evalharness.PipelineStrategy(args.strategy, models, kb,
                                                index)
        name = args.strategy
    elif args.model is not None:
        if args.variant is None:
            raise UsageError("--model needs --variant")
        variant = e2e.variant_from_name(args.variant, args.out_degree_sort)
        strategy = evalharness.E2EStrategy(_load_e2e_model(args.model),
                                           variant, kb, index)
        name = args.variant + ("+od" if args.out_degree_sort else "")
    else:
        raise UsageError("pass one of --oracle, --pipeline, or --model")
    report = evalharness.evaluate(strategy, dataset, kb, jobs=args.jobs)
    json_path, txt_path = evalharness.report_write({name: report}, args.out)
    print(f"{name}: accuracy {report.accuracy:.4f} over {report.n} "
          f"questions -> {json_path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="qakb",
                     description="Factoid question answering over a "
                                 "knowledge base.")
    parser.add_argument("--verbose", action="store_true",
                        help="log debug detail to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value file merged under flags")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("ingest", help="build a knowledge base snapshot")
    p.add_argument("--facts", required=True)
    p.add_argument("--aliases")
    p.add_argument("--types")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=60)
    p.add_argument("--relations", type=int, default=6)
    p.add_argument("--collision-rate", type=float, default=0.3,
                   dest="collision_rate")
    p.add_argument("--outdegree-gap", action=argparse.BooleanOptionalAction,
                   default=True, dest="outdegree_gap")
    p.add_argument("--type-distinct", action=argparse.BooleanOptionalAction,
                   default=False, dest="type_distinct")
    p.add_argument("--test-fraction", type=float, default=0.2,
                   dest="test_fraction")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-data", help="derive training files from questions")
    p.add_argument("--kb", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-pipeline",
                       help="train tagger and matchers from generated data")
    p.add_argument("--data", required=True,
                   help="directory from gen-data")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    common(p)
    p.set_defaults(func=cmd_train_pipeline)

    p = sub.add_parser("train-e2e", help="train an end-to-end ranking model")
    p.add_argument("--kb", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", required=True,
                   choices=sorted(e2e.VARIANTS))
    _add_train_flags(p)
    common(p)
    p.set_defaults(func=cmd_train_e2e)

    p = sub.add_parser("answer",
                       help="answer questions, one JSON line per question")
    p.add_argument("--kb", required=True)
    p.add_argument("--pipeline", help="model directory from train-pipeline")
    p.add_argument("--strategy", choices=pipeline.STRATEGIES)
    p.add_argument("--model", help="snapshot from train-e2e")
    p.add_argument("--variant", choices=sorted(e2e.VARIANTS))
    p.add_argument("--out-degree-sort", action="store_true",
                   dest="out_degree_sort")
    p.add_argument("--questions", help="file of questions; default stdin")
    common(p)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="score a strategy and write reports")
    p.add_argument("--kb", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pipeline")
    p.add_argument("--strategy", choices=pipeline.STRATEGIES)
    p.add_argument("--model")
    p.add_argument("--variant", choices=sorted(e2e.VARIANTS))
    p.add_argument("--out-degree-sort", action="store_true",
                   dest="out_degree_sort")
    p.add_argument("--oracle", action="store_true",
                   help="use gold-keyed oracle stages")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        config = (read_config_file(args.config)
                  if getattr(args, "config", None) else {})
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, MalformedId, EmptyTrainingSet, EmptyEvalSet,
            LabelFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QAKBError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
