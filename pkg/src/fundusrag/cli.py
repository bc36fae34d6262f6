"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import service
from .gateway import GatewayError
from .kb import IndexFormatError, KbParseError, build_index, load_index, parse_kb, save_index
from .pipeline import (
    ConfigError,
    Pipeline,
    RunConfig,
    StageError,
    load_config,
    load_manifest,
    make_embedder,
    resolve_path,
    write_eval_payload,
)
from .retrieval import DiagnosticPrediction, retrieve_top_k, serialize_query


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _bool_flag(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _confidence(value: str) -> float:
    conf = float(value)
    # Below 0.21 the implied probability vector cannot keep its argmax at
    # the requested grade.
    if not 0.21 <= conf <= 1.0:
        raise argparse.ArgumentTypeError(f"confidence must be in [0.21, 1.0], got {value}")
    return conf


def build_parser() -> _Parser:
    parser = _Parser(prog="fundusrag", description="Retrieval-augmented fundus report engine")
    sub = parser.add_subparsers(dest="command", required=True)

    kb = sub.add_parser("kb", help="knowledge-base index management")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    kb_build = kb_sub.add_parser("build", help="embed a KB file and write an index")
    kb_build.add_argument("--kb", required=True, help="knowledge base JSONL file (pkg: prefix allowed)")
    kb_build.add_argument("--out", required=True, help="output index path")
    kb_build.add_argument("--config", help="run config (controls the embedder); mock by default")
    kb_inspect = kb_sub.add_parser("inspect", help="summarize a persisted index")
    kb_inspect.add_argument("index", help="index path")

    retrieve = sub.add_parser("retrieve", help="query an index with a synthetic prediction")
    retrieve.add_argument("--index", required=True)
    retrieve.add_argument("--grade", type=int, choices=range(5), required=True)
    retrieve.add_argument("--me", type=_bool_flag, required=True, metavar="{true,false}")
    retrieve.add_argument("--conf", type=_confidence, required=True)
    retrieve.add_argument("--k", type=int, default=3)
    retrieve.add_argument("--config", help="run config (controls the embedder); mock by default")

    report = sub.add_parser("report", help="generate one report")
    report.add_argument("--image", required=True, help="image reference")
    report.add_argument("--config", required=True)

    evaluate = sub.add_parser("eval", help="run the evaluation sweep over a manifest")
    evaluate.add_argument("--manifest", required=True, help="dataset manifest JSONL (pkg: prefix allowed)")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--out", required=True, help="metrics output JSON path")

    serve = sub.add_parser("serve", help="run the report HTTP service")
    serve.add_argument("--config", required=True)
    serve.add_argument("--bind", default="127.0.0.1:8731")

    return parser


def _load_config_or_default(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig(use_retrieval=False).validate()
    return load_config(path)


def _cmd_kb_build(args) -> int:
    config = _load_config_or_default(args.config)
    entries = parse_kb(resolve_path(args.kb).read_bytes())
    index = build_index(entries, make_embedder(config, "query"))
    save_index(index, args.out)
    print(f"built index: {len(index)} entries, dimension {index.dimension}")
    print(f"fingerprint: {index.fingerprint.hex()}")
    print(f"wrote {args.out}")
    return 0


def _cmd_kb_inspect(args) -> int:
    index = load_index(resolve_path(args.index))
    print(f"entries: {len(index)}")
    print(f"dimension: {index.dimension}")
    print(f"fingerprint: {index.fingerprint.hex()}")
    for grade in (None, 0, 1, 2, 3, 4):
        matching = [e for e in index.entries if e.entry.dr_grade == grade]
        if matching:
            label = "untagged" if grade is None else f"grade {grade}"
            me_true = sum(1 for e in matching if e.entry.me_label is True)
            me_false = sum(1 for e in matching if e.entry.me_label is False)
            me_null = len(matching) - me_true - me_false
            print(f"{label}: {len(matching)} entries (me true/false/untagged: {me_true}/{me_false}/{me_null})")
    return 0


def _cmd_retrieve(args) -> int:
    config = _load_config_or_default(args.config)
    index = load_index(resolve_path(args.index))
    rest = (1.0 - args.conf) / 4.0
    prediction = DiagnosticPrediction(
        grade=args.grade,
        me_present=args.me,
        grade_confidence=args.conf,
        me_confidence=args.conf,
        grade_probs=tuple(args.conf if i == args.grade else rest for i in range(5)),
    )
    query_text = serialize_query(prediction)
    query_vec = make_embedder(config, "query").embed([query_text])[0]
    result = retrieve_top_k(index, query_vec, prediction, args.k)
    print(f"query: {query_text}")
    if result.fallback:
        print("warning: no class-matched entries; ranking fell back to the full index")
    for rank, (entry, score) in enumerate(result.snippets, start=1):
        grade = "-" if entry.dr_grade is None else str(entry.dr_grade)
        me = "-" if entry.me_label is None else str(entry.me_label).lower()
        print(f"{rank}. {entry.id} score={score:.6f} grade={grade} me={me}")
    return 0


def _cmd_report(args) -> int:
    pipeline = Pipeline(load_config(args.config))
    report, trace = pipeline.run_report(args.image)
    print(report.text)
    print("--- trace ---")
    print(json.dumps(trace, sort_keys=True, indent=2))
    return 0


def _cmd_eval(args) -> int:
    pipeline = Pipeline(load_config(args.config))
    records = load_manifest(args.manifest)
    result = pipeline.run_eval(records)
    write_eval_payload(result.payload, args.out)
    print(f"evaluated {result.payload['n_examples']} of {len(records)} records "
          f"({result.n_failures} failures)")
    for row in result.rows:
        if not row.ok:
            print(f"failed: {row.image_ref} at stage {row.stage}: {row.error}", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


def _cmd_serve(args) -> int:
    return service.serve(load_config(args.config), args.bind)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        ("kb", "build"): _cmd_kb_build,
        ("kb", "inspect"): _cmd_kb_inspect,
    }
    try:
        if args.command == "kb":
            return handlers[(args.command, args.kb_command)](args)
        return {
            "retrieve": _cmd_retrieve,
            "report": _cmd_report,
            "eval": _cmd_eval,
            "serve": _cmd_serve,
        }[args.command](args)
    except (
        ConfigError,
        KbParseError,
        IndexFormatError,
        GatewayError,
        StageError,
        ValueError,
        RuntimeError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
