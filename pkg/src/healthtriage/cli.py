"""Command-line shell covering every pipeline stage plus the HTTP service."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import HealthTriageError
from .index import ChunkPolicy, build_index, load_corpus, load_index, save_index
from .metrics import render_metrics_table
from .pipeline import (
    EPR,
    PipelineConfig,
    PredictionMode,
    evaluate,
    load_examples_jsonl,
    load_pipeline,
    predict_report,
    run_ablation,
    run_training,
    save_pipeline,
    split_examples,
)
from .providers import ProviderConfig, load_answer_table, make_provider
from .scoring import build_feature_vector, load_question_bank, save_matrix_jsonl

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors (argparse defaults to 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def default_bank_path() -> str:
    import importlib.resources

    return str(importlib.resources.files("healthtriage") / "data" / "question_bank.json")


def add_provider_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", help="provider config JSON (defaults to a seeded mock)")
    p.add_argument("--answer-table", help="scripted mock answer table JSON")
    p.add_argument("--seed", type=int, default=0, help="seed for the mock provider and pipeline")


def build_provider(args):
    if args.provider:
        with open(args.provider, encoding="utf-8") as fh:
            config = ProviderConfig.from_dict(json.load(fh))
    else:
        config = ProviderConfig(kind="mock", seed=args.seed)
    table = load_answer_table(args.answer_table) if args.answer_table else None
    return make_provider(config, table)


def load_config(args) -> PipelineConfig:
    """Pipeline config from --config (JSON or TOML); CLI flags take precedence.

    A `paths` section may name corpus/bank/examples/out_dir/artifacts files,
    used for any flag the caller left unset.
    """
    paths: dict = {}
    if getattr(args, "config", None):
        path = args.config
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError as exc:
                raise HealthTriageError("TOML configs need Python >= 3.11; use JSON") from exc
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        paths = data.pop("paths", {}) or {}
        config = PipelineConfig.from_dict(data)
    else:
        config = PipelineConfig()
    for key, value in paths.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) in (None, ""):
            setattr(args, attr, value)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config,
            seed=args.seed,
            train=dataclasses.replace(config.train, seed=args.seed),
            caafe=dataclasses.replace(config.caafe, seed=args.seed),
        )
    return config


def make_parser() -> Parser:
    parser = Parser(prog="healthtriage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a knowledge index from a corpus")
    p.add_argument("--corpus", required=True, help="directory of .txt files or JSONL of {doc_id, text}")
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int, default=512)
    p.add_argument("--overlap", type=int, default=64)
    add_provider_args(p)

    p = sub.add_parser("bank-validate", help="validate a question bank file")
    p.add_argument("--bank", default=None)

    p = sub.add_parser("score", help="score one report into a feature vector")
    p.add_argument("--text", help="report text inline")
    p.add_argument("--report-file", help="file containing the report text")
    p.add_argument("--bank", default=None)
    p.add_argument("--index", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", help="write the vector as matrix JSONL")
    add_provider_args(p)

    p = sub.add_parser("train", help="train the full pipeline")
    p.add_argument("--corpus")
    p.add_argument("--bank", default=None)
    p.add_argument("--examples")
    p.add_argument("--out-dir")
    p.add_argument("--config")
    add_provider_args(p)

    p = sub.add_parser("eval", help="evaluate trained artifacts on labeled examples")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--metrics-out")
    add_provider_args(p)

    p = sub.add_parser("ablate", help="train/evaluate full, no-retrieval, and no-caafe variants")
    p.add_argument("--corpus")
    p.add_argument("--bank", default=None)
    p.add_argument("--examples")
    p.add_argument("--config")
    p.add_argument("--eval-fraction", type=float, default=0.25)
    p.add_argument("--report-out")
    add_provider_args(p)

    p = sub.add_parser("caafe", help="run feature engineering on a scored matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--examples", help="examples JSONL carrying labels")
    p.add_argument("--labels", help="labels JSONL of {report_id, labels} as an alternative")
    p.add_argument("--bank", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    add_provider_args(p)

    p = sub.add_parser("gen-synthetic", help="emit the deterministic synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-examples", type=int, default=400)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--retrieval-dependence", type=float, default=0.5)
    p.add_argument("--no-interaction", action="store_true")

    p = sub.add_parser("predict", help="predict one report with trained artifacts")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--text")
    p.add_argument("--report-file")
    p.add_argument("--mode", choices=["case_study_top1", "multilabel"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--advice", action="store_true", help="also generate advice text")
    add_provider_args(p)

    p = sub.add_parser("consult", help="interactive consultation loop (stdin)")
    p.add_argument("--artifacts")
    p.add_argument("--server", help="consult against a running service instead of local artifacts")
    add_provider_args(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    add_provider_args(p)

    return parser


def _read_report(args) -> str:
    if args.text:
        return args.text
    if args.report_file:
        with open(args.report_file, encoding="utf-8") as fh:
            return fh.read()
    raise HealthTriageError("provide --text or --report-file")


def cmd_ingest(args) -> int:
    provider = build_provider(args)
    corpus = load_corpus(args.corpus)
    index = build_index(corpus, ChunkPolicy(args.chunk_size, args.overlap), provider)
    save_index(index, args.out)
    print(f"indexed {len(corpus)} documents into {len(index.chunks)} chunks -> {args.out}")
    print(f"build_digest: {index.build_digest}")
    return 0


def cmd_bank_validate(args) -> int:
    bank = load_question_bank(args.bank or default_bank_path())
    print(f"ok: {len(bank.questions)} questions, digest {bank.bank_digest}")
    return 0


def cmd_score(args) -> int:
    provider = build_provider(args)
    bank = load_question_bank(args.bank or default_bank_path())
    index = load_index(args.index)
    fv = build_feature_vector("cli-report", _read_report(args), bank, index, provider, k=args.k)
    if args.out:
        save_matrix_jsonl([fv], args.out)
    missing = sum(1 for v in fv.values.values() if v is None)
    print(json.dumps({"report_id": fv.report_id, "values": fv.values}))
    print(f"# scored {len(fv.values)} features, {missing} missing", file=sys.stderr)
    return 0


def _require(args, *names) -> None:
    missing = [n for n in names if not getattr(args, n.replace("-", "_"), None)]
    if missing:
        raise UsageError("missing " + ", ".join(f"--{n}" for n in missing) +
                         " (set on the command line or in the config paths section)")


def cmd_train(args) -> int:
    provider = build_provider(args)
    config = load_config(args)
    _require(args, "corpus", "examples", "out-dir")
    bank = load_question_bank(args.bank or default_bank_path())
    corpus = load_corpus(args.corpus)
    examples = load_examples_jsonl(args.examples, config.label_names)
    tp = run_training(corpus, bank, examples, provider, config)
    save_pipeline(tp, args.out_dir)
    print(f"trained on {len(examples)} examples; artifacts in {args.out_dir}")
    print(f"labels: {', '.join(tp.model.label_names)}")
    print(f"features: {len(tp.model.feature_names)}")
    return 0


def cmd_eval(args) -> int:
    provider = build_provider(args)
    tp = load_pipeline(args.artifacts, provider)
    examples = load_examples_jsonl(args.examples, tp.model.label_names)
    metrics = evaluate(tp, examples)
    print(render_metrics_table([("trained-pipeline", metrics)]))
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=1, sort_keys=True)
    return 0


def cmd_ablate(args) -> int:
    provider = build_provider(args)
    config = load_config(args)
    _require(args, "corpus", "examples")
    bank = load_question_bank(args.bank or default_bank_path())
    corpus = load_corpus(args.corpus)
    examples = load_examples_jsonl(args.examples, config.label_names)
    train_ex, test_ex = split_examples(examples, args.eval_fraction, config.seed)
    results = run_ablation(corpus, bank, train_ex, test_ex, provider, config)
    table = render_metrics_table(list(results.items()))
    print(table)
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            json.dump({k: m.to_dict() for k, m in results.items()}, fh, indent=1, sort_keys=True)
    return 0


def cmd_caafe(args) -> int:
    from .feature_lab import caafe_loop, save_revision
    from .scoring import load_matrix_jsonl

    provider = build_provider(args)
    config = load_config(args)
    bank = load_question_bank(args.bank or default_bank_path())
    vectors = {fv.report_id: fv for fv in load_matrix_jsonl(args.matrix)}
    if args.examples:
        examples = load_examples_jsonl(args.examples, config.label_names)
        label_map = {ex.epr.report_id: ex.labels for ex in examples}
    elif args.labels:
        from .pipeline import load_labels_jsonl

        label_map = load_labels_jsonl(args.labels)
    else:
        raise UsageError("provide --examples or --labels")
    rows, labels = [], []
    for report_id, lab in label_map.items():
        if report_id not in vectors:
            raise HealthTriageError(f"matrix is missing report {report_id}")
        rows.append(vectors[report_id].values)
        labels.append(lab)
    label_names = config.label_names or sorted({n for lab in labels for n in lab})
    revision = caafe_loop(rows, labels, label_names, bank.feature_names(), provider,
                          config.caafe, config.train)
    save_revision(revision, args.out)
    print(f"accepted {len(revision.accepted)}, merged {len(revision.merged)}, "
          f"deleted {len(revision.deleted)} -> {args.out}")
    return 0


def cmd_gen_synthetic(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic, write_synthetic

    spec = SyntheticSpec(
        n_examples=args.n_examples,
        n_classes=args.n_classes,
        retrieval_dependence=args.retrieval_dependence,
        interaction=not args.no_interaction,
        seed=args.seed,
    )
    world = generate_synthetic(spec)
    write_synthetic(world, args.out)
    print(f"synthetic benchmark written to {args.out} "
          f"({len(world.examples)} examples, {len(world.bank.questions)} questions)")
    return 0


def cmd_predict(args) -> int:
    provider = build_provider(args)
    tp = load_pipeline(args.artifacts, provider)
    mode = PredictionMode(args.mode, args.threshold) if args.mode else None
    epr = EPR(report_id="cli-report", narrative=_read_report(args))
    result = predict_report(tp, epr, mode)
    if args.advice and result.predicted:
        from .pipeline import generate_advice

        result.advice = generate_advice(result, epr, tp.index, tp.provider)
    print(json.dumps(result.to_dict()))
    return 0


def cmd_consult(args) -> int:
    if args.server:
        return _consult_remote(args.server)
    if not args.artifacts:
        raise HealthTriageError("provide --artifacts or --server")
    from .consult import SessionStore, finalize, post_message

    provider = build_provider(args)
    tp = load_pipeline(args.artifacts, provider)
    store = SessionStore()
    session = store.open_session()
    print(f"session {session.session_id}; describe your complaint (EOF to stop).")
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        reply = post_message(session, line, tp)
        print(f"assistant: {reply.text}")
        if reply.kind == "prediction":
            result = finalize(session)
            print(json.dumps(result.to_dict()))
            return 0
    return 0


def _consult_remote(base_url: str) -> int:
    import httpx

    with httpx.Client(base_url=base_url, timeout=60.0) as client:
        session_id = client.post("/v1/sessions").json()["session_id"]
        print(f"session {session_id}; describe your complaint (EOF to stop).")
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            resp = client.post(f"/v1/sessions/{session_id}/messages", json={"text": line})
            resp.raise_for_status()
            body = resp.json()
            print(f"assistant: {body['text']}")
            if body["kind"] == "prediction":
                final = client.post(f"/v1/sessions/{session_id}/finalize")
                final.raise_for_status()
                print(json.dumps(final.json()))
                return 0
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    provider = build_provider(args)
    tp = load_pipeline(args.artifacts, provider)
    host, port = args.host, args.port
    listen = os.environ.get("LISTEN_ADDR")
    if listen:
        host, _, port_text = listen.rpartition(":")
        port = int(port_text)
    app = create_app(tp, ServiceConfig(host=host, port=port, artifacts_dir=args.artifacts))
    uvicorn.run(app, host=host, port=port)
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "bank-validate": cmd_bank_validate,
    "score": cmd_score,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "caafe": cmd_caafe,
    "gen-synthetic": cmd_gen_synthetic,
    "predict": cmd_predict,
    "consult": cmd_consult,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except HealthTriageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
