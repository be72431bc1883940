"""Command-line interface.

Subcommands: convert (external formats -> BRAT), validate (schema checks on a
BRAT directory), train (single-task, joint, or joint+fine-tune from a JSON
run config), predict (decode a dataset with a saved model), evaluate (score
predictions against gold), analyze (attention similarity between two
models), and benchmark (score every task directory in one sweep). Every
command writes a machine-readable JSON report next to its human-readable
summary. SPANREL_THREADS caps the worker count for parallel file validation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import analysis, brat, converters, metrics, synthetic
from .encoder import EncoderConfig
from .schema import TASK_NAMES, TaskSchema, builtin_schema, schema_from_dict, \
    schema_to_dict
from .trainer import (ModelBundle, TaskData, TrainerConfig, evaluate_task,
                      fine_tune, predict_documents, train_mtl, train_stl)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT_ERROR = 2


class ConfigError(ValueError):
    pass


def worker_count() -> int:
    value = os.environ.get("SPANREL_THREADS")
    if value:
        return max(1, int(value))
    return min(8, os.cpu_count() or 1)


def resolve_schema(spec) -> TaskSchema:
    """Schema from a config value: a task name, or a dict of overrides.

    A dict may carry "builtin": <name> plus field overrides, or be a complete
    schema description.
    """
    if isinstance(spec, str):
        return _builtin_or_synthetic(spec)
    if not isinstance(spec, dict):
        raise ConfigError(f"schema must be a name or an object, got {type(spec).__name__}")
    spec = dict(spec)
    base_name = spec.pop("builtin", None)
    if base_name is not None:
        base = schema_to_dict(_builtin_or_synthetic(base_name))
        unknown = set(spec) - set(base)
        if unknown:
            raise ConfigError(f"unknown schema override keys: {sorted(unknown)}")
        base.update(spec)
        return schema_from_dict(base)
    return schema_from_dict(spec)


def _builtin_or_synthetic(name: str) -> TaskSchema:
    if name == "alpha":
        return synthetic.alpha_schema()
    if name == "beta":
        return synthetic.beta_schema()
    return builtin_schema(name)


def write_report(out_dir: Path, name: str, payload: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_convert(args) -> int:
    schema = resolve_schema(args.task) if args.task else None
    try:
        summary = converters.import_corpus(args.format, args.inputs, args.out,
                                           variant=args.variant, schema=schema)
    except (converters.FormatError, converters.InconsistentTree, brat.BratError) as exc:
        print(f"FormatError {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    payload = {"command": "convert", "format": args.format, "out": str(args.out),
               **summary.to_dict()}
    write_report(Path(args.out), "convert_report.json", payload)
    print(f"converted {summary.documents} documents "
          f"({summary.spans} spans, {summary.relations} relations) -> {args.out}")
    if summary.reported:
        print(f"reported: {summary.reported}")
    return EXIT_OK


def cmd_validate(args) -> int:
    schema = resolve_schema(args.task)
    try:
        bases = brat.dataset_bases(args.data_dir)
    except brat.IoError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR

    def check(base):
        try:
            return brat.validate_document(brat.load_document(base), schema)
        except brat.BratError as exc:
            return [brat.Violation("MalformedDocument", base.name, str(exc))]

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        violations = [v for batch in pool.map(check, bases) for v in batch]
    payload = {"command": "validate", "task": schema.name, "data_dir": str(args.data_dir),
               "documents": len(bases),
               "violations": [{"kind": v.kind, "doc": v.doc_id, "message": v.message}
                              for v in violations]}
    if args.out:
        write_report(Path(args.out), "validate_report.json", payload)
    for v in violations:
        print(str(v))
    print(f"validated {len(bases)} documents: {len(violations)} violations")
    return EXIT_OK if not violations else EXIT_VIOLATIONS


def load_run_config(path: str | Path, seed_override: int | None = None):
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(raw) - {"trainer", "encoder", "tasks", "out_dir"}
    if unknown:
        raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
    trainer = TrainerConfig.from_dict(raw.get("trainer", {}))
    if seed_override is not None:
        trainer = TrainerConfig.from_dict({**trainer.to_dict(), "seed": seed_override})
    encoder = EncoderConfig.from_dict(raw.get("encoder", {}))
    tasks = []
    base = Path(path).parent
    for entry in raw.get("tasks", []):
        unknown = set(entry) - {"name", "schema", "train_dir", "dev_dir"}
        if unknown:
            raise ConfigError(f"unknown task entry keys: {sorted(unknown)}")
        schema = resolve_schema(entry.get("schema", entry["name"]))
        train_dir = (base / entry["train_dir"]).resolve()
        dev_dir = (base / entry["dev_dir"]).resolve()
        tasks.append(TaskData(schema=schema,
                              train_docs=brat.load_dataset(train_dir),
                              dev_docs=brat.load_dataset(dev_dir)))
    if not tasks:
        raise ConfigError("run config declares no tasks")
    out_dir = Path(raw.get("out_dir", "run_output"))
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    return trainer, encoder, tasks, out_dir


def cmd_train(args) -> int:
    try:
        trainer_cfg, encoder_cfg, tasks, out_dir = load_run_config(args.config, args.seed)
    except (ConfigError, ValueError, KeyError, OSError, brat.BratError) as exc:
        print(f"bad run config: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if args.out:
        out_dir = Path(args.out)

    if trainer_cfg.mode == "stl":
        if len(tasks) != 1:
            print("stl mode takes exactly one task", file=sys.stderr)
            return EXIT_INPUT_ERROR
        bundle, log = train_stl(trainer_cfg, encoder_cfg, tasks[0].schema,
                                tasks[0].train_docs, tasks[0].dev_docs)
    else:
        bundle, log = train_mtl(trainer_cfg, encoder_cfg, tasks)
        if trainer_cfg.mode == "mtl_ft":
            target = trainer_cfg.fine_tune_task
            data = next((t for t in tasks if t.schema.name == target), None)
            if data is None:
                print(f"fine_tune_task {target!r} is not among tasks", file=sys.stderr)
                return EXIT_INPUT_ERROR
            bundle, ft_log = fine_tune(bundle, trainer_cfg, target,
                                       data.train_docs, data.dev_docs)
            for entry in ft_log:
                entry["phase"] = "fine_tune"
            log.extend(ft_log)

    out_dir.mkdir(parents=True, exist_ok=True)
    bundle.save(out_dir / "bundle")
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    final = {}
    model = bundle.model()
    for td in tasks:
        schema = bundle.schemas[td.schema.name]
        report, extras = evaluate_task(model, bundle.params, schema, td.dev_docs)
        final[td.schema.name] = {**report.to_dict(), "extras": extras}
    payload = {"command": "train", "mode": trainer_cfg.mode, "seed": trainer_cfg.seed,
               "epochs_logged": max((e["epoch"] for e in log), default=0),
               "dev_reports": final, "bundle": str(out_dir / "bundle")}
    write_report(out_dir, "train_report.json", payload)
    for task, report in final.items():
        print(f"{task}: dev {report['metric']} = {report['f1']:.4f}")
    print(f"bundle saved to {out_dir / 'bundle'}")
    return EXIT_OK


def _load_bundle_and_schema(model_dir, task):
    bundle = ModelBundle.load(model_dir)
    if task:
        if task not in bundle.schemas:
            raise ConfigError(f"model has no task {task!r} (has {sorted(bundle.schemas)})")
        name = task
    elif len(bundle.schemas) == 1:
        name = next(iter(bundle.schemas))
    else:
        raise ConfigError(f"model bundles several tasks; pass --task (one of "
                          f"{sorted(bundle.schemas)})")
    return bundle, bundle.schemas[name]


def cmd_predict(args) -> int:
    try:
        bundle, schema = _load_bundle_and_schema(args.model, args.task)
        docs = brat.load_dataset(args.data_dir)
    except (ConfigError, brat.BratError, brat.IoError, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR
    preds = predict_documents(bundle.model(), bundle.params, schema, docs)
    out_dir = Path(args.out)
    n_spans = n_rels = 0
    for pred in preds:
        brat.save_document(pred, out_dir)
        n_spans += len(pred.spans)
        n_rels += len(pred.relations)
    if args.conllu and schema.decoder == "dependency":
        for pred in preds:
            attachments = dict(enumerate(metrics.attachments_from_document(pred)))
            text = converters.write_conllu(pred, attachments)
            (out_dir / f"{pred.doc_id}.conllu").write_text(text, encoding="utf-8")
    payload = {"command": "predict", "task": schema.name, "documents": len(preds),
               "spans": n_spans, "relations": n_rels, "out": str(out_dir)}
    write_report(out_dir, "predict_report.json", payload)
    print(f"predicted {len(preds)} documents ({n_spans} spans, {n_rels} relations)")
    return EXIT_OK


def _evaluate_dirs(schema: TaskSchema, gold_dir, pred_dir):
    gold = brat.load_dataset(gold_dir)
    pred = brat.load_dataset(pred_dir)
    gold_ids = [d.doc_id for d in gold]
    pred_ids = [d.doc_id for d in pred]
    if gold_ids != pred_ids:
        raise metrics.DocumentMismatch(
            f"gold and predicted directories differ: {set(gold_ids) ^ set(pred_ids)}")
    return metrics.evaluate_documents(gold, pred, schema)


def cmd_evaluate(args) -> int:
    schema = resolve_schema(args.task)
    try:
        report = _evaluate_dirs(schema, args.gold, args.pred)
    except (brat.BratError, brat.IoError, metrics.DocumentMismatch,
            metrics.MissingHead, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR
    payload = {"command": "evaluate", "task": schema.name, **report.to_dict()}
    if args.out:
        write_report(Path(args.out), "evaluate_report.json", payload)
    print(f"{schema.name} {report.metric}: P={report.precision:.4f} "
          f"R={report.recall:.4f} F1={report.f1:.4f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        bundle_a, schema = _load_bundle_and_schema(args.model_a, args.task)
        bundle_b, _ = _load_bundle_and_schema(args.model_b, args.task_b or args.task)
        docs = brat.load_dataset(args.data_dir)
    except (ConfigError, brat.BratError, brat.IoError, OSError, KeyError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR
    sentences = [doc.sentence_tokens(i) for doc in docs
                 for i in range(len(doc.sentences))]
    if args.max_sentences:
        sentences = sentences[:args.max_sentences]
    try:
        profile_a = analysis.extract_attention(bundle_a, schema.name, sentences)
        profile_b = analysis.extract_attention(bundle_b, schema.name, sentences)
    except analysis.NoAttentionLayers as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR
    grid = analysis.similarity_matrix(profile_a, profile_b)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.write_similarity_csv(grid, out_dir / "similarity.csv")
    wrote_png = analysis.write_similarity_heatmap(grid, out_dir / "similarity.png")
    payload = {"command": "analyze", "sentences": len(sentences),
               "layers": int(grid.shape[0]), "heads": int(grid.shape[1]),
               "mean_similarity": analysis.mean_similarity(grid),
               "csv": str(out_dir / "similarity.csv"),
               "png": str(out_dir / "similarity.png") if wrote_png else None}
    write_report(out_dir, "analyze_report.json", payload)
    print(f"mean attention similarity over {len(sentences)} sentences: "
          f"{payload['mean_similarity']:.6f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    root = Path(args.data_dir)
    if not root.is_dir():
        print(f"{root} is not a directory", file=sys.stderr)
        return EXIT_INPUT_ERROR
    results = {}
    for task_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        gold_dir = task_dir / "gold"
        pred_dir = task_dir / "pred"
        if not gold_dir.is_dir() or not pred_dir.is_dir():
            continue
        schema = resolve_schema(task_dir.name)
        try:
            report = _evaluate_dirs(schema, gold_dir, pred_dir)
        except (brat.BratError, metrics.DocumentMismatch, metrics.MissingHead) as exc:
            results[task_dir.name] = {"error": str(exc)}
            continue
        results[task_dir.name] = report.to_dict()
    if not results:
        print("no <task>/gold + <task>/pred pairs found", file=sys.stderr)
        return EXIT_INPUT_ERROR
    payload = {"command": "benchmark", "tasks": results}
    out_dir = Path(args.out) if args.out else root
    write_report(out_dir, "benchmark_report.json", payload)
    for task, report in sorted(results.items()):
        if "error" in report:
            print(f"{task}: ERROR {report['error']}")
        else:
            print(f"{task}: {report['metric']} = {report['f1']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanrel",
        description="Span-relation analysis: corpus conversion, training, "
                    "decoding, evaluation, and attention analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a corpus into BRAT standoff files")
    p.add_argument("--format", required=True, choices=converters.FORMATS)
    p.add_argument("--out", required=True)
    p.add_argument("--task", help="task schema for length-bound reporting")
    p.add_argument("--variant", choices=["consti", "pos"],
                   help="ptb_bracketed: extract constituents (default) or POS tags")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("validate", help="check a BRAT directory against a task schema")
    p.add_argument("--task", required=True)
    p.add_argument("--out")
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the config output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="decode a dataset with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--task")
    p.add_argument("--out", required=True)
    p.add_argument("--conllu", action="store_true",
                   help="also write CoNLL-U for dependency tasks")
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--task", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="attention similarity between two models")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--task", help="task whose sentences/schema to use from model A")
    p.add_argument("--task-b", help="task name inside model B, if different")
    p.add_argument("--out", required=True)
    p.add_argument("--max-sentences", type=int, default=0)
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("benchmark",
                       help="evaluate every <task>/gold vs <task>/pred under a directory")
    p.add_argument("--out")
    p.add_argument("data_dir")
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
