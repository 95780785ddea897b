"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error.  Errors are rendered on stderr as one machine-parseable JSON line
followed by a human-readable line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import yaml

from . import MODEL_FORMAT_VERSION, __version__
from .corpus import (
    LAYER_COARSE,
    LAYER_CORRECTED,
    LAYER_GOLD,
    LAYER_PREDICTED,
    LAYER_PSEUDO,
    Dataset,
    LabelScheme,
    load_dataset,
    save_dataset,
    split_sentences,
)
from .crf import CrfModel, TrainConfig, fit, load_model, save_model
from .emitter import (
    EmitterConfig,
    ExternalEmitter,
    PRESETS,
    STUDENT_CONFIG,
    TEACHER_CONFIG,
    load_external_emissions,
)
from .errors import ConfigError, NerError
from .evaluation import dataset_prf, throughput_bench
from .fileio import atomic_write_text, dump_json_line
from .gazetteer import (
    AbbreviationRule,
    NameDictionary,
    ReplayAnnotator,
    annotate_corpus,
    build_matcher,
)
from .pipeline import (
    PipelineConfig,
    append_records,
    load_store,
    run_pipeline,
    select_disagreements,
)
from .report import compare_report, load_runs
from .review_server import DEFAULT_BIND, ENV_BIND, ENV_STORE, export_corrected, serve
from .synth import SynthConfig, gen_corpus, write_corpus


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):  # noqa: A002 - argparse API
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit_error(exc: BaseException, internal: bool = False) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    kind = "internal error" if internal else "error"
    print(f"ner: {kind}: {exc}", file=sys.stderr)


def _load_yaml(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        obj = yaml.safe_load(fh) or {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return obj


def _labels(arg: str) -> tuple[str, ...]:
    return tuple(x for x in arg.split(",") if x)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _emitter_config(args, default: EmitterConfig) -> EmitterConfig:
    config = PRESETS[args.preset] if getattr(args, "preset", None) else default
    window = args.window if args.window is not None else config.window
    hash_dim = args.hash_dim if args.hash_dim is not None else config.hash_dim
    seed = args.hash_seed if args.hash_seed is not None else config.seed
    return EmitterConfig(window=window, hash_dim=hash_dim, seed=seed)


def _train_config(args, file_config: dict, lr_default: float | None = None) -> TrainConfig:
    merged = dict(file_config)
    for key in ("learning_rate", "l2", "max_epochs", "patience", "lr_decay", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if lr_default is not None:
        merged.setdefault("learning_rate", lr_default)
    unknown = set(merged) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**merged)


def _add_train_flags(sub) -> None:
    sub.add_argument("--config", help="YAML training config (flags win)")
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--l2", type=float)
    sub.add_argument("--max-epochs", dest="max_epochs", type=int)
    sub.add_argument("--patience", type=int)
    sub.add_argument("--lr-decay", dest="lr_decay", type=float)
    sub.add_argument("--seed", type=int)


def _add_emitter_flags(sub) -> None:
    sub.add_argument("--preset", choices=sorted(PRESETS))
    sub.add_argument("--window", type=int)
    sub.add_argument("--hash-dim", dest="hash_dim", type=int)
    sub.add_argument("--hash-seed", dest="hash_seed", type=int)


def _append_runs(path: Path, rows: list[dict]) -> None:
    existing = path.read_text(encoding="utf-8") if path.exists() else ""
    body = existing + "".join(dump_json_line(row) + "\n" for row in rows)
    atomic_write_text(path, body)


# --- subcommand implementations ---


def cmd_synth(args) -> int:
    merged = _load_yaml(args.config)
    for key in ("n_sentences", "n_names", "dict_coverage", "boundary_noise", "seed"):
        value = getattr(args, key)
        if value is not None:
            merged[key] = value
    config = SynthConfig.from_dict(merged)
    result = gen_corpus(config)
    paths = write_corpus(result, args.out)
    for name in sorted(paths):
        print(f"{_sha256(paths[name])}  {paths[name]}")
    print(json.dumps(result.stats, sort_keys=True))
    return 0


def cmd_match(args) -> int:
    dictionary = NameDictionary.load(args.dict, min_surface_len=args.min_surface_len)
    matcher = build_matcher(dictionary)
    dataset = load_dataset(args.infile)
    out = Dataset(list(dataset.sentences))
    out.add_layer(args.layer, {s.id: matcher.match(s.text) for s in dataset.sentences})
    save_dataset(out, args.out)
    print(f"{_sha256(Path(args.out))}  {args.out}")
    return 0


def cmd_annotate(args) -> int:
    dictionary = NameDictionary.load(args.dict, min_surface_len=args.min_surface_len)
    if args.abbrev_rules:
        raw = _load_yaml(args.abbrev_rules)
        rules = [
            AbbreviationRule(r["kind"], r["pattern"], int(r.get("min_remainder", 2)))
            for r in raw.get("rules", [])
        ]
        dictionary = dictionary.with_abbreviations(rules)
    matcher = build_matcher(dictionary)
    dataset = load_dataset(args.infile)
    secondary = ReplayAnnotator(args.secondary) if args.secondary else None
    annotated = annotate_corpus(dataset.sentences, matcher, secondary)
    save_dataset(annotated, args.out)
    print(f"{_sha256(Path(args.out))}  {args.out}")
    return 0


def cmd_split(args) -> int:
    from .corpus import DEFAULT_DELIMITERS

    text = Path(args.infile).read_text(encoding="utf-8")
    delimiters = tuple(args.delimiters) + ("\n",) if args.delimiters else DEFAULT_DELIMITERS
    sentences = split_sentences(text, delimiters=delimiters)
    dataset = Dataset(sentences)
    save_dataset(dataset, args.out)
    print(f"{len(sentences)} sentences -> {args.out}")
    return 0


def cmd_train(args) -> int:
    scheme = LabelScheme(_labels(args.labels))
    file_config = _load_yaml(args.config)
    train = load_dataset(args.train)
    dev = load_dataset(args.dev)

    if args.stage == "outline":
        config = _train_config(args, file_config)
        model = CrfModel.fresh(scheme, _emitter_config(args, TEACHER_CONFIG),
                               constraints=not args.no_constraints,
                               metadata={"train_seed": config.seed, "stage": "outline"})
        train_layer = args.train_layer or LAYER_COARSE
    else:
        if not args.init:
            raise ConfigError("--stage detail requires --init MODEL")
        base = load_model(args.init)
        config = _train_config(args, file_config,
                               lr_default=TrainConfig().learning_rate * 0.1)
        model = base.copy()
        model.metadata["stage"] = "detail"
        train_layer = args.train_layer or LAYER_CORRECTED

    model, history = fit(model, train, dev, config,
                         train_layer=train_layer, dev_layer=args.dev_layer)
    save_model(model, args.out)
    print(f"dev F1 history: {[round(x, 4) for x in history]}")
    print(f"{_sha256(Path(args.out))}  {args.out}")
    return 0


def cmd_select(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.infile)
    records = select_disagreements(model, dataset, layer=args.layer)
    out = Path(args.out)
    if out.exists():
        out.unlink()
    append_records(out, records)
    print(f"{len(records)} disagreement records -> {args.out}")
    return 0


def cmd_serve_review(args) -> int:
    store = args.store or os.environ.get(ENV_STORE)
    if not store:
        raise ConfigError(f"--store or ${ENV_STORE} is required")
    serve(store, args.dataset, bind=args.bind, labels=_labels(args.labels),
          ui_dir=args.ui_dir)
    return 0


def cmd_export_corrected(args) -> int:
    coarse = load_dataset(args.dataset) if args.dataset else None
    dataset = export_corrected(args.store, coarse)
    save_dataset(dataset, args.out)
    print(f"{len(dataset)} corrected sentences -> {args.out}")
    return 0


def cmd_distill(args) -> int:
    from .pipeline import distill

    teacher = load_model(args.model)
    corpus = load_dataset(args.infile)
    pseudo, skipped = distill(teacher, corpus.sentences, max_len=args.max_len)
    save_dataset(pseudo, args.out)
    print(f"{len(pseudo)} pseudo-labeled sentences ({skipped} skipped) -> {args.out}")
    return 0


def cmd_train_student(args) -> int:
    from .pipeline import train_student

    scheme = LabelScheme(_labels(args.labels))
    config = _train_config(args, _load_yaml(args.config))
    pseudo = load_dataset(args.train)
    dev = load_dataset(args.dev)
    student, history = train_student(
        pseudo, dev, config, scheme,
        emitter_config=_emitter_config(args, STUDENT_CONFIG),
        pseudo_layer=args.train_layer, dev_layer=args.dev_layer,
    )
    save_model(student, args.out)
    print(f"dev F1 history: {[round(x, 4) for x in history]}")
    print(f"{_sha256(Path(args.out))}  {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.infile)
    if args.external_emissions:
        tables = load_external_emissions(args.external_emissions, model.scheme, dataset)
        model.emitter = ExternalEmitter(model.scheme, tables)
    out = Dataset(list(dataset.sentences))
    out.add_layer(args.layer, {s.id: model.predict_spans(s) for s in dataset.sentences})
    save_dataset(out, args.out)
    print(f"{_sha256(Path(args.out))}  {args.out}")
    return 0


def cmd_eval(args) -> int:
    predicted = load_dataset(args.pred)
    gold = load_dataset(args.gold)
    metrics = dataset_prf(predicted, args.pred_layer, gold, args.gold_layer)
    row = {"name": args.name, **metrics.to_json()}
    print(f"P={metrics.precision:.4f} R={metrics.recall:.4f} F1={metrics.f1:.4f} "
          f"(tp={metrics.true_positives} fp={metrics.false_positives} fn={metrics.false_negatives})")
    if args.out:
        _append_runs(Path(args.out), [row])
    return 0


def cmd_bench(args) -> int:
    model = load_model(args.model)
    corpus = load_dataset(args.infile)
    report = throughput_bench(model, corpus.sentences, warmup=args.warmup,
                              model_id=args.name, threads=args.threads,
                              repeats=args.repeats)
    print(f"{report.sentences_per_second:.1f} sent/s, "
          f"{report.characters_per_second:.0f} chars/s over {report.corpus_sentences} "
          f"sentences (wall {report.wall_time:.3f}s, checksum {report.decode_checksum[:12]})")
    if args.out:
        _append_runs(Path(args.out), [{"name": args.name, **report.to_json()}])
    return 0


def cmd_report(args) -> int:
    runs = load_runs(args.runs)
    if not runs:
        print(f"ner report: error: {args.runs} contains no runs", file=sys.stderr)
        return 1
    figures_dir = args.figures
    if figures_dir is None and args.out:
        figures_dir = str(Path(args.out).parent / "figures")
    table = compare_report(runs, out_path=args.out, figures_dir=figures_dir)
    print(table)
    return 0


def cmd_pipeline(args) -> int:
    obj = _load_yaml(args.config)
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.workdir is not None:
        obj["workdir"] = args.workdir
    config = PipelineConfig.from_dict(obj, base_dir=Path(args.config).parent if args.config else ".")
    state = run_pipeline(config, resume=not args.no_resume,
                         progress=lambda msg: print(f"[pipeline] {msg}"))
    report_path = state.artifacts.get("report")
    if report_path and Path(report_path).exists():
        from .report import format_table

        print(format_table(load_runs(report_path)))
    print(json.dumps(state.metrics.get("test", {}), sort_keys=True, indent=2))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ner", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"nerpipe {__version__} (model format v{MODEL_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic corpus with known gold entities")
    p.add_argument("--config", help="YAML synth config (flags win)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-sentences", dest="n_sentences", type=int)
    p.add_argument("--n-names", dest="n_names", type=int)
    p.add_argument("--dict-coverage", dest="dict_coverage", type=float)
    p.add_argument("--boundary-noise", dest="boundary_noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="annotate a corpus with dictionary matches only")
    p.add_argument("--dict", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default=LAYER_COARSE)
    p.add_argument("--min-surface-len", dest="min_surface_len", type=int, default=2)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("annotate", help="machine-annotate with dictionary + optional secondary annotator")
    p.add_argument("--dict", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--secondary", help="replay file of secondary annotator spans (JSONL)")
    p.add_argument("--abbrev-rules", dest="abbrev_rules",
                   help="YAML file with an abbreviation rules list")
    p.add_argument("--min-surface-len", dest="min_surface_len", type=int, default=2)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("split", help="split raw text into sentences (delimiters kept)")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delimiters",
                   help="delimiter characters as one string (newline is always included)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the tagger (outline) or fine-tune it (detail)")
    p.add_argument("--stage", choices=("outline", "detail"), required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--train-layer", dest="train_layer")
    p.add_argument("--dev", required=True)
    p.add_argument("--dev-layer", dest="dev_layer", default=LAYER_GOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="model to continue from (detail stage)")
    p.add_argument("--labels", default="COM")
    p.add_argument("--no-constraints", action="store_true",
                   help="disable the BIO transition mask (ablation)")
    _add_emitter_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="select sentences whose prediction disagrees with the coarse layer")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--layer", default=LAYER_COARSE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("serve-review", help="serve the correction queue over HTTP")
    p.add_argument("--store", help=f"disagreement store (default ${ENV_STORE})")
    p.add_argument("--dataset", help="coarse dataset for cross-checking record text")
    p.add_argument("--bind", help=f"host:port (default ${ENV_BIND} or {DEFAULT_BIND})")
    p.add_argument("--labels", default="COM")
    p.add_argument("--ui-dir", dest="ui_dir", help="directory with built UI assets")
    p.set_defaults(func=cmd_serve_review)

    p = sub.add_parser("export-corrected", help="export corrected sentences from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--dataset", help="coarse dataset (validates record ids)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_corrected)

    p = sub.add_parser("distill", help="pseudo-label a corpus with a teacher model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", dest="max_len", type=int, default=512)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train-student", help="train a fresh student on pseudo labels")
    p.add_argument("--train", required=True)
    p.add_argument("--train-layer", dest="train_layer", default=LAYER_PSEUDO)
    p.add_argument("--dev", required=True)
    p.add_argument("--dev-layer", dest="dev_layer", default=LAYER_GOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default="COM")
    _add_emitter_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("predict", help="decode a corpus with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default=LAYER_PREDICTED)
    p.add_argument("--external-emissions", dest="external_emissions",
                   help="JSONL emission tables produced by an external encoder")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="entity-level precision/recall/F1")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-layer", dest="pred_layer", default=LAYER_PREDICTED)
    p.add_argument("--gold", required=True)
    p.add_argument("--gold-layer", dest="gold_layer", default=LAYER_GOLD)
    p.add_argument("--name", default="run")
    p.add_argument("--out", help="runs file to append the record to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="decode throughput benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--repeats", type=int, default=1,
                   help="timed passes over the corpus (raise on small corpora)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--name", default="model")
    p.add_argument("--out", help="runs file to append the record to")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="comparison table, JSONL report, and figures")
    p.add_argument("--runs", required=True, help="runs file produced by eval/bench")
    p.add_argument("--out", help="report JSONL path")
    p.add_argument("--figures", help="directory for rendered figures")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="declarative end-to-end workflow")
    psub = p.add_subparsers(dest="pipeline_command", metavar="ACTION")
    prun = psub.add_parser("run", help="run (or resume) the configured pipeline")
    prun.add_argument("--config", required=True)
    prun.add_argument("--seed", type=int, help="override the config seed")
    prun.add_argument("--workdir", help="override the config workdir")
    prun.add_argument("--no-resume", action="store_true",
                      help="ignore existing pipeline state")
    prun.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.error("a subcommand is required")
    if args.command == "pipeline" and getattr(args, "pipeline_command", None) is None:
        parser.error("pipeline requires an action (run)")
    try:
        return args.func(args) or 0
    except (NerError, OSError) as exc:
        _emit_error(exc)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        _emit_error(exc, internal=True)
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
