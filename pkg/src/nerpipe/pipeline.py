"""Workflow orchestration: outline training on machine-annotated data,
disagreement selection, correction ingestion, detail fine-tuning, and
teacher-to-student distillation.

The disagreement store is append-only JSON Lines: one full record per line,
with later lines superseding earlier ones for the same sentence id.  The
pipeline state file records the last completed stage plus artifact paths and
metrics, so an interrupted run resumes without recomputing finished stages.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corpus import (
    LAYER_COARSE,
    LAYER_CORRECTED,
    LAYER_GOLD,
    LAYER_PSEUDO,
    Dataset,
    LabelScheme,
    Sentence,
    Span,
    load_dataset,
    save_dataset,
    spans_to_tags,
    tags_to_spans,
)
from .crf import CrfModel, TrainConfig, dev_entity_f1, fit, load_model, save_model
from .emitter import PRESETS, EmitterConfig, TEACHER_CONFIG, STUDENT_CONFIG
from .errors import (
    ConfigError,
    DataError,
    ParseError,
    StoreCorruptionError,
    UnknownSentenceError,
)
from .evaluation import entity_prf, throughput_bench
from .fileio import atomic_write_text, dump_json_line
from .gazetteer import NameDictionary, build_matcher
from .report import RunRecord, render_figures, write_report
from .synth import SynthConfig, gen_corpus, write_corpus

log = logging.getLogger(__name__)

STATUS_PENDING = "pending"
STATUS_CORRECTED = "corrected"
STATUS_SKIPPED = "skipped"
_STATUSES = (STATUS_PENDING, STATUS_CORRECTED, STATUS_SKIPPED)

STAGES = ("outline", "selecting", "correcting", "detail", "distilling", "done")

DEFAULT_DISTILL_MAX_LEN = 512


@dataclass
class DisagreementRecord:
    """A sentence whose model prediction differs from its coarse annotation."""

    sentence_id: str
    text: str
    coarse_spans: list[Span]
    predicted_spans: list[Span]
    diff_positions: list[int]
    status: str = STATUS_PENDING
    corrected_spans: list[Span] | None = None
    annotator_id: str | None = None

    def __post_init__(self) -> None:
        if self.status not in _STATUSES:
            raise DataError(f"unknown record status {self.status!r}")
        if not self.diff_positions:
            raise DataError(f"record {self.sentence_id!r} has no disagreement positions")
        if (self.status == STATUS_CORRECTED) != (self.corrected_spans is not None):
            raise DataError(
                f"record {self.sentence_id!r}: corrected_spans present iff status is corrected"
            )

    def to_json(self) -> dict:
        obj = {
            "sentence_id": self.sentence_id,
            "text": self.text,
            "coarse_spans": [sp.to_json() for sp in self.coarse_spans],
            "predicted_spans": [sp.to_json() for sp in self.predicted_spans],
            "diff_positions": list(self.diff_positions),
            "status": self.status,
            "corrected_spans": None if self.corrected_spans is None
            else [sp.to_json() for sp in self.corrected_spans],
        }
        if self.annotator_id is not None:
            obj["annotator_id"] = self.annotator_id
        return obj

    @classmethod
    def from_json(cls, obj: Mapping) -> "DisagreementRecord":
        corrected = obj.get("corrected_spans")
        return cls(
            sentence_id=str(obj["sentence_id"]),
            text=str(obj["text"]),
            coarse_spans=[Span.from_json(sp) for sp in obj["coarse_spans"]],
            predicted_spans=[Span.from_json(sp) for sp in obj["predicted_spans"]],
            diff_positions=[int(i) for i in obj["diff_positions"]],
            status=str(obj.get("status", STATUS_PENDING)),
            corrected_spans=None if corrected is None else [Span.from_json(sp) for sp in corrected],
            annotator_id=None if obj.get("annotator_id") is None else str(obj["annotator_id"]),
        )

    def resolved(self, spans: Sequence[Span] | None, annotator_id: str | None,
                 skipped: bool = False) -> "DisagreementRecord":
        """Copy of this record marked corrected (or skipped)."""
        return DisagreementRecord(
            sentence_id=self.sentence_id,
            text=self.text,
            coarse_spans=list(self.coarse_spans),
            predicted_spans=list(self.predicted_spans),
            diff_positions=list(self.diff_positions),
            status=STATUS_SKIPPED if skipped else STATUS_CORRECTED,
            corrected_spans=None if skipped else list(spans or ()),
            annotator_id=annotator_id,
        )


def queue_order(records: Sequence[DisagreementRecord]) -> list[DisagreementRecord]:
    """Largest disagreements first, sentence id as the tie-break."""
    return sorted(records, key=lambda r: (-len(r.diff_positions), r.sentence_id))


# --- append-only disagreement store ---


def append_records(path: str | Path, records: Sequence[DisagreementRecord],
                   fsync: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(dump_json_line(record.to_json()) + "\n")
        fh.flush()
        if fsync:
            os.fsync(fh.fileno())


def load_store(path: str | Path) -> dict[str, DisagreementRecord]:
    """Replay the store; the latest line per sentence id wins.

    A malformed or truncated *final* line is tolerated (the remnant of a
    crash mid-append; the write was never acknowledged).  Malformed lines
    anywhere else mean the store is corrupt.
    """
    records: dict[str, DisagreementRecord] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    last_content = 0
    for i, line in enumerate(lines, start=1):
        if line.strip():
            last_content = i
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = DisagreementRecord.from_json(json.loads(line))
        except Exception as exc:  # noqa: BLE001 - any malformed line is a store problem
            if lineno == last_content:
                log.warning("%s:%d: ignoring partial trailing record (%s)", path, lineno, exc)
                continue
            raise StoreCorruptionError(f"{path}:{lineno}: malformed record: {exc}") from exc
        records[record.sentence_id] = record
    return records


# --- pipeline operations ---


def outline_train(
    coarse: Dataset,
    dev: Dataset,
    config: TrainConfig,
    scheme: LabelScheme,
    emitter_config: EmitterConfig = TEACHER_CONFIG,
    coarse_layer: str = LAYER_COARSE,
    dev_layer: str = LAYER_GOLD,
) -> tuple[CrfModel, list[float]]:
    """Stage-1 training on the machine-annotated layer, early-stopped on dev F1."""
    model = CrfModel.fresh(scheme, emitter_config,
                           metadata={"train_seed": config.seed, "stage": "outline"})
    return fit(model, coarse, dev, config, train_layer=coarse_layer, dev_layer=dev_layer)


def select_disagreements(
    model: CrfModel,
    coarse: Dataset,
    layer: str = LAYER_COARSE,
) -> list[DisagreementRecord]:
    """Decode every sentence; keep those whose tags differ from the coarse layer."""
    records: list[DisagreementRecord] = []
    spans_by_id = coarse.layer(layer)
    for sentence in coarse.sentences:
        if sentence.length == 0:
            continue
        predicted_tags = model.decode(sentence)
        coarse_tags = spans_to_tags(sentence.length, spans_by_id[sentence.id], model.scheme)
        diff = [i for i, (a, b) in enumerate(zip(predicted_tags, coarse_tags)) if a != b]
        if diff:
            records.append(DisagreementRecord(
                sentence_id=sentence.id,
                text=sentence.text,
                coarse_spans=list(spans_by_id[sentence.id]),
                predicted_spans=tags_to_spans(predicted_tags),
                diff_positions=diff,
            ))
    return queue_order(records)


def apply_corrections(
    coarse: Dataset,
    records: Sequence[DisagreementRecord],
    layer: str = LAYER_COARSE,
) -> Dataset:
    """Corrected layer over the formerly-disputed sentences only.

    Corrected records contribute their corrected spans; skipped records keep
    the coarse spans.
    """
    for record in records:
        if record.status == STATUS_PENDING:
            raise DataError(f"record {record.sentence_id!r} is still pending")
        if not coarse.has_sentence(record.sentence_id):
            raise UnknownSentenceError(f"record references unknown sentence {record.sentence_id!r}")
    by_id = {r.sentence_id: r for r in records}
    subset = coarse.subset(by_id)
    corrected: dict[str, Sequence[Span]] = {}
    for sentence in subset.sentences:
        record = by_id[sentence.id]
        if record.status == STATUS_CORRECTED:
            corrected[sentence.id] = list(record.corrected_spans or ())
        else:
            corrected[sentence.id] = coarse.spans(layer, sentence.id)
    result = Dataset(subset.sentences)
    result.add_layer(LAYER_CORRECTED, corrected)
    return result


def oracle_corrections(
    records: Sequence[DisagreementRecord],
    gold: Dataset,
    gold_layer: str = LAYER_GOLD,
) -> list[DisagreementRecord]:
    """Resolve records against a gold layer - the stand-in for human annotators."""
    resolved = []
    for record in records:
        if not gold.has_sentence(record.sentence_id):
            raise UnknownSentenceError(f"no gold for sentence {record.sentence_id!r}")
        resolved.append(record.resolved(gold.spans(gold_layer, record.sentence_id), "oracle"))
    return resolved


def detail_train(
    model: CrfModel,
    corrected: Dataset,
    dev: Dataset,
    config: TrainConfig,
    corrected_layer: str = LAYER_CORRECTED,
    dev_layer: str = LAYER_GOLD,
) -> tuple[CrfModel, list[float]]:
    """Stage-2 fine-tuning on corrected disagreements, from the given parameters.

    The input model is left untouched.  If fine-tuning never beats the input
    model on dev F1, the input parameters are returned (best-snapshot
    semantics extended to the starting point).
    """
    if not corrected.sentences:
        log.warning("corrected dataset is empty; returning the input model unchanged")
        return model, []
    baseline = dev_entity_f1(model, dev, dev_layer)
    tuned = model.copy()
    tuned.metadata["stage"] = "detail"
    tuned, history = fit(tuned, corrected, dev, config,
                         train_layer=corrected_layer, dev_layer=dev_layer)
    if history and max(history) < baseline:
        log.warning(
            "detail fine-tuning never improved on the input model "
            "(best %.4f < baseline %.4f); keeping input parameters",
            max(history), baseline,
        )
        kept = model.copy()
        kept.metadata["stage"] = "detail"
        return kept, history
    return tuned, history


def distill(
    teacher: CrfModel,
    unlabeled: Sequence[Sentence],
    max_len: int = DEFAULT_DISTILL_MAX_LEN,
) -> tuple[Dataset, int]:
    """Hard-label the corpus with the teacher's decode; returns (dataset, skip count)."""
    kept: list[Sentence] = []
    pseudo: dict[str, list[Span]] = {}
    skipped = 0
    for sentence in unlabeled:
        if sentence.length > max_len:
            skipped += 1
            continue
        kept.append(sentence)
        pseudo[sentence.id] = teacher.predict_spans(sentence)
    dataset = Dataset(kept)
    dataset.add_layer(LAYER_PSEUDO, pseudo)
    if skipped:
        log.info("distill skipped %d sentences longer than %d", skipped, max_len)
    return dataset, skipped


def train_student(
    pseudo: Dataset,
    dev: Dataset,
    config: TrainConfig,
    scheme: LabelScheme,
    emitter_config: EmitterConfig = STUDENT_CONFIG,
    pseudo_layer: str = LAYER_PSEUDO,
    dev_layer: str = LAYER_GOLD,
) -> tuple[CrfModel, list[float]]:
    """Train a fresh (smaller) model on the teacher's pseudo labels."""
    if not pseudo.sentences:
        raise DataError("pseudo-labeled dataset is empty")
    student = CrfModel.fresh(scheme, emitter_config,
                             metadata={"train_seed": config.seed, "stage": "student"})
    return fit(student, pseudo, dev, config, train_layer=pseudo_layer, dev_layer=dev_layer)


# --- declarative end-to-end run ---


@dataclass
class PipelineConfig:
    """Declarative configuration for an end-to-end run."""

    workdir: Path
    seed: int = 0
    labels: tuple[str, ...] = ("COM",)
    synth: SynthConfig | None = None
    data: dict[str, Path] = field(default_factory=dict)
    model: EmitterConfig = TEACHER_CONFIG
    student: EmitterConfig = STUDENT_CONFIG
    outline: TrainConfig = field(default_factory=TrainConfig)
    detail: TrainConfig | None = None
    student_train: TrainConfig | None = None
    corrections_source: str = "oracle"
    corrections_store: Path | None = None
    distill_max_len: int = DEFAULT_DISTILL_MAX_LEN
    bench_warmup: int = 1
    bench_repeats: int = 16

    def __post_init__(self) -> None:
        self.workdir = Path(self.workdir)
        if self.corrections_source not in ("oracle", "store"):
            raise ConfigError(f"corrections source must be oracle or store, got {self.corrections_source!r}")
        if self.synth is None and not self.data:
            raise ConfigError("config needs either a synth section or a data section")
        if self.detail is None:
            self.detail = self.outline.detail_variant()
        if self.student_train is None:
            self.student_train = replace(self.outline)

    @classmethod
    def from_dict(cls, obj: Mapping, base_dir: str | Path = ".") -> "PipelineConfig":
        base = Path(base_dir)
        obj = dict(obj)
        known = {"workdir", "seed", "labels", "synth", "data", "model", "student",
                 "train", "corrections", "distill", "bench"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        seed = int(obj.get("seed", 0))
        workdir = base / obj.get("workdir", "pipeline-out")

        synth_cfg = None
        if "synth" in obj:
            synth_dict = dict(obj["synth"] or {})
            synth_dict.setdefault("seed", seed)
            synth_cfg = SynthConfig.from_dict(synth_dict)

        data = {k: base / v for k, v in (obj.get("data") or {}).items()}

        def emitter_from(section, default: EmitterConfig) -> EmitterConfig:
            if section is None:
                return default
            if isinstance(section, str):
                return _preset(section)
            section = dict(section)
            preset = _preset(section.pop("preset")) if "preset" in section else default
            return EmitterConfig(
                kind="hashed",
                window=int(section.pop("window", preset.window)),
                hash_dim=int(section.pop("hash_dim", preset.hash_dim)),
                seed=int(section.pop("seed", preset.seed)),
            )

        def train_from(section, default: TrainConfig | None) -> TrainConfig | None:
            if section is None:
                return default
            section = dict(section)
            section.setdefault("seed", seed)
            known = set(TrainConfig.__dataclass_fields__)
            unknown = set(section) - known
            if unknown:
                raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
            return TrainConfig(**section)

        train_section = dict(obj.get("train") or {})
        bad_stages = set(train_section) - {"outline", "detail", "student"}
        if bad_stages:
            raise ConfigError(f"unknown train stages: {sorted(bad_stages)}")
        outline = train_from(train_section.get("outline"), TrainConfig(seed=seed))
        corrections = dict(obj.get("corrections") or {"source": "oracle"})
        bench = dict(obj.get("bench") or {})
        return cls(
            workdir=workdir,
            seed=seed,
            labels=tuple(obj.get("labels", ("COM",))),
            synth=synth_cfg,
            data=data,
            model=emitter_from(obj.get("model"), TEACHER_CONFIG),
            student=emitter_from(obj.get("student"), STUDENT_CONFIG),
            outline=outline,
            detail=train_from(train_section.get("detail"), None),
            student_train=train_from(train_section.get("student"), None),
            corrections_source=str(corrections.get("source", "oracle")),
            corrections_store=(base / corrections["path"]) if "path" in corrections else None,
            distill_max_len=int((obj.get("distill") or {}).get("max_len", DEFAULT_DISTILL_MAX_LEN)),
            bench_warmup=int(bench.get("warmup", 1)),
            bench_repeats=int(bench.get("repeats", 16)),
        )

    def fingerprint(self) -> str:
        blob = {
            "seed": self.seed,
            "labels": list(self.labels),
            "synth": None if self.synth is None else self.synth.__dict__,
            "data": {k: str(v) for k, v in self.data.items()},
            "model": self.model.to_json(),
            "student": self.student.to_json(),
            "outline": self.outline.__dict__,
            "detail": self.detail.__dict__,
            "student_train": self.student_train.__dict__,
            "corrections_source": self.corrections_source,
            "corrections_store": str(self.corrections_store) if self.corrections_store else None,
            "distill_max_len": self.distill_max_len,
        }
        canonical = json.dumps(blob, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _preset(name: str) -> EmitterConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown emitter preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class PipelineState:
    """Last completed stage plus artifact paths and per-stage metrics."""

    stage: str
    artifacts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    config_fingerprint: str = ""
    seed: int = 0

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps({
            "stage": self.stage,
            "artifacts": self.artifacts,
            "metrics": self.metrics,
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
        }, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineState":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("stage") not in STAGES:
            raise ParseError(f"unknown pipeline stage {obj.get('stage')!r}")
        return cls(
            stage=obj["stage"],
            artifacts=dict(obj.get("artifacts", {})),
            metrics=dict(obj.get("metrics", {})),
            config_fingerprint=str(obj.get("config_fingerprint", "")),
            seed=int(obj.get("seed", 0)),
        )


def run_pipeline(
    config: PipelineConfig,
    resume: bool = True,
    progress: Callable[[str], None] | None = None,
) -> PipelineState:
    """Run (or resume) the whole workflow; returns the final state.

    Stages run in the fixed order outline -> selecting -> correcting ->
    detail -> distilling -> done.  Each stage persists its artifacts and the
    state file before the next one starts, so re-running after an
    interruption picks up where it left off and reproduces identical
    artifacts (fixed seeds, single-threaded updates).
    """
    say = progress or (lambda msg: log.info("%s", msg))
    workdir = config.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    state_path = workdir / "pipeline_state.json"
    fingerprint = config.fingerprint()

    if resume and state_path.exists():
        state = PipelineState.load(state_path)
        if state.config_fingerprint != fingerprint:
            raise ConfigError(
                "existing pipeline state was produced by a different configuration; "
                "use a fresh workdir or disable resume"
            )
        say(f"resuming after completed stage {state.stage!r}")
    else:
        state = PipelineState(stage="", config_fingerprint=fingerprint, seed=config.seed)

    scheme = LabelScheme(config.labels)
    paths = _data_paths(config, say)
    state.artifacts.update({k: str(v) for k, v in paths.items()})

    def completed(stage: str) -> bool:
        return state.stage in STAGES and STAGES.index(state.stage) >= STAGES.index(stage)

    def finish(stage: str) -> None:
        state.stage = stage
        state.save(state_path)
        say(f"stage {stage} complete")

    gold = load_dataset(paths["gold"])
    coarse = load_dataset(paths["coarse"])
    dev = load_dataset(paths["dev"])
    test = load_dataset(paths["test"])

    outline_path = workdir / "outline.model"
    store_path = config.corrections_store or (workdir / "disagreements.jsonl")
    corrected_path = workdir / "corrected.jsonl"
    detail_path = workdir / "detail.model"
    pseudo_path = workdir / "pseudo.jsonl"
    student_path = workdir / "student.model"

    if not completed("outline"):
        say("outline: training on the coarse layer")
        model, history = outline_train(coarse, dev, config.outline, scheme, config.model)
        save_model(model, outline_path)
        state.artifacts["outline_model"] = str(outline_path)
        state.metrics["outline"] = {"dev_f1_history": history}
        finish("outline")

    if not completed("selecting"):
        say("selecting: decoding the coarse dataset for disagreements")
        model = load_model(outline_path)
        records = select_disagreements(model, coarse)
        if store_path.exists():
            store_path.unlink()
        append_records(store_path, records)
        state.artifacts["disagreements"] = str(store_path)
        state.metrics["selecting"] = {"records": len(records)}
        finish("selecting")

    if not completed("correcting"):
        records = list(load_store(store_path).values())
        pending = [r for r in records if r.status == STATUS_PENDING]
        if config.corrections_source == "oracle":
            say(f"correcting: resolving {len(pending)} records against gold")
            resolved = oracle_corrections(pending, gold)
            append_records(store_path, resolved)
            records = list(load_store(store_path).values())
        elif pending:
            raise DataError(
                f"{len(pending)} disagreement records are still pending; "
                f"run the review server over {store_path} and re-run the pipeline"
            )
        corrected = apply_corrections(coarse, queue_order(records))
        save_dataset(corrected, corrected_path)
        state.artifacts["corrected"] = str(corrected_path)
        state.metrics["correcting"] = {
            "corrected": sum(r.status == STATUS_CORRECTED for r in records),
            "skipped": sum(r.status == STATUS_SKIPPED for r in records),
        }
        finish("correcting")

    if not completed("detail"):
        say("detail: fine-tuning on corrected disagreements")
        model = load_model(outline_path)
        corrected = load_dataset(corrected_path)
        tuned, history = detail_train(model, corrected, dev, config.detail)
        save_model(tuned, detail_path)
        state.artifacts["detail_model"] = str(detail_path)
        state.metrics["detail"] = {"dev_f1_history": history}
        finish("detail")

    if not completed("distilling"):
        say("distilling: pseudo-labeling the corpus and training the student")
        teacher = load_model(detail_path)
        pseudo, skipped = distill(teacher, coarse.sentences, config.distill_max_len)
        save_dataset(pseudo, pseudo_path)
        student, history = train_student(pseudo, dev, config.student_train, scheme,
                                         config.student)
        save_model(student, student_path)
        state.artifacts["pseudo"] = str(pseudo_path)
        state.artifacts["student_model"] = str(student_path)
        state.metrics["distilling"] = {"dev_f1_history": history, "skipped": skipped}
        finish("distilling")

    if not completed("done"):
        say("evaluating all stages on the test split")
        state.metrics["test"] = _final_evaluation(config, paths, test, workdir, state)
        finish("done")

    return state


def _data_paths(config: PipelineConfig, say: Callable[[str], None]) -> dict[str, Path]:
    if config.synth is not None:
        datadir = config.workdir / "data"
        expected = [datadir / name for name in
                    ("gold.jsonl", "coarse.jsonl", "dev.jsonl", "test.jsonl", "dictionary.txt")]
        if not all(p.exists() for p in expected):
            say("generating the synthetic corpus")
            write_corpus(gen_corpus(config.synth), datadir)
        return {
            "gold": datadir / "gold.jsonl",
            "coarse": datadir / "coarse.jsonl",
            "dev": datadir / "dev.jsonl",
            "test": datadir / "test.jsonl",
            "dictionary": datadir / "dictionary.txt",
        }
    required = {"gold", "coarse", "dev", "test"}
    missing = required - set(config.data)
    if missing:
        raise ConfigError(f"data section is missing {sorted(missing)}")
    return dict(config.data)


def _final_evaluation(
    config: PipelineConfig,
    paths: Mapping[str, Path],
    test: Dataset,
    workdir: Path,
    state: PipelineState,
) -> dict:
    gold_layer = test.layer(LAYER_GOLD)
    runs: list[RunRecord] = []
    summary: dict = {}

    if "dictionary" in paths and Path(paths["dictionary"]).exists():
        dictionary = NameDictionary.load(paths["dictionary"])
        if len(dictionary):
            matcher = build_matcher(dictionary)
            predicted = {s.id: matcher.match(s.text) for s in test.sentences}
            metrics = entity_prf(predicted, gold_layer)
            runs.append(RunRecord("gazetteer", metrics=metrics))
            summary["gazetteer"] = metrics.to_json()

    models = {}
    for name, artifact in (("outline", "outline_model"), ("detail", "detail_model"),
                           ("student", "student_model")):
        model = load_model(state.artifacts[artifact])
        models[name] = model
        predicted = {s.id: model.predict_spans(s) for s in test.sentences}
        metrics = entity_prf(predicted, gold_layer)
        runs.append(RunRecord(name, metrics=metrics))
        summary[name] = metrics.to_json()

    # Teacher/student throughput: alternate three rounds per model and keep
    # the median rate, so one transient stall cannot skew the comparison.
    benches: dict[str, list] = {"detail": [], "student": []}
    for _ in range(3):
        for name in ("detail", "student"):
            benches[name].append(throughput_bench(
                models[name], test.sentences, warmup=config.bench_warmup,
                model_id=name, repeats=config.bench_repeats,
            ))
    medians = {}
    for name, reports in benches.items():
        reports.sort(key=lambda r: r.sentences_per_second)
        medians[name] = reports[len(reports) // 2]
        run = next(r for r in runs if r.name == name)
        run.bench = medians[name]
        summary[name]["sentences_per_second"] = medians[name].sentences_per_second
    summary["distill_speedup"] = (
        medians["student"].sentences_per_second / medians["detail"].sentences_per_second
    )

    report_path = workdir / "report.jsonl"
    write_report(runs, report_path)
    render_figures(runs, workdir / "figures")
    state.artifacts["report"] = str(report_path)
    state.artifacts["figures"] = str(workdir / "figures")
    return summary
