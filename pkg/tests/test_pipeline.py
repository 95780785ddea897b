from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from conftest import random_model
from nerpipe import pipeline as pl
from nerpipe.corpus import (
    LAYER_COARSE,
    LAYER_CORRECTED,
    LAYER_GOLD,
    LAYER_PSEUDO,
    Dataset,
    LabelScheme,
    Sentence,
    Span,
)
from nerpipe.crf import CrfModel, TrainConfig, fit
from nerpipe.emitter import EmitterConfig
from nerpipe.errors import (
    ConfigError,
    DataError,
    StoreCorruptionError,
    UnknownSentenceError,
)
from nerpipe.synth import SynthConfig


@pytest.fixture
def coarse_dataset(scheme):
    ds = Dataset([
        Sentence("s1", "aaXXbb"),
        Sentence("s2", "ccYYdd"),
        Sentence("s3", "nothing"),
    ])
    ds.add_layer(LAYER_COARSE, {
        "s1": [Span(2, 4)],
        "s2": [Span(2, 4)],
        "s3": [],
    })
    return ds


def record(sid="s1", diff=(0, 1), status=pl.STATUS_PENDING, corrected=None, text="aaXXbb"):
    return pl.DisagreementRecord(
        sentence_id=sid, text=text,
        coarse_spans=[Span(2, 4)], predicted_spans=[],
        diff_positions=list(diff), status=status,
        corrected_spans=corrected,
    )


class TestDisagreementRecord:
    def test_requires_diff_positions(self):
        with pytest.raises(DataError):
            record(diff=())

    def test_corrected_iff_spans(self):
        with pytest.raises(DataError):
            record(status=pl.STATUS_CORRECTED)
        with pytest.raises(DataError):
            record(status=pl.STATUS_PENDING, corrected=[Span(0, 1)])

    def test_json_round_trip(self):
        rec = record(status=pl.STATUS_CORRECTED, corrected=[Span(2, 4)])
        assert pl.DisagreementRecord.from_json(rec.to_json()) == rec


class TestStore:
    def test_append_and_replay(self, tmp_path):
        path = tmp_path / "store.jsonl"
        pl.append_records(path, [record("s1"), record("s2")])
        pl.append_records(path, [record("s1", status=pl.STATUS_CORRECTED,
                                        corrected=[Span(0, 2)])])
        records = pl.load_store(path)
        assert records["s1"].status == pl.STATUS_CORRECTED
        assert records["s1"].corrected_spans == [Span(0, 2)]
        assert records["s2"].status == pl.STATUS_PENDING

    def test_partial_trailing_line_tolerated(self, tmp_path):
        path = tmp_path / "store.jsonl"
        pl.append_records(path, [record("s1")])
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"sentence_id": "s2", "text": "半')  # crash mid-append
        records = pl.load_store(path)
        assert set(records) == {"s1"}

    def test_mid_file_corruption_raises(self, tmp_path):
        path = tmp_path / "store.jsonl"
        pl.append_records(path, [record("s1")])
        with open(path, "a", encoding="utf-8") as fh:
            fh.write("{broken}\n")
        pl.append_records(path, [record("s2")])
        with pytest.raises(StoreCorruptionError):
            pl.load_store(path)

    def test_queue_order(self):
        records = [record("s1", diff=(0,)), record("s2", diff=(0, 1, 2, 3, 4)),
                   record("s3", diff=(0, 1))]
        ordered = pl.queue_order(records)
        assert [r.sentence_id for r in ordered] == ["s2", "s3", "s1"]


class TestSelectDisagreements:
    def test_perfect_model_selects_nothing(self, scheme, coarse_dataset, monkeypatch):
        model = random_model(scheme, np.random.default_rng(0))
        spans_by_id = coarse_dataset.layer(LAYER_COARSE)

        from nerpipe.corpus import spans_to_tags
        monkeypatch.setattr(
            CrfModel, "decode",
            lambda self, s: spans_to_tags(s.length, spans_by_id[s.id], scheme),
        )
        assert pl.select_disagreements(model, coarse_dataset) == []

    def test_diff_positions_and_order(self, scheme, coarse_dataset, monkeypatch):
        def fake_decode(self, sentence):
            if sentence.id == "s1":
                return ("O",) * sentence.length  # differs at coarse span positions 2,3
            if sentence.id == "s3":
                return ("B-COM",) + ("I-COM",) * (sentence.length - 1)  # differs everywhere
            from nerpipe.corpus import spans_to_tags
            return spans_to_tags(sentence.length, coarse_dataset.spans(LAYER_COARSE, sentence.id), scheme)

        monkeypatch.setattr(CrfModel, "decode", fake_decode)
        model = random_model(scheme, np.random.default_rng(0))
        records = pl.select_disagreements(model, coarse_dataset)
        assert [r.sentence_id for r in records] == ["s3", "s1"]
        assert records[1].diff_positions == [2, 3]
        assert records[0].diff_positions == list(range(7))
        assert all(r.status == pl.STATUS_PENDING for r in records)


class TestApplyCorrections:
    def test_corrected_spans_replace(self, coarse_dataset):
        rec = record("s1", status=pl.STATUS_CORRECTED, corrected=[Span(0, 2)])
        out = pl.apply_corrections(coarse_dataset, [rec])
        assert out.ids() == ["s1"]
        assert out.spans(LAYER_CORRECTED, "s1") == (Span(0, 2),)

    def test_skipped_keeps_coarse(self, coarse_dataset):
        rec = record("s2", status=pl.STATUS_SKIPPED)
        out = pl.apply_corrections(coarse_dataset, [rec])
        assert out.spans(LAYER_CORRECTED, "s2") == (Span(2, 4),)

    def test_pending_rejected(self, coarse_dataset):
        with pytest.raises(DataError):
            pl.apply_corrections(coarse_dataset, [record("s1")])

    def test_unknown_sentence(self, coarse_dataset):
        rec = record("zz", status=pl.STATUS_SKIPPED)
        with pytest.raises(UnknownSentenceError):
            pl.apply_corrections(coarse_dataset, [rec])

    def test_output_keeps_dataset_order(self, coarse_dataset):
        recs = [record("s2", status=pl.STATUS_SKIPPED), record("s1", status=pl.STATUS_SKIPPED)]
        out = pl.apply_corrections(coarse_dataset, recs)
        assert out.ids() == ["s1", "s2"]


class TestOracleCorrections:
    def test_resolves_from_gold(self, coarse_dataset):
        gold = Dataset(list(coarse_dataset.sentences))
        gold.add_layer(LAYER_GOLD, {"s1": [Span(0, 3)], "s2": [], "s3": []})
        resolved = pl.oracle_corrections([record("s1")], gold)
        assert resolved[0].status == pl.STATUS_CORRECTED
        assert resolved[0].corrected_spans == [Span(0, 3)]
        assert resolved[0].annotator_id == "oracle"


def train_toy_model(scheme, ds, seed=0):
    model = CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=512, seed=2))
    config = TrainConfig(learning_rate=0.3, max_epochs=8, patience=8, seed=seed)
    model, _ = fit(model, ds, ds, config, train_layer=LAYER_GOLD, dev_layer=LAYER_GOLD)
    return model


@pytest.fixture(scope="module")
def toy_corpus():
    scheme = LabelScheme(["COM"])
    rng = np.random.default_rng(5)
    sentences, gold = [], {}
    for i in range(30):
        prefix = "".join(rng.choice(list("abcd"), size=int(rng.integers(1, 4))))
        entity = "".join(rng.choice(list("XY"), size=int(rng.integers(2, 5))))
        text = prefix + entity + "end"
        sid = f"t{i:03d}"
        sentences.append(Sentence(sid, text))
        gold[sid] = [Span(len(prefix), len(prefix) + len(entity))]
    ds = Dataset(sentences)
    ds.add_layer(LAYER_GOLD, gold)
    return scheme, ds


class TestDetailTrain:
    def test_empty_corrected_returns_input(self, toy_corpus):
        scheme, ds = toy_corpus
        model = train_toy_model(scheme, ds)
        out, history = pl.detail_train(model, Dataset([]), ds, TrainConfig())
        assert out is model
        assert history == []

    def test_zero_lr_decodes_identically(self, toy_corpus):
        scheme, ds = toy_corpus
        model = train_toy_model(scheme, ds)
        corrected = Dataset(list(ds.sentences))
        corrected.add_layer(LAYER_CORRECTED, dict(ds.layer(LAYER_GOLD)))
        config = TrainConfig(learning_rate=0.0, max_epochs=3, patience=1)
        out, _ = pl.detail_train(model, corrected, ds, config)
        for s in ds.sentences:
            assert out.decode(s) == model.decode(s)

    def test_input_model_untouched(self, toy_corpus):
        scheme, ds = toy_corpus
        model = train_toy_model(scheme, ds)
        before = model.snapshot()
        corrected = Dataset(list(ds.sentences))
        corrected.add_layer(LAYER_CORRECTED, dict(ds.layer(LAYER_GOLD)))
        pl.detail_train(model, corrected, ds, TrainConfig(learning_rate=0.05, max_epochs=2, patience=2))
        for name, arr in model.parameters().items():
            np.testing.assert_array_equal(arr, before[name])


class TestDistill:
    def test_deterministic_and_skips(self, toy_corpus):
        scheme, ds = toy_corpus
        model = train_toy_model(scheme, ds)
        long_sentence = Sentence("long", "x" * 40)
        corpus = list(ds.sentences) + [long_sentence]
        first, skipped1 = pl.distill(model, corpus, max_len=30)
        second, skipped2 = pl.distill(model, corpus, max_len=30)
        assert skipped1 == skipped2 == 1
        assert len(first) == len(corpus) - 1
        assert first.layer(LAYER_PSEUDO) == second.layer(LAYER_PSEUDO)

    def test_empty_corpus(self, toy_corpus):
        scheme, ds = toy_corpus
        model = train_toy_model(scheme, ds)
        out, skipped = pl.distill(model, [])
        assert len(out) == 0 and skipped == 0

    def test_student_requires_data(self, toy_corpus):
        scheme, ds = toy_corpus
        with pytest.raises(DataError):
            pl.train_student(Dataset([]), ds, TrainConfig(), scheme)


def pipeline_config(tmp_path, seed=0, **synth_overrides) -> pl.PipelineConfig:
    synth = dict(n_sentences=300, n_names=40, dict_coverage=0.6,
                 boundary_noise=0.05, seed=seed)
    synth.update(synth_overrides)
    return pl.PipelineConfig(
        workdir=tmp_path,
        seed=seed,
        synth=SynthConfig(**synth),
        model=EmitterConfig(window=2, hash_dim=2**14, seed=1),
        student=EmitterConfig(window=1, hash_dim=2**12, seed=1),
        outline=TrainConfig(learning_rate=0.2, max_epochs=4, patience=2, seed=seed),
    )


# Deterministic artifacts must reproduce byte-for-byte across resumed runs;
# the report also carries measured wall-clock rates, which never can.
DETERMINISTIC_ARTIFACTS = (
    "outline.model", "detail.model", "student.model", "corrected.jsonl",
    "pseudo.jsonl", "disagreements.jsonl",
    "data/gold.jsonl", "data/coarse.jsonl", "data/dev.jsonl", "data/test.jsonl",
    "data/dictionary.txt", "figures/metrics.png",
)
TIMED_ARTIFACTS = ("report.jsonl", "figures/throughput.png")


def normalized_report(path: Path) -> list[dict]:
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    for row in rows:
        row["sentences_per_second"] = None
        row["characters_per_second"] = None
    return rows


class TestRunPipeline:
    def test_end_to_end_and_resume_bit_identical(self, tmp_path):
        full = pipeline_config(tmp_path / "full")
        state = pl.run_pipeline(full)
        assert state.stage == "done"
        for name in DETERMINISTIC_ARTIFACTS + TIMED_ARTIFACTS:
            assert (tmp_path / "full" / name).exists(), name

        # Replay stage by stage: stop after each stage, then restart.
        partial = pipeline_config(tmp_path / "partial")
        for n_stages in range(1, len(pl.STAGES) + 1):
            state = pl.run_pipeline(partial, resume=True)
            if state.stage == "done":
                break
        assert state.stage == "done"
        for name in DETERMINISTIC_ARTIFACTS:
            a = (tmp_path / "full" / name).read_bytes()
            b = (tmp_path / "partial" / name).read_bytes()
            assert a == b, f"{name} differs after resume"
        assert normalized_report(tmp_path / "full" / "report.jsonl") == \
            normalized_report(tmp_path / "partial" / "report.jsonl")

    def test_interrupted_mid_stage_resumes(self, tmp_path):
        config = pipeline_config(tmp_path / "w")
        calls = []
        original = pl.detail_train

        def boom(*args, **kwargs):
            calls.append(1)
            raise KeyboardInterrupt

        import nerpipe.pipeline as module
        module.detail_train = boom
        try:
            with pytest.raises(KeyboardInterrupt):
                pl.run_pipeline(config)
        finally:
            module.detail_train = original
        state = pl.PipelineState.load(tmp_path / "w" / "pipeline_state.json")
        assert state.stage == "correcting"
        state = pl.run_pipeline(config, resume=True)
        assert state.stage == "done"

    def test_config_change_refuses_resume(self, tmp_path):
        config = pipeline_config(tmp_path / "w")
        pl.run_pipeline(config)
        changed = pipeline_config(tmp_path / "w")
        changed.outline = TrainConfig(learning_rate=0.11, max_epochs=4, patience=2)
        with pytest.raises(ConfigError):
            pl.run_pipeline(changed, resume=True)

    def test_metrics_recorded(self, tmp_path):
        config = pipeline_config(tmp_path / "w")
        state = pl.run_pipeline(config)
        test_metrics = state.metrics["test"]
        for run in ("gazetteer", "outline", "detail", "student"):
            assert "recall" in test_metrics[run]
        assert "distill_speedup" in test_metrics
        report = Path(state.artifacts["report"])
        rows = [json.loads(line) for line in report.read_text().splitlines()]
        assert [r["name"] for r in rows] == ["gazetteer", "outline", "detail", "student"]


class TestPipelineConfig:
    def test_from_dict_defaults(self, tmp_path):
        obj = {
            "workdir": "out",
            "seed": 3,
            "synth": {"n_sentences": 100, "n_names": 10},
            "model": {"preset": "teacher"},
            "train": {"outline": {"learning_rate": 0.4, "max_epochs": 2, "patience": 1}},
        }
        config = pl.PipelineConfig.from_dict(obj, base_dir=tmp_path)
        assert config.workdir == tmp_path / "out"
        assert config.synth.seed == 3
        assert config.model.window == 3
        assert config.detail.learning_rate == pytest.approx(0.04)
        assert config.student_train.learning_rate == pytest.approx(0.4)

    def test_needs_data_or_synth(self, tmp_path):
        with pytest.raises(ConfigError):
            pl.PipelineConfig(workdir=tmp_path)

    def test_unknown_train_key(self, tmp_path):
        obj = {"workdir": "o", "synth": {}, "train": {"outline": {"momentum": 0.9}}}
        with pytest.raises(ConfigError):
            pl.PipelineConfig.from_dict(obj, base_dir=tmp_path)

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError):
            pl.PipelineConfig.from_dict({"workdir": "o", "synth": {}, "trian": {}},
                                        base_dir=tmp_path)

    def test_bench_section(self, tmp_path):
        obj = {"workdir": "o", "synth": {}, "bench": {"warmup": 2, "repeats": 5}}
        config = pl.PipelineConfig.from_dict(obj, base_dir=tmp_path)
        assert config.bench_warmup == 2
        assert config.bench_repeats == 5
