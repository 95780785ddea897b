"""Entity-level precision/recall/F1 and decode-throughput benchmarking."""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Dataset, Sentence, Span
from .crf import CrfModel
from .errors import EmptyCorpusError, IdMismatchError


@dataclass(frozen=True)
class EntityMetrics:
    """Micro-averaged exact-span counts and the derived P/R/F1.

    A predicted span is a true positive iff an identical (start, end, label)
    span exists in gold for the same sentence.  Zero denominators score 0.
    """

    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_json(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    def __add__(self, other: "EntityMetrics") -> "EntityMetrics":
        return EntityMetrics(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )


def entity_prf(
    predicted: Mapping[str, Sequence[Span]],
    gold: Mapping[str, Sequence[Span]],
) -> EntityMetrics:
    """Corpus-wide exact-span micro metrics over two layers keyed by sentence id."""
    if set(predicted) != set(gold):
        missing = set(gold) ^ set(predicted)
        raise IdMismatchError(f"layers cover different sentence ids, e.g. {sorted(missing)[:3]}")
    tp = fp = fn = 0
    for sid, pred_spans in predicted.items():
        pred_set = set(pred_spans)
        gold_set = set(gold[sid])
        tp += len(pred_set & gold_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    return EntityMetrics(tp, fp, fn)


def dataset_prf(predicted: Dataset, pred_layer: str, gold: Dataset, gold_layer: str) -> EntityMetrics:
    return entity_prf(predicted.layer(pred_layer), gold.layer(gold_layer))


@dataclass(frozen=True)
class BenchReport:
    """Decode throughput over a corpus; wall time covers decoding only."""

    model_id: str
    corpus_sentences: int
    corpus_characters: int
    wall_time: float
    sentences_per_second: float
    characters_per_second: float
    decode_checksum: str
    threads: int = 1
    parallel_sentences_per_second: float | None = None

    def to_json(self) -> dict:
        out = {
            "model_id": self.model_id,
            "corpus_sentences": self.corpus_sentences,
            "corpus_characters": self.corpus_characters,
            "wall_time": self.wall_time,
            "sentences_per_second": self.sentences_per_second,
            "characters_per_second": self.characters_per_second,
            "decode_checksum": self.decode_checksum,
            "threads": self.threads,
        }
        if self.parallel_sentences_per_second is not None:
            out["parallel_sentences_per_second"] = self.parallel_sentences_per_second
        return out


def _decode_checksum(decodes: Sequence[tuple[str, ...]]) -> str:
    digest = hashlib.sha256()
    for tags in decodes:
        digest.update(",".join(tags).encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def _run_decode(model: CrfModel, corpus: Sequence[Sentence]) -> str:
    """One full decode pass; returns a checksum of the raw decode output."""
    from nerpipe.emitter import FeatureEmitter

    if isinstance(model.emitter, FeatureEmitter):
        paths, offsets = model.decode_batch(corpus)
        digest = hashlib.sha256(offsets.tobytes())
        digest.update(paths.tobytes())
        return digest.hexdigest()
    return _decode_checksum([model.decode(s) for s in corpus])


def throughput_bench(
    model: CrfModel,
    corpus: Sequence[Sentence],
    warmup: int = 1,
    model_id: str = "model",
    threads: int = 1,
    repeats: int = 1,
) -> BenchReport:
    """Time ``repeats`` decode passes over the corpus after ``warmup`` untimed ones.

    Rates are decoded-sentences (or characters) per second of wall time; on
    small corpora raise ``repeats`` so the timed region dwarfs OS noise.
    The timed passes are single-threaded; with ``threads > 1`` an additional
    N-way pass over corpus shards is timed and reported alongside.
    """
    if not corpus:
        raise EmptyCorpusError("benchmark corpus is empty")
    repeats = max(repeats, 1)
    for _ in range(max(warmup, 0)):
        _run_decode(model, corpus)

    begin = time.perf_counter()
    for _ in range(repeats):
        checksum = _run_decode(model, corpus)
    wall = time.perf_counter() - begin

    parallel_rate = None
    if threads > 1:
        shards = [corpus[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            begin = time.perf_counter()
            list(pool.map(lambda shard: _run_decode(model, shard), shards))
            parallel_rate = len(corpus) / max(time.perf_counter() - begin, 1e-9)

    wall = max(wall, 1e-9)
    characters = sum(s.length for s in corpus)
    return BenchReport(
        model_id=model_id,
        corpus_sentences=len(corpus),
        corpus_characters=characters,
        wall_time=wall,
        sentences_per_second=len(corpus) * repeats / wall,
        characters_per_second=characters * repeats / wall,
        decode_checksum=checksum,
        threads=threads,
        parallel_sentences_per_second=parallel_rate,
    )
