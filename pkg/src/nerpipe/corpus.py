"""Sentences, spans, tag sequences, datasets, and their file formats.

All character indices are Unicode scalar-value indices (Python string
indices), never byte offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DataError,
    InvariantError,
    OverlapError,
    ParseError,
    RangeError,
    UnknownLabelError,
)
from .fileio import atomic_write_text, dump_json_line, iter_jsonl

DEFAULT_LABEL = "COM"
DEFAULT_DELIMITERS = ("。", "！", "？", "；", "\n")  # 。！？； newline

# Layer names used throughout the pipeline.
LAYER_GOLD = "gold"
LAYER_COARSE = "coarse"
LAYER_PREDICTED = "predicted"
LAYER_CORRECTED = "corrected"
LAYER_PSEUDO = "pseudo"

OUTSIDE_TAG = "O"

TagSequence = tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Sentence:
    """A unit of tagging: an id unique within its dataset plus raw text."""

    id: str
    text: str

    @property
    def length(self) -> int:
        return len(self.text)


@dataclass(frozen=True, slots=True, order=True)
class Span:
    """Half-open character interval ``[start, end)`` carrying an entity label."""

    start: int
    end: int
    label: str = DEFAULT_LABEL

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise RangeError(f"invalid span ({self.start}, {self.end})")

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "label": self.label}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Span":
        return cls(int(obj["start"]), int(obj["end"]), str(obj["label"]))


class LabelScheme:
    """Ordered entity labels and the BIO tag list they induce.

    Tag order is fixed: ``O`` first, then ``B-x, I-x`` per label in scheme
    order.  This ordering is part of every serialized interface (emission
    tables, model files), so it must stay deterministic.
    """

    def __init__(self, labels: Sequence[str] = (DEFAULT_LABEL,)):
        labels = tuple(labels)
        if not labels:
            raise InvariantError("label scheme needs at least one label")
        if len(set(labels)) != len(labels):
            raise InvariantError(f"duplicate labels: {labels}")
        for lab in labels:
            if not lab or any(ch.isspace() for ch in lab):
                raise InvariantError(f"bad label {lab!r}: empty or contains whitespace")
        self.labels = labels
        tags = [OUTSIDE_TAG]
        for lab in labels:
            tags.append(f"B-{lab}")
            tags.append(f"I-{lab}")
        self.tags = tuple(tags)
        self._tag_index = {t: i for i, t in enumerate(self.tags)}

    @property
    def num_tags(self) -> int:
        return len(self.tags)

    def tag_index(self, tag: str) -> int:
        try:
            return self._tag_index[tag]
        except KeyError:
            raise UnknownLabelError(f"tag {tag!r} not in scheme {self.labels}") from None

    def has_label(self, label: str) -> bool:
        return label in self.labels

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelScheme) and other.labels == self.labels

    def __hash__(self) -> int:
        return hash(self.labels)

    def __repr__(self) -> str:
        return f"LabelScheme({list(self.labels)})"


def split_sentences(
    text: str,
    delimiters: Sequence[str] = DEFAULT_DELIMITERS,
    id_prefix: str = "s",
) -> list[Sentence]:
    """Split text into sentences, keeping each delimiter attached to its sentence.

    Concatenation of the returned texts equals the input; a trailing chunk
    without a delimiter is kept as the final sentence.
    """
    delims = set(delimiters)
    pieces: list[str] = []
    buf: list[str] = []
    for ch in text:
        buf.append(ch)
        if ch in delims:
            pieces.append("".join(buf))
            buf.clear()
    if buf:
        pieces.append("".join(buf))
    return [Sentence(id=f"{id_prefix}{i:06d}", text=p) for i, p in enumerate(pieces)]


def _check_spans(length: int, spans: Sequence[Span], scheme: LabelScheme | None = None) -> tuple[Span, ...]:
    """Sort spans and enforce bounds/non-overlap (and labels when a scheme is given)."""
    ordered = tuple(sorted(spans))
    prev: Span | None = None
    for sp in ordered:
        if sp.end > length:
            raise RangeError(f"span ({sp.start}, {sp.end}) exceeds sentence length {length}")
        if scheme is not None and not scheme.has_label(sp.label):
            raise UnknownLabelError(f"label {sp.label!r} not in scheme {scheme.labels}")
        if prev is not None and sp.overlaps(prev):
            raise OverlapError(f"spans ({prev.start},{prev.end}) and ({sp.start},{sp.end}) overlap")
        prev = sp
    return ordered


def spans_to_tags(length: int, spans: Sequence[Span], scheme: LabelScheme) -> TagSequence:
    """Encode non-overlapping spans as a BIO tag sequence of the given length."""
    ordered = _check_spans(length, spans, scheme)
    tags = [OUTSIDE_TAG] * length
    for sp in ordered:
        tags[sp.start] = f"B-{sp.label}"
        for i in range(sp.start + 1, sp.end):
            tags[i] = f"I-{sp.label}"
    return tuple(tags)


def tags_to_spans(tags: Sequence[str]) -> list[Span]:
    """Decode a tag sequence into spans, repairing malformed input.

    A stray ``I-x`` with no preceding ``B-x``/``I-x`` is read as if it were
    ``B-x``; unknown tag strings are read as ``O``.  Inverse of
    :func:`spans_to_tags` on well-formed input.
    """
    spans: list[Span] = []
    start: int | None = None
    label: str | None = None

    def flush(end: int) -> None:
        nonlocal start, label
        if start is not None and label is not None:
            spans.append(Span(start, end, label))
        start, label = None, None

    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            flush(i)
            start, label = i, tag[2:]
        elif tag.startswith("I-"):
            if label != tag[2:]:
                flush(i)
                start, label = i, tag[2:]  # repair-on-read
        else:
            flush(i)
    flush(len(tags))
    return spans


@dataclass
class Dataset:
    """An ordered sentence list plus named span layers keyed by sentence id."""

    sentences: list[Sentence] = field(default_factory=list)
    layers: dict[str, dict[str, tuple[Span, ...]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._by_id = {s.id: s for s in self.sentences}
        if len(self._by_id) != len(self.sentences):
            raise InvariantError("duplicate sentence ids in dataset")

    def __len__(self) -> int:
        return len(self.sentences)

    def ids(self) -> list[str]:
        return [s.id for s in self.sentences]

    def sentence(self, sentence_id: str) -> Sentence:
        try:
            return self._by_id[sentence_id]
        except KeyError:
            raise DataError(f"unknown sentence id {sentence_id!r}") from None

    def has_sentence(self, sentence_id: str) -> bool:
        return sentence_id in self._by_id

    def spans(self, layer: str, sentence_id: str) -> tuple[Span, ...]:
        return self.layers.get(layer, {}).get(sentence_id, ())

    def layer(self, name: str) -> dict[str, tuple[Span, ...]]:
        """Full layer as a mapping covering every sentence id (missing ids -> ())."""
        if name not in self.layers:
            raise DataError(f"dataset has no layer {name!r}")
        got = self.layers[name]
        return {s.id: got.get(s.id, ()) for s in self.sentences}

    def set_spans(self, layer: str, sentence_id: str, spans: Sequence[Span]) -> None:
        if sentence_id not in self._by_id:
            raise InvariantError(f"layer {layer!r} references unknown sentence {sentence_id!r}")
        checked = _check_spans(self._by_id[sentence_id].length, spans)
        self.layers.setdefault(layer, {})[sentence_id] = checked

    def add_layer(self, name: str, spans_by_id: Mapping[str, Sequence[Span]]) -> None:
        self.layers.setdefault(name, {})
        for sid, spans in spans_by_id.items():
            self.set_spans(name, sid, spans)

    def validate(self) -> None:
        for name, by_id in self.layers.items():
            for sid, spans in by_id.items():
                if sid not in self._by_id:
                    raise InvariantError(f"layer {name!r} references unknown sentence {sid!r}")
                _check_spans(self._by_id[sid].length, spans)

    def subset(self, sentence_ids: Iterable[str]) -> "Dataset":
        """New dataset restricted to the given ids, keeping this dataset's order."""
        wanted = set(sentence_ids)
        sentences = [s for s in self.sentences if s.id in wanted]
        layers = {
            name: {sid: spans for sid, spans in by_id.items() if sid in wanted}
            for name, by_id in self.layers.items()
        }
        return Dataset(sentences, layers)


def _sentence_record(dataset: Dataset, sentence: Sentence, layer_names: Sequence[str]) -> dict:
    layers = {
        name: [sp.to_json() for sp in dataset.spans(name, sentence.id)]
        for name in layer_names
    }
    return {"id": sentence.id, "text": sentence.text, "layers": layers}


def save_dataset(
    dataset: Dataset,
    path: str | Path,
    format: str = "jsonl",
    column_layer: str | None = None,
) -> None:
    """Write a dataset; JSONL is canonical (sorted layers and spans, fixed key order)."""
    if format == "jsonl":
        layer_names = sorted(dataset.layers)
        lines = [
            dump_json_line(_sentence_record(dataset, s, layer_names))
            for s in dataset.sentences
        ]
        atomic_write_text(path, "".join(line + "\n" for line in lines))
    elif format == "column":
        if column_layer is None:
            if len(dataset.layers) != 1:
                raise DataError(
                    f"column format requires exactly one annotation layer, got {sorted(dataset.layers)}"
                )
            column_layer = next(iter(dataset.layers))
        scheme = LabelScheme(_collect_labels(dataset, column_layer))
        out: list[str] = []
        for s in dataset.sentences:
            tags = spans_to_tags(s.length, dataset.spans(column_layer, s.id), scheme)
            out.extend(f"{ch}\t{tag}\n" for ch, tag in zip(s.text, tags))
            out.append("\n")
        atomic_write_text(path, "".join(out))
    else:
        raise DataError(f"unknown dataset format {format!r}")


def _collect_labels(dataset: Dataset, layer: str) -> list[str]:
    spans_by_id = dataset.layers.get(layer, {})
    labels = sorted({sp.label for spans in spans_by_id.values() for sp in spans})
    return labels or [DEFAULT_LABEL]


def load_dataset(
    path: str | Path,
    format: str = "jsonl",
    repair: bool = False,
    column_layer: str = LAYER_GOLD,
) -> Dataset:
    """Load a dataset; raises ParseError with a line number on malformed input.

    With ``repair=True`` spans that are out of bounds or overlap an
    earlier-sorted span are dropped instead of raising InvariantError.
    """
    if format == "jsonl":
        return _load_jsonl(path, repair)
    if format == "column":
        return _load_column(path, column_layer)
    raise DataError(f"unknown dataset format {format!r}")


def _load_jsonl(path: str | Path, repair: bool) -> Dataset:
    sentences: list[Sentence] = []
    layers: dict[str, dict[str, tuple[Span, ...]]] = {}
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
            raise ParseError("record must be an object with id and text", line=lineno)
        sentence = Sentence(id=str(obj["id"]), text=str(obj["text"]))
        sentences.append(sentence)
        for name, raw_spans in (obj.get("layers") or {}).items():
            try:
                spans = [Span.from_json(sp) for sp in raw_spans]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad span in layer {name!r}: {exc}", line=lineno) from exc
            except RangeError as exc:
                if not repair:
                    raise InvariantError(f"line {lineno}: {exc}") from exc
                spans = _repair_load(raw_spans, sentence.length)
            try:
                checked = _check_spans(sentence.length, spans)
            except (RangeError, OverlapError) as exc:
                if not repair:
                    raise InvariantError(f"line {lineno}: {exc}") from exc
                checked = tuple(_repair_spans(spans, sentence.length))
            layers.setdefault(name, {})[sentence.id] = checked
    dataset = Dataset(sentences)
    for name, by_id in layers.items():
        dataset.layers[name] = by_id
    return dataset


def _repair_load(raw_spans: Sequence[Mapping], length: int) -> list[Span]:
    spans = []
    for sp in raw_spans:
        try:
            spans.append(Span.from_json(sp))
        except RangeError:
            continue
    return _repair_spans(spans, length)


def _repair_spans(spans: Sequence[Span], length: int) -> list[Span]:
    kept: list[Span] = []
    for sp in sorted(spans):
        if sp.end > length:
            continue
        if kept and sp.overlaps(kept[-1]):
            continue
        kept.append(sp)
    return kept


def _load_column(path: str | Path, layer: str) -> Dataset:
    sentences: list[Sentence] = []
    by_id: dict[str, tuple[Span, ...]] = {}
    chars: list[str] = []
    tags: list[str] = []

    def flush() -> None:
        if not chars:
            return
        sid = f"s{len(sentences):06d}"
        sentence = Sentence(id=sid, text="".join(chars))
        sentences.append(sentence)
        by_id[sid] = tuple(tags_to_spans(tags))
        chars.clear()
        tags.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise ParseError(f"expected 'token<TAB>tag', got {line!r}", line=lineno)
            token, tag = parts
            chars.extend(token)
            tags.append(tag)
            tags.extend(f"I-{tag[2:]}" if tag.startswith(("B-", "I-")) else OUTSIDE_TAG
                        for _ in range(len(token) - 1))
    flush()
    dataset = Dataset(sentences)
    dataset.layers[layer] = by_id
    return dataset
