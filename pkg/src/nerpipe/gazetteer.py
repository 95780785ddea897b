"""Gazetteer matching: name dictionaries, abbreviation rules, and corpus annotation.

The matcher is an Aho-Corasick automaton (character trie with failure
links), so a single left-to-right pass finds every occurrence of every
dictionary surface.  Span selection on top of the raw occurrences is
leftmost-longest: scan left to right, take the longest match starting at
each position, then skip past it.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence

from .corpus import DEFAULT_LABEL, LAYER_COARSE, Dataset, Sentence, Span
from .errors import EmptyDictionaryError, InvariantError, ParseError
from .fileio import atomic_write_text, iter_jsonl

log = logging.getLogger(__name__)

PROVENANCE_ORIGINAL = "original"
PROVENANCE_ABBREVIATION = "abbreviation"

MIN_SURFACE_LEN = 2


@dataclass(frozen=True, slots=True)
class DictEntry:
    surface: str
    label: str = DEFAULT_LABEL
    provenance: str = PROVENANCE_ORIGINAL


class NameDictionary:
    """A set of entity surface forms with labels and provenance.

    Surfaces are unique and at least ``min_surface_len`` characters long
    (short surfaces produce too many false positives).
    """

    def __init__(self, entries: Iterable[DictEntry], min_surface_len: int = MIN_SURFACE_LEN):
        self.min_surface_len = min_surface_len
        self.entries: list[DictEntry] = []
        self._by_surface: dict[str, DictEntry] = {}
        for entry in entries:
            if not entry.surface:
                raise InvariantError("empty dictionary surface")
            if len(entry.surface) < min_surface_len:
                raise InvariantError(
                    f"surface {entry.surface!r} shorter than min_surface_len={min_surface_len}"
                )
            if entry.surface in self._by_surface:
                raise InvariantError(f"duplicate surface {entry.surface!r}")
            self.entries.append(entry)
            self._by_surface[entry.surface] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, surface: str) -> bool:
        return surface in self._by_surface

    def label_of(self, surface: str) -> str:
        return self._by_surface[surface].label

    @classmethod
    def from_names(
        cls,
        names: Iterable[str],
        label: str = DEFAULT_LABEL,
        min_surface_len: int = MIN_SURFACE_LEN,
    ) -> "NameDictionary":
        return cls((DictEntry(n, label) for n in names), min_surface_len=min_surface_len)

    @classmethod
    def load(cls, path: str | Path, min_surface_len: int = MIN_SURFACE_LEN) -> "NameDictionary":
        """Read a dictionary file: one surface per line, optional tab-separated label.

        Lines starting with ``#`` are ignored; duplicate surfaces keep the
        first occurrence (a warning is logged).
        """
        entries: list[DictEntry] = []
        seen: set[str] = set()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) > 2:
                    raise ParseError(f"too many fields: {line!r}", line=lineno)
                surface = parts[0]
                label = parts[1] if len(parts) == 2 and parts[1] else DEFAULT_LABEL
                if surface in seen:
                    log.warning("%s:%d: duplicate surface %r ignored", path, lineno, surface)
                    continue
                seen.add(surface)
                entries.append(DictEntry(surface, label))
        return cls(entries, min_surface_len=min_surface_len)

    def save(self, path: str | Path) -> None:
        atomic_write_text(
            path,
            "".join(f"{e.surface}\t{e.label}\n" for e in self.entries),
        )

    def with_abbreviations(self, rules: Sequence["AbbreviationRule"]) -> "NameDictionary":
        """New dictionary extended with rule-generated abbreviations of every entry."""
        entries = list(self.entries)
        seen = set(self._by_surface)
        for entry in self.entries:
            for abbrev in generate_abbreviations(entry.surface, rules):
                if abbrev in seen or len(abbrev) < self.min_surface_len:
                    continue
                seen.add(abbrev)
                entries.append(DictEntry(abbrev, entry.label, PROVENANCE_ABBREVIATION))
        return NameDictionary(entries, min_surface_len=self.min_surface_len)


@dataclass(frozen=True, slots=True)
class AbbreviationRule:
    """Strip a fixed prefix or suffix, keeping at least ``min_remainder`` characters."""

    kind: str  # "strip-suffix" | "strip-prefix"
    pattern: str
    min_remainder: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("strip-suffix", "strip-prefix"):
            raise InvariantError(f"unknown abbreviation rule kind {self.kind!r}")
        if not self.pattern:
            raise InvariantError("abbreviation rule pattern must be non-empty")

    def apply(self, name: str) -> str | None:
        if self.kind == "strip-suffix":
            if not name.endswith(self.pattern):
                return None
            remainder = name[: -len(self.pattern)]
        else:
            if not name.startswith(self.pattern):
                return None
            remainder = name[len(self.pattern):]
        remainder = remainder.strip()
        if len(remainder) < self.min_remainder:
            return None
        return remainder


# Illustrative legal-form suffixes; real deployments supply their own rule list.
DEFAULT_ABBREVIATION_RULES = (
    AbbreviationRule("strip-suffix", " Co., Ltd."),
    AbbreviationRule("strip-suffix", " Inc."),
    AbbreviationRule("strip-suffix", " Corp"),
    AbbreviationRule("strip-suffix", " Ltd"),
    AbbreviationRule("strip-suffix", " Group"),
    AbbreviationRule("strip-suffix", " Holdings"),
    AbbreviationRule("strip-suffix", "股份有限公司"),
    AbbreviationRule("strip-suffix", "有限公司"),
    AbbreviationRule("strip-suffix", "集团"),
)


def generate_abbreviations(name: str, rules: Sequence[AbbreviationRule]) -> list[str]:
    """Apply each rule once to ``name``; deduplicated, never echoing the input."""
    out: list[str] = []
    seen: set[str] = set()
    for rule in rules:
        abbrev = rule.apply(name)
        if abbrev is None or abbrev == name or abbrev in seen:
            continue
        seen.add(abbrev)
        out.append(abbrev)
    return out


class Matcher:
    """Aho-Corasick automaton over all dictionary surfaces.

    Immutable after construction; safe for concurrent matching.
    """

    def __init__(self, dictionary: NameDictionary):
        if len(dictionary) == 0:
            raise EmptyDictionaryError("cannot build a matcher from an empty dictionary")
        self._dictionary = dictionary
        # goto[state] maps a character to the next state; state 0 is the root.
        self._goto: list[dict[str, int]] = [{}]
        self._depth: list[int] = [0]
        self._terminal: list[bool] = [False]
        for entry in dictionary.entries:
            self._insert(entry.surface)
        self._fail, self._out = self._build_links()

    def _insert(self, surface: str) -> None:
        state = 0
        for ch in surface:
            nxt = self._goto[state].get(ch)
            if nxt is None:
                nxt = len(self._goto)
                self._goto.append({})
                self._depth.append(self._depth[state] + 1)
                self._terminal.append(False)
                self._goto[state][ch] = nxt
            state = nxt
        self._terminal[state] = True

    def _build_links(self) -> tuple[list[int], list[tuple[int, ...]]]:
        """BFS over the trie assigning failure links and per-state match lengths."""
        n = len(self._goto)
        fail = [0] * n
        out: list[tuple[int, ...]] = [()] * n
        queue: deque[int] = deque()
        for state in self._goto[0].values():
            queue.append(state)
        while queue:
            state = queue.popleft()
            own = (self._depth[state],) if self._terminal[state] else ()
            out[state] = own + out[fail[state]]
            for ch, nxt in self._goto[state].items():
                queue.append(nxt)
                f = fail[state]
                while f and ch not in self._goto[f]:
                    f = fail[f]
                fail[nxt] = self._goto[f].get(ch, 0)
        return fail, out

    @property
    def num_states(self) -> int:
        return len(self._goto)

    def find_all(self, text: str) -> Iterator[tuple[int, int]]:
        """Yield every ``(start, end)`` occurrence of every surface, in end-then-length order."""
        state = 0
        for i, ch in enumerate(text):
            while state and ch not in self._goto[state]:
                state = self._fail[state]
            state = self._goto[state].get(ch, 0)
            for length in self._out[state]:
                yield i + 1 - length, i + 1

    def match(self, text: str) -> list[Span]:
        """Leftmost-longest non-overlapping spans, labeled via the dictionary."""
        if not text:
            return []
        longest = [0] * len(text)
        for start, end in self.find_all(text):
            if end - start > longest[start]:
                longest[start] = end - start
        spans: list[Span] = []
        i = 0
        n = len(text)
        while i < n:
            length = longest[i]
            if length:
                surface = text[i : i + length]
                spans.append(Span(i, i + length, self._dictionary.label_of(surface)))
                i += length
            else:
                i += 1
        return spans


def build_matcher(dictionary: NameDictionary) -> Matcher:
    return Matcher(dictionary)


class ExternalAnnotator(Protocol):
    """Anything that maps a sentence to candidate entity spans."""

    def annotate(self, sentence: Sentence) -> list[Span]: ...


class NullAnnotator:
    """Secondary annotator that never proposes anything."""

    def annotate(self, sentence: Sentence) -> list[Span]:
        return []


class ReplayAnnotator:
    """Replays precomputed spans from a JSON Lines file of {"id", "spans"} records."""

    def __init__(self, path: str | Path):
        self._spans: dict[str, list[Span]] = {}
        for lineno, obj in iter_jsonl(path):
            if not isinstance(obj, dict) or "id" not in obj or "spans" not in obj:
                raise ParseError("record must be an object with id and spans", line=lineno)
            self._spans[str(obj["id"])] = [Span.from_json(sp) for sp in obj["spans"]]

    def annotate(self, sentence: Sentence) -> list[Span]:
        return list(self._spans.get(sentence.id, []))


def annotate_corpus(
    sentences: Sequence[Sentence],
    matcher: Matcher,
    secondary: ExternalAnnotator | None = None,
    on_warning: Callable[[str], None] | None = None,
) -> Dataset:
    """Machine-annotate sentences into a ``coarse`` layer.

    Matcher spans always win; secondary spans are added only where they do
    not overlap any accepted span.  Secondary failures are reported per
    sentence and never abort the batch.
    """
    warn = on_warning or (lambda msg: log.warning("%s", msg))
    dataset = Dataset(list(sentences))
    dataset.layers[LAYER_COARSE] = {}
    for sentence in sentences:
        spans = matcher.match(sentence.text)
        if secondary is not None:
            try:
                proposed = secondary.annotate(sentence)
            except Exception as exc:  # noqa: BLE001 - annotator plug-ins are untrusted
                warn(f"secondary annotator failed on {sentence.id}: {exc}")
                proposed = []
            for extra in sorted(proposed):
                if extra.end > sentence.length:
                    warn(f"secondary span {extra} out of bounds on {sentence.id}; dropped")
                    continue
                if any(extra.overlaps(sp) for sp in spans):
                    continue
                spans.append(extra)
            spans.sort()
        dataset.set_spans(LAYER_COARSE, sentence.id, spans)
    return dataset
