"""Per-position, per-tag emission scores from hashed character-window features.

A :class:`FeatureEmitter` is a linear model over hashed local features:
character unigrams and bigrams inside a window around each position, plus a
position-parity feature.  Hashing uses a seeded splitmix64 mix over integer
codes, so feature extraction is deterministic across runs and platforms and
collisions are accepted silently, as usual for feature hashing.

External emission tables (scores produced offline by any encoder) plug into
the same interface through :class:`ExternalEmitter`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import dp
from .corpus import Dataset, LabelScheme, Sentence
from .errors import ParseError, RangeError, ShapeMismatchError
from .fileio import atomic_write_text, dump_json_line, iter_jsonl

# Sentinel codes just past the Unicode scalar range.
_BOS_CODE = int(dp.BOS_CODE)
_EOS_CODE = int(dp.EOS_CODE)

_GOLDEN = dp.GOLDEN
_MIX1 = dp.MIX1
_MIX2 = dp.MIX2

# Slot constants keep unigram/bigram/parity feature families disjoint.
_SLOT_UNIGRAM = 1
_SLOT_BIGRAM = 1001
_SLOT_PARITY = 9001


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _GOLDEN).astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= _MIX1
    x ^= x >> np.uint64(27)
    x *= _MIX2
    x ^= x >> np.uint64(31)
    return x


def _slot_key(seed: int, slot: int) -> np.uint64:
    # 1-element arrays keep the wraparound arithmetic warning-free.
    x = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    x ^= np.array([slot], dtype=np.uint64) * _GOLDEN
    return _splitmix64(x)[0]


def feature_count(window: int) -> int:
    """Features per position: 2w+1 unigrams, 2w bigrams, one parity feature."""
    return 4 * window + 2


def slot_keys(window: int, seed: int) -> np.ndarray:
    """Per-column hash keys in feature order: unigrams, bigrams, parity."""
    keys = [_slot_key(seed, _SLOT_UNIGRAM + off) for off in range(2 * window + 1)]
    keys += [_slot_key(seed, _SLOT_BIGRAM + off) for off in range(2 * window)]
    keys.append(_slot_key(seed, _SLOT_PARITY))
    return np.array(keys, dtype=np.uint64)


def text_codes(text: str) -> np.ndarray:
    """Unicode scalar values of ``text`` as a uint64 array."""
    if not text:
        return np.empty(0, dtype=np.uint64)
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.uint64)


def feature_matrix(text: str, window: int, seed: int, hash_dim: int) -> np.ndarray:
    """Hashed feature ids for every position: shape (len(text), 4*window+2), int64.

    Vectorized reference implementation; the numba kernels in :mod:`dp`
    compute identical ids (asserted by tests), which the hot paths use.
    """
    n = len(text)
    w = window
    if n == 0:
        return np.zeros((0, feature_count(w)), dtype=np.int64)
    codes = np.empty(n + 2 * w, dtype=np.uint64)
    codes[:w] = _BOS_CODE
    codes[w : w + n] = text_codes(text)
    codes[w + n :] = _EOS_CODE
    keys = slot_keys(w, seed)

    columns: list[np.ndarray] = []
    for off in range(2 * w + 1):
        columns.append(_splitmix64(keys[off] ^ codes[off : off + n]))
    for off in range(2 * w):
        pair = codes[off : off + n] * dp.PAIR_BASE + codes[off + 1 : off + 1 + n]
        columns.append(_splitmix64(keys[2 * w + 1 + off] ^ pair))
    parity = np.arange(n, dtype=np.uint64) & np.uint64(1)
    columns.append(_splitmix64(keys[-1] ^ parity))

    ids = np.stack(columns, axis=1) % np.uint64(hash_dim)
    return ids.astype(np.int64)


def extract_features(sentence: Sentence, position: int, window: int, seed: int,
                     hash_dim: int = 2**20) -> list[int]:
    """Hashed feature ids active at one position of a sentence."""
    if not 0 <= position < sentence.length:
        raise RangeError(f"position {position} outside sentence of length {sentence.length}")
    return feature_matrix(sentence.text, window, seed, hash_dim)[position].tolist()


@dataclass
class EmissionTable:
    """Scores of shape (sentence length, number of tags); finite everywhere."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeMismatchError(f"emission table must be 2-D, got shape {self.scores.shape}")
        if self.scores.size and not np.isfinite(self.scores).all():
            raise ShapeMismatchError("emission table contains non-finite scores")

    @property
    def length(self) -> int:
        return self.scores.shape[0]

    @property
    def num_tags(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class EmitterConfig:
    """Hyperparameters of a hashed-feature emitter."""

    kind: str = "hashed"
    window: int = 2
    hash_dim: int = 2**20
    seed: int = 1

    def to_json(self) -> dict:
        return {"kind": self.kind, "window": self.window,
                "hash_dim": self.hash_dim, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: Mapping) -> "EmitterConfig":
        return cls(kind=obj.get("kind", "hashed"), window=int(obj["window"]),
                   hash_dim=int(obj["hash_dim"]), seed=int(obj["seed"]))


# Capacity presets: the teacher is wider and heavier than the student, so it
# is measurably slower and stronger.
BASE_CONFIG = EmitterConfig(window=2, hash_dim=2**20)
TEACHER_CONFIG = EmitterConfig(window=3, hash_dim=2**22)
STUDENT_CONFIG = EmitterConfig(window=1, hash_dim=2**18)

PRESETS = {"base": BASE_CONFIG, "teacher": TEACHER_CONFIG, "student": STUDENT_CONFIG}


class FeatureEmitter:
    """Trainable linear emitter over hashed character-window features."""

    kind = "hashed"

    def __init__(self, scheme: LabelScheme, config: EmitterConfig = BASE_CONFIG,
                 weights: np.ndarray | None = None):
        self.scheme = scheme
        self.config = config
        if weights is None:
            weights = np.zeros((config.hash_dim, scheme.num_tags), dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (config.hash_dim, scheme.num_tags):
            raise ShapeMismatchError(
                f"weights shape {weights.shape} != ({config.hash_dim}, {scheme.num_tags})"
            )
        self.weights = weights
        self._slot_keys = slot_keys(config.window, config.seed)
        self._hash_dim = np.uint64(config.hash_dim)

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def hash_dim(self) -> int:
        return self.config.hash_dim

    @property
    def seed(self) -> int:
        return self.config.seed

    def feature_ids(self, sentence: Sentence) -> np.ndarray:
        return dp.hash_features(text_codes(sentence.text), self.config.window,
                                self._slot_keys, self._hash_dim)

    def emissions_from_ids(self, ids: np.ndarray) -> EmissionTable:
        if ids.shape[0] == 0:
            return EmissionTable(np.zeros((0, self.scheme.num_tags)))
        return EmissionTable(dp.gather_sum(ids, self.weights))

    def emissions(self, sentence: Sentence) -> EmissionTable:
        return self.emissions_from_ids(self.feature_ids(sentence))

    def copy(self) -> "FeatureEmitter":
        return FeatureEmitter(self.scheme, self.config, self.weights.copy())


class ExternalEmitter:
    """Emitter backed by precomputed tables keyed by sentence id."""

    kind = "external"

    def __init__(self, scheme: LabelScheme, tables: Mapping[str, EmissionTable] | None = None):
        self.scheme = scheme
        self.tables: dict[str, EmissionTable] = dict(tables or {})

    def emissions(self, sentence: Sentence) -> EmissionTable:
        table = self.tables.get(sentence.id)
        if table is None:
            raise ShapeMismatchError(f"no external emissions for sentence {sentence.id!r}")
        if table.length != sentence.length:
            raise ShapeMismatchError(
                f"sentence {sentence.id!r}: {table.length} emission rows for length {sentence.length}"
            )
        return table

    def copy(self) -> "ExternalEmitter":
        return ExternalEmitter(self.scheme, self.tables)


def load_external_emissions(
    path: str | Path,
    scheme: LabelScheme,
    dataset: Dataset | None = None,
) -> dict[str, EmissionTable]:
    """Load {"id", "scores"} JSON Lines into emission tables.

    Row-major scores, one row per character, tag order matching the scheme.
    When a dataset is given, every table is checked against its sentence
    length up front.
    """
    tables: dict[str, EmissionTable] = {}
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or "id" not in obj or "scores" not in obj:
            raise ParseError("record must be an object with id and scores", line=lineno)
        sid = str(obj["id"])
        scores = np.asarray(obj["scores"], dtype=np.float64)
        if scores.ndim == 1 and scores.size == 0:
            scores = scores.reshape(0, scheme.num_tags)
        if scores.ndim != 2 or scores.shape[1] != scheme.num_tags:
            raise ShapeMismatchError(
                f"sentence {sid!r}: scores shape {scores.shape} does not have {scheme.num_tags} columns"
            )
        if dataset is not None and dataset.has_sentence(sid):
            expected = dataset.sentence(sid).length
            if scores.shape[0] != expected:
                raise ShapeMismatchError(
                    f"sentence {sid!r}: {scores.shape[0]} rows for sentence length {expected}"
                )
        tables[sid] = EmissionTable(scores)
    return tables


def save_external_emissions(tables: Mapping[str, EmissionTable], path: str | Path) -> None:
    lines = [
        dump_json_line({"id": sid, "scores": table.scores.tolist()})
        for sid, table in tables.items()
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
