"""Linear-chain CRF: partition function, likelihood gradients, constrained
Viterbi decoding, and SGD training with early stopping.

Scoring convention for a tag sequence y over a sentence of length L:

    score(y) = start[y_1] + sum_i emissions[i, y_i]
             + sum_i trans[y_{i-1}, y_i] + end[y_L]

A BIO constraint mask forbids transitions into ``I-x`` from anything other
than ``B-x``/``I-x`` (and at sentence start); masked entries score NEG_INF
and are never produced by decoding.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import MODEL_FORMAT_VERSION, dp
from .corpus import Dataset, LabelScheme, Sentence, Span, TagSequence, spans_to_tags, tags_to_spans
from .emitter import (
    EmissionTable,
    EmitterConfig,
    ExternalEmitter,
    FeatureEmitter,
)
from .errors import (
    ConfigError,
    CorruptionError,
    DataError,
    DivergenceError,
    InfeasibleError,
    InvalidGoldError,
    ShapeMismatchError,
    VersionError,
)
from .fileio import atomic_write_bytes

log = logging.getLogger(__name__)

NEG_INF = dp.NEG_INF

# Detail-stage fine-tuning runs at a fraction of the outline-stage rate.
DETAIL_LR_RATIO = 0.1
DEFAULT_LEARNING_RATE = 0.2


@dataclass
class TrainConfig:
    """SGD hyperparameters with per-sentence updates and patience-based early stop."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    l2: float = 0.0
    max_epochs: int = 14
    patience: int = 4
    lr_decay: float = 0.85  # multiplicative per-epoch step-size decay
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    def detail_variant(self) -> "TrainConfig":
        """Same config at the reduced detail-stage learning rate."""
        return TrainConfig(
            learning_rate=self.learning_rate * DETAIL_LR_RATIO,
            l2=self.l2,
            max_epochs=self.max_epochs,
            patience=self.patience,
            lr_decay=self.lr_decay,
            seed=self.seed,
            shuffle=self.shuffle,
        )


def bio_masks(scheme: LabelScheme) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (transition, start) masks enforcing BIO validity."""
    num_tags = scheme.num_tags
    trans_mask = np.ones((num_tags, num_tags), dtype=bool)
    start_mask = np.ones(num_tags, dtype=bool)
    for k in range(len(scheme.labels)):
        b_idx, i_idx = 1 + 2 * k, 2 + 2 * k
        start_mask[i_idx] = False
        trans_mask[:, i_idx] = False
        trans_mask[b_idx, i_idx] = True
        trans_mask[i_idx, i_idx] = True
    return trans_mask, start_mask


class CrfModel:
    """Transition/start/end scores, a BIO constraint mask, and an owned emitter."""

    def __init__(self, scheme: LabelScheme, emitter, constraints: bool = True,
                 metadata: dict | None = None):
        num_tags = scheme.num_tags
        self.scheme = scheme
        self.emitter = emitter
        self.constraints = constraints
        self.transitions = np.zeros((num_tags, num_tags), dtype=np.float64)
        self.start_scores = np.zeros(num_tags, dtype=np.float64)
        self.end_scores = np.zeros(num_tags, dtype=np.float64)
        self.trans_mask, self.start_mask = bio_masks(scheme)
        self.metadata = dict(metadata or {})

    @classmethod
    def fresh(cls, scheme: LabelScheme, emitter_config: EmitterConfig,
              constraints: bool = True, metadata: dict | None = None) -> "CrfModel":
        return cls(scheme, FeatureEmitter(scheme, emitter_config),
                   constraints=constraints, metadata=metadata)

    # --- effective (mask-applied) score matrices ---

    def effective_transitions(self) -> np.ndarray:
        if not self.constraints:
            return self.transitions
        return np.where(self.trans_mask, self.transitions, NEG_INF)

    def effective_start(self) -> np.ndarray:
        if not self.constraints:
            return self.start_scores
        return np.where(self.start_mask, self.start_scores, NEG_INF)

    # --- inference ---

    def emissions(self, sentence: Sentence) -> EmissionTable:
        return self.emitter.emissions(sentence)

    def decode(self, sentence: Sentence) -> TagSequence:
        emitter = self.emitter
        if not isinstance(emitter, FeatureEmitter):
            return viterbi_decode(self.emissions(sentence), self)
        if sentence.length == 0:
            return ()
        # Fused hash + gather + Viterbi; bit-identical to the staged path.
        from .emitter import text_codes

        codes = text_codes(sentence.text)
        offsets = np.array([0, sentence.length], dtype=np.int64)
        paths, best = dp.batch_hashed_decode(
            codes, offsets, emitter.config.window, emitter._slot_keys,
            emitter._hash_dim, emitter.weights,
            self.effective_transitions(), self.effective_start(), self.end_scores,
        )
        if best <= dp.INFEASIBLE_SCORE:
            raise InfeasibleError("constraint mask admits no valid tag sequence")
        tags = self.scheme.tags
        return tuple(tags[i] for i in paths)

    def decode_batch(self, sentences: Sequence[Sentence]) -> tuple[np.ndarray, np.ndarray]:
        """Decode a corpus in one kernel call (hashed emitters only).

        Returns flat tag-index paths plus segment offsets: sentence i owns
        ``paths[offsets[i]:offsets[i+1]]``.  Identical tags to per-sentence
        :meth:`decode`; this is the serving/benchmark path.
        """
        emitter = self.emitter
        if not isinstance(emitter, FeatureEmitter):
            raise DataError("batched decode requires a hashed feature emitter")
        from .emitter import text_codes

        lengths = np.fromiter((s.length for s in sentences), dtype=np.int64,
                              count=len(sentences))
        offsets = np.zeros(len(sentences) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        codes = text_codes("".join(s.text for s in sentences))
        paths, best = dp.batch_hashed_decode(
            codes, offsets, emitter.config.window, emitter._slot_keys,
            emitter._hash_dim, emitter.weights,
            self.effective_transitions(), self.effective_start(), self.end_scores,
        )
        if best <= dp.INFEASIBLE_SCORE:
            raise InfeasibleError("constraint mask admits no valid tag sequence")
        return paths, offsets

    def predict_spans(self, sentence: Sentence) -> list[Span]:
        return tags_to_spans(self.decode(sentence))

    # --- bookkeeping ---

    def parameters(self) -> dict[str, np.ndarray]:
        params = {
            "transitions": self.transitions,
            "start_scores": self.start_scores,
            "end_scores": self.end_scores,
        }
        if isinstance(self.emitter, FeatureEmitter):
            params["emitter_weights"] = self.emitter.weights
        return params

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.parameters().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            arr[...] = snapshot[name]

    def copy(self) -> "CrfModel":
        dup = CrfModel(self.scheme, self.emitter.copy(), constraints=self.constraints,
                       metadata=copy.deepcopy(self.metadata))
        dup.transitions[...] = self.transitions
        dup.start_scores[...] = self.start_scores
        dup.end_scores[...] = self.end_scores
        return dup

    def save(self, path: str | Path) -> None:
        save_model(self, path)


def _check_emissions(emissions: EmissionTable, model: CrfModel) -> np.ndarray:
    scores = emissions.scores
    if scores.shape[1] != model.scheme.num_tags:
        raise ShapeMismatchError(
            f"emission table has {scores.shape[1]} tag columns, scheme has {model.scheme.num_tags}"
        )
    return scores


def log_partition(emissions: EmissionTable, model: CrfModel) -> float:
    """log sum over all mask-valid tag sequences of exp(score)."""
    scores = _check_emissions(emissions, model)
    if scores.shape[0] == 0:
        return 0.0
    return float(dp.forward_logz(scores, model.effective_transitions(),
                                 model.effective_start(), model.end_scores))


def posterior_marginals(emissions: EmissionTable, model: CrfModel):
    """(logz, unary marginals (L,T), summed pairwise marginals (T,T))."""
    scores = _check_emissions(emissions, model)
    if scores.shape[0] == 0:
        num_tags = model.scheme.num_tags
        return 0.0, np.zeros((0, num_tags)), np.zeros((num_tags, num_tags))
    logz, unary, pair = dp.forward_backward(scores, model.effective_transitions(),
                                            model.effective_start(), model.end_scores)
    return float(logz), unary, pair


def viterbi_decode(emissions: EmissionTable, model: CrfModel) -> TagSequence:
    """Highest-scoring mask-valid sequence; ties break toward lower tag index."""
    scores = _check_emissions(emissions, model)
    if scores.shape[0] == 0:
        return ()
    path, best = dp.viterbi(scores, model.effective_transitions(),
                            model.effective_start(), model.end_scores)
    if best <= dp.INFEASIBLE_SCORE:
        raise InfeasibleError("constraint mask admits no valid tag sequence")
    tags = model.scheme.tags
    return tuple(tags[i] for i in path)


def tag_indices(model: CrfModel, tags: Sequence[str]) -> np.ndarray:
    return np.array([model.scheme.tag_index(t) for t in tags], dtype=np.int64)


def _validate_gold(model: CrfModel, gold_idx: np.ndarray) -> None:
    if gold_idx.size == 0:
        return
    if model.constraints:
        if not model.start_mask[gold_idx[0]]:
            raise InvalidGoldError(f"gold starts with masked tag {model.scheme.tags[gold_idx[0]]}")
        bad = ~model.trans_mask[gold_idx[:-1], gold_idx[1:]]
        if bad.any():
            pos = int(np.nonzero(bad)[0][0])
            raise InvalidGoldError(
                f"gold transition {model.scheme.tags[gold_idx[pos]]} -> "
                f"{model.scheme.tags[gold_idx[pos + 1]]} at position {pos + 1} is masked"
            )


def sequence_score(model: CrfModel, emissions: EmissionTable, gold_idx: np.ndarray) -> float:
    scores = _check_emissions(emissions, model)
    if gold_idx.size == 0:
        return 0.0
    positions = np.arange(gold_idx.size)
    total = float(model.start_scores[gold_idx[0]] + model.end_scores[gold_idx[-1]])
    total += float(scores[positions, gold_idx].sum())
    total += float(model.transitions[gold_idx[:-1], gold_idx[1:]].sum())
    return total


@dataclass
class CrfGradients:
    """Gradient of the regularized NLL for one sentence.

    ``emission_residual[i, y]`` is the gradient with respect to e(i, y),
    i.e. marginal minus gold indicator.  For a hashed emitter the weight
    gradient is the scatter of that residual over ``feature_ids`` plus the
    l2 term; :meth:`emitter_dense` materializes it (tests only - training
    applies the sparse form directly).
    """

    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray
    emission_residual: np.ndarray
    feature_ids: np.ndarray | None = None
    l2: float = 0.0

    def emitter_dense(self, model: CrfModel) -> np.ndarray:
        if not isinstance(model.emitter, FeatureEmitter):
            raise DataError("model emitter has no trainable weights")
        grad = np.zeros_like(model.emitter.weights)
        if self.feature_ids is not None and self.feature_ids.size:
            length, width = self.feature_ids.shape
            rows = np.repeat(self.emission_residual, width, axis=0)
            np.add.at(grad, self.feature_ids.ravel(), rows)
        if self.l2:
            grad += self.l2 * model.emitter.weights
        return grad


def nll_and_gradient(model: CrfModel, sentence: Sentence,
                     gold_tags: Sequence[str], l2: float = 0.0):
    """Negative log-likelihood of the gold tags plus l2/2 * ||params||^2.

    Returns ``(loss, CrfGradients)``.
    """
    if len(gold_tags) != sentence.length:
        raise ShapeMismatchError(
            f"{len(gold_tags)} gold tags for sentence of length {sentence.length}"
        )
    gold_idx = tag_indices(model, gold_tags)
    _validate_gold(model, gold_idx)

    ids = None
    if isinstance(model.emitter, FeatureEmitter):
        ids = model.emitter.feature_ids(sentence)
        emissions = model.emitter.emissions_from_ids(ids)
    else:
        emissions = model.emitter.emissions(sentence)

    logz, unary, pair = posterior_marginals(emissions, model)
    loss = logz - sequence_score(model, emissions, gold_idx)

    residual = unary.copy()
    g_trans = pair.copy()
    g_start = np.zeros_like(model.start_scores)
    g_end = np.zeros_like(model.end_scores)
    if gold_idx.size:
        residual[np.arange(gold_idx.size), gold_idx] -= 1.0
        np.subtract.at(g_trans, (gold_idx[:-1], gold_idx[1:]), 1.0)
        g_start += unary[0]
        g_start[gold_idx[0]] -= 1.0
        g_end += unary[-1]
        g_end[gold_idx[-1]] -= 1.0

    if l2:
        sq = (model.transitions ** 2).sum() + (model.start_scores ** 2).sum() \
            + (model.end_scores ** 2).sum()
        if isinstance(model.emitter, FeatureEmitter):
            sq += (model.emitter.weights ** 2).sum()
        loss += 0.5 * l2 * float(sq)
        g_trans += l2 * model.transitions
        g_start += l2 * model.start_scores
        g_end += l2 * model.end_scores

    grads = CrfGradients(g_trans, g_start, g_end, residual, ids, l2)
    return float(loss), grads


# --- training ---


@dataclass
class _Example:
    sentence: Sentence
    gold_idx: np.ndarray
    feature_ids: np.ndarray | None


def dev_entity_f1(model: CrfModel, dev: Dataset, dev_layer: str,
                  ids_cache: dict[str, np.ndarray] | None = None) -> float:
    """Entity-level micro F1 of the model's decode against a dev layer."""
    from .evaluation import entity_prf

    predicted: dict[str, list[Span]] = {}
    for sentence in dev.sentences:
        if ids_cache is not None and isinstance(model.emitter, FeatureEmitter):
            emissions = model.emitter.emissions_from_ids(ids_cache[sentence.id])
        else:
            emissions = model.emissions(sentence)
        predicted[sentence.id] = tags_to_spans(viterbi_decode(emissions, model))
    return entity_prf(predicted, dev.layer(dev_layer)).f1


def _prepare_examples(model: CrfModel, dataset: Dataset, layer: str) -> list[_Example]:
    spans_by_id = dataset.layer(layer)
    examples = []
    for sentence in dataset.sentences:
        if sentence.length == 0:
            continue
        tags = spans_to_tags(sentence.length, spans_by_id[sentence.id], model.scheme)
        gold_idx = tag_indices(model, tags)
        _validate_gold(model, gold_idx)
        ids = model.emitter.feature_ids(sentence) if isinstance(model.emitter, FeatureEmitter) \
            else None
        examples.append(_Example(sentence, gold_idx, ids))
    return examples


def _sgd_pass(model: CrfModel, examples: list[_Example], order: np.ndarray,
              lr: float, l2: float) -> float:
    """One epoch of per-sentence SGD updates; returns the mean NLL."""
    trans = model.transitions
    start = model.start_scores
    end = model.end_scores
    hashed = isinstance(model.emitter, FeatureEmitter)
    weights = model.emitter.weights if hashed else None
    total = 0.0
    for idx in order:
        ex = examples[idx]
        if hashed:
            emissions = dp.gather_sum(ex.feature_ids, weights)
        else:
            emissions = model.emitter.emissions(ex.sentence).scores
        trans_eff = np.where(model.trans_mask, trans, NEG_INF) if model.constraints else trans
        start_eff = np.where(model.start_mask, start, NEG_INF) if model.constraints else start
        logz, unary, pair = dp.forward_backward(emissions, trans_eff, start_eff, end)

        gold = ex.gold_idx
        positions = np.arange(gold.size)
        gold_score = start[gold[0]] + end[gold[-1]] + emissions[positions, gold].sum()
        if gold.size > 1:
            gold_score += trans[gold[:-1], gold[1:]].sum()
        nll = logz - gold_score
        if not np.isfinite(nll):
            raise DivergenceError(f"loss became non-finite on sentence {ex.sentence.id!r}")
        total += nll

        residual = unary
        residual[positions, gold] -= 1.0
        g_trans = pair
        np.subtract.at(g_trans, (gold[:-1], gold[1:]), 1.0)
        if l2:
            g_trans += l2 * trans
        trans -= lr * g_trans
        g_start = residual[0].copy()
        g_end = residual[-1].copy()
        if l2:
            g_start += l2 * start
            g_end += l2 * end
        start -= lr * g_start
        end -= lr * g_end

        if hashed:
            if l2:
                weights *= 1.0 - lr * l2
            width = ex.feature_ids.shape[1]
            rows = np.repeat(residual, width, axis=0)
            np.subtract.at(weights, ex.feature_ids.ravel(), lr * rows)
    return total / max(len(examples), 1)


def fit(model: CrfModel, train: Dataset, dev: Dataset, config: TrainConfig,
        train_layer: str = "gold", dev_layer: str = "gold") -> tuple[CrfModel, list[float]]:
    """Train in place with per-sentence SGD and early stopping on dev entity F1.

    Stops once dev F1 has not improved for ``patience`` consecutive epochs
    (or at ``max_epochs``); the returned model carries the parameters of the
    best-scoring epoch.  Returns ``(model, per-epoch dev F1 history)``.
    """
    if not train.sentences:
        raise DataError("training dataset is empty")
    if not dev.sentences:
        raise DataError("dev dataset is empty")
    examples = _prepare_examples(model, train, train_layer)
    if not examples:
        raise DataError("training dataset has no non-empty sentences")
    dev_ids_cache = None
    if isinstance(model.emitter, FeatureEmitter):
        dev_ids_cache = {s.id: model.emitter.feature_ids(s) for s in dev.sentences}

    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    history: list[float] = []
    best_f1 = -np.inf
    best_params: dict[str, np.ndarray] | None = None
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(examples)) if config.shuffle \
            else np.arange(len(examples))
        mean_nll = _sgd_pass(model, examples, order, lr, config.l2)
        f1 = dev_entity_f1(model, dev, dev_layer, dev_ids_cache)
        history.append(f1)
        log.debug("epoch %d: mean NLL %.4f, dev F1 %.4f", epoch, mean_nll, f1)
        if f1 > best_f1:
            best_f1 = f1
            best_params = model.snapshot()
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break
        lr *= config.lr_decay

    if best_params is not None:
        model.restore(best_params)
    return model, history


# --- model files ---

_MAGIC = b"NERCRF\n"


def save_model(model: CrfModel, path: str | Path) -> None:
    """Versioned binary container: JSON header, raw float64 blocks, sha256 trailer."""
    params = model.parameters()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "scheme": list(model.scheme.labels),
        "constraints": model.constraints,
        "emitter": _emitter_header(model.emitter),
        "metadata": model.metadata,
        "arrays": [
            {"name": name, "shape": list(arr.shape), "dtype": "<f8"}
            for name, arr in params.items()
        ],
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += _MAGIC
    body += struct.pack(">I", len(header_bytes))
    body += header_bytes
    for arr in params.values():
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    atomic_write_bytes(path, bytes(body))


def _emitter_header(emitter) -> dict:
    if isinstance(emitter, FeatureEmitter):
        return emitter.config.to_json()
    return {"kind": "external"}


def load_model(path: str | Path) -> CrfModel:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 4 + 32 or not raw.startswith(_MAGIC):
        raise CorruptionError(f"{path}: not a model file or truncated")
    (header_len,) = struct.unpack(">I", raw[len(_MAGIC) : len(_MAGIC) + 4])
    header_start = len(_MAGIC) + 4
    if len(raw) < header_start + header_len + 32:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start : header_start + header_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header: {exc}") from exc

    version = header.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported model format version {version!r}")

    digest = raw[-32:]
    if hashlib.sha256(raw[:-32]).digest() != digest:
        raise CorruptionError(f"{path}: checksum mismatch")

    scheme = LabelScheme(header["scheme"])
    arrays: dict[str, np.ndarray] = {}
    offset = header_start + header_len
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptionError(f"{path}: truncated array block {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw) - 32:
        raise CorruptionError(f"{path}: trailing bytes after array blocks")

    emitter_header = header["emitter"]
    if emitter_header.get("kind") == "hashed":
        config = EmitterConfig.from_json(emitter_header)
        emitter = FeatureEmitter(scheme, config, arrays["emitter_weights"])
    else:
        emitter = ExternalEmitter(scheme)
    model = CrfModel(scheme, emitter, constraints=bool(header.get("constraints", True)),
                     metadata=dict(header.get("metadata", {})))
    model.transitions[...] = arrays["transitions"]
    model.start_scores[...] = arrays["start_scores"]
    model.end_scores[...] = arrays["end_scores"]
    return model
