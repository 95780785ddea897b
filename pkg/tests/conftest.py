from __future__ import annotations

import numpy as np
import pytest

from nerpipe.corpus import LabelScheme, Sentence
from nerpipe.crf import CrfModel
from nerpipe.emitter import EmitterConfig, FeatureEmitter


@pytest.fixture
def scheme() -> LabelScheme:
    return LabelScheme(["COM"])


@pytest.fixture
def two_label_scheme() -> LabelScheme:
    return LabelScheme(["COM", "ORG"])


def random_model(scheme: LabelScheme, rng: np.random.Generator,
                 window: int = 1, hash_dim: int = 64,
                 constraints: bool = True, scale: float = 0.5) -> CrfModel:
    """Small random model suitable for exhaustive-enumeration comparisons."""
    emitter = FeatureEmitter(scheme, EmitterConfig(window=window, hash_dim=hash_dim, seed=11))
    emitter.weights[:] = rng.normal(0.0, scale, emitter.weights.shape)
    model = CrfModel(scheme, emitter, constraints=constraints)
    model.transitions[:] = rng.normal(0.0, scale, model.transitions.shape)
    model.start_scores[:] = rng.normal(0.0, scale, model.start_scores.shape)
    model.end_scores[:] = rng.normal(0.0, scale, model.end_scores.shape)
    return model


def random_sentence(rng: np.random.Generator, length: int, sid: str = "s0",
                    alphabet: str = "ab中国") -> Sentence:
    chars = rng.choice(list(alphabet), size=length)
    return Sentence(sid, "".join(chars))

