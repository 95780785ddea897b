"""Reproducible synthetic corpora with known gold entities.

Generates company-style names from a shared syllable/suffix grammar, embeds
them in carrier sentences, and machine-annotates the training split with a
partial-coverage dictionary plus optional boundary noise.  Because names
share structure (suffix vocabulary, syllable inventory), a tagger can
generalize past dictionary coverage - the property the correction stage
exploits.

Everything is driven by one ``random.Random(seed)``, so identical configs
produce byte-identical corpora.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import (
    DEFAULT_LABEL,
    LAYER_COARSE,
    LAYER_GOLD,
    Dataset,
    Sentence,
    Span,
    save_dataset,
)
from .errors import ConfigError
from .gazetteer import NameDictionary, build_matcher

DEFAULT_SYLLABLES = (
    "an", "bor", "cal", "dun", "el", "fir", "gor", "hul", "in", "jor",
    "kan", "lum", "mor", "nor", "ol", "pra", "qui", "ris", "sol", "tan",
    "ul", "vor", "wex", "xil", "yor", "zen", "ba", "ced", "dol", "erm",
    "fos", "gil", "hax", "ive", "jun", "kol", "lar", "med", "nuv", "orp",
    "pel", "rud", "sev", "tor", "uz", "vin", "wol", "yen",
)

DEFAULT_SUFFIXES = (
    "Corp", "Group", "Holdings", "Ltd", "Partners", "Bank", "Capital", "Industries",
)

DEFAULT_TEMPLATES = (
    "Shares of {E} rose sharply after the earnings call。",
    "{E} announced a strategic partnership with {E} yesterday。",
    "Regulators opened an inquiry into {E} over disclosure lapses！",
    "Analysts at {D} cut their rating on {E} to neutral；",
    "{D} reported that {E} plans to expand overseas。",
    "Trading in {E} was halted pending an announcement。",
    "据悉，{E}拟于下月发行新债券。",
    "市场消息：{E}与{E}正洽谈合并事宜。",
    "The lawsuit names {E} as the primary defendant。",
    "{E} denied the rumours circulating since Monday！",
    "Bondholders of {E} approved the restructuring plan；",
    "受访时，{D}表示看好{E}的长期前景。",
    "Quarterly revenue at {E} beat the forecast from {D}。",
)

_SLOT_RE = re.compile(r"\{[ED]\}")


@dataclass
class SynthConfig:
    """Knobs for corpus generation; defaults complete the full pipeline in minutes."""

    n_sentences: int = 10_000
    n_names: int = 1_000
    dict_coverage: float = 0.6
    boundary_noise: float = 0.05
    seed: int = 0
    label: str = DEFAULT_LABEL
    syllables: tuple[str, ...] = DEFAULT_SYLLABLES
    suffixes: tuple[str, ...] = DEFAULT_SUFFIXES
    carrier_templates: tuple[str, ...] = DEFAULT_TEMPLATES
    # Fraction of names without a legal-form suffix; these are only
    # recoverable from the dictionary or from corrections, which keeps
    # outline recall off the ceiling.
    plain_name_fraction: float = 0.3
    n_decoys: int = 120
    dev_fraction: float = 0.1
    test_fraction: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.dict_coverage <= 1.0:
            raise ConfigError(f"dict_coverage must be in [0, 1], got {self.dict_coverage}")
        if not 0.0 <= self.boundary_noise <= 1.0:
            raise ConfigError(f"boundary_noise must be in [0, 1], got {self.boundary_noise}")
        if not 0.0 <= self.plain_name_fraction <= 1.0:
            raise ConfigError(f"plain_name_fraction must be in [0, 1], got {self.plain_name_fraction}")
        if self.n_sentences < 10:
            raise ConfigError("n_sentences must be at least 10")
        if self.n_names < 1:
            raise ConfigError("n_names must be at least 1")
        if not self.syllables or not self.suffixes or not self.carrier_templates:
            raise ConfigError("syllable, suffix, and template pools must be non-empty")
        if not any("{E}" in t for t in self.carrier_templates):
            raise ConfigError("at least one carrier template must contain an {E} slot")
        if self.dev_fraction <= 0 or self.test_fraction <= 0 \
                or self.dev_fraction + self.test_fraction >= 1.0:
            raise ConfigError("dev/test fractions must be positive and sum below 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        coerced = dict(obj)
        for key in ("syllables", "suffixes", "carrier_templates"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)


@dataclass
class SynthResult:
    gold: Dataset
    coarse: Dataset
    dictionary: NameDictionary
    dev: Dataset
    test: Dataset
    stats: dict = field(default_factory=dict)


def _make_word(rng: random.Random, syllables: Sequence[str]) -> str:
    word = "".join(rng.choice(syllables) for _ in range(rng.randint(2, 3)))
    return word[0].upper() + word[1:]


def _make_names(rng: random.Random, config: SynthConfig) -> list[str]:
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < config.n_names:
        core = " ".join(_make_word(rng, config.syllables) for _ in range(rng.randint(1, 2)))
        if rng.random() < config.plain_name_fraction:
            name = core
        else:
            name = f"{core} {rng.choice(config.suffixes)}"
        if name in seen:
            continue
        seen.add(name)
        names.append(name)
    return names


def _make_decoys(rng: random.Random, config: SynthConfig, names: set[str]) -> list[str]:
    decoys: list[str] = []
    seen: set[str] = set()
    while len(decoys) < config.n_decoys:
        word = _make_word(rng, config.syllables)
        if word in seen or word in names:
            continue
        seen.add(word)
        decoys.append(word)
    return decoys


def _fill_template(
    template: str,
    rng: random.Random,
    pick_name,
    decoys: Sequence[str],
    label: str,
) -> tuple[str, list[Span]]:
    parts: list[str] = []
    spans: list[Span] = []
    cursor = 0
    pos = 0
    for m in _SLOT_RE.finditer(template):
        literal = template[pos : m.start()]
        parts.append(literal)
        cursor += len(literal)
        if m.group() == "{E}":
            name = pick_name()
            parts.append(name)
            spans.append(Span(cursor, cursor + len(name), label))
            cursor += len(name)
        else:
            decoy = rng.choice(decoys)
            parts.append(decoy)
            cursor += len(decoy)
        pos = m.end()
    tail = template[pos:]
    parts.append(tail)
    return "".join(parts), spans


def _perturb_spans(
    spans: Sequence[Span],
    length: int,
    noise: float,
    rng: random.Random,
) -> list[Span]:
    """Perturb a fraction of spans by one position on one boundary, keeping validity."""
    out: list[Span] = []
    ordered = sorted(spans)
    for i, span in enumerate(ordered):
        if noise <= 0.0 or rng.random() >= noise:
            out.append(span)
            continue
        prev_end = out[-1].end if out else 0
        next_start = ordered[i + 1].start if i + 1 < len(ordered) else length
        candidates = []
        for start, end in (
            (span.start - 1, span.end),
            (span.start + 1, span.end),
            (span.start, span.end - 1),
            (span.start, span.end + 1),
        ):
            if start < prev_end or end > next_start:
                continue
            if 0 <= start < end <= length:
                candidates.append((start, end))
        if candidates:
            start, end = rng.choice(candidates)
            out.append(Span(start, end, span.label))
        else:
            out.append(span)
    return out


def gen_corpus(config: SynthConfig) -> SynthResult:
    """Generate (gold, coarse, dictionary, dev, test), fully determined by the seed."""
    config.validate()
    rng = random.Random(config.seed)

    names = _make_names(rng, config)
    decoys = _make_decoys(rng, config, set(names))
    dict_size = round(config.dict_coverage * config.n_names)
    dict_names = sorted(rng.sample(names, dict_size))
    dictionary = NameDictionary.from_names(dict_names, label=config.label)

    n_dev = round(config.dev_fraction * config.n_sentences)
    n_test = round(config.test_fraction * config.n_sentences)
    n_train = config.n_sentences - n_dev - n_test

    # Every name occurs at least once in the training split; remaining slots
    # draw uniformly, so coarse recall concentrates near dict_coverage.
    must_use = list(names)
    rng.shuffle(must_use)

    def pick_train_name() -> str:
        if must_use:
            return must_use.pop()
        return rng.choice(names)

    def pick_any_name() -> str:
        return rng.choice(names)

    def build_split(prefix: str, count: int, pick_name) -> tuple[list[Sentence], dict[str, list[Span]]]:
        sentences: list[Sentence] = []
        gold: dict[str, list[Span]] = {}
        for i in range(count):
            template = rng.choice(config.carrier_templates)
            text, spans = _fill_template(template, rng, pick_name, decoys, config.label)
            sid = f"{prefix}{i:06d}"
            sentences.append(Sentence(sid, text))
            gold[sid] = spans
        return sentences, gold

    train_sentences, train_gold = build_split("train", n_train, pick_train_name)
    if must_use:
        raise ConfigError(
            f"n_sentences={config.n_sentences} leaves {len(must_use)} names unused; "
            "increase n_sentences or decrease n_names"
        )
    dev_sentences, dev_gold = build_split("dev", n_dev, pick_any_name)
    test_sentences, test_gold = build_split("test", n_test, pick_any_name)

    gold_ds = Dataset(train_sentences)
    gold_ds.add_layer(LAYER_GOLD, train_gold)

    coarse_ds = Dataset(list(train_sentences))
    if len(dictionary):
        matched = build_matcher(dictionary)
        coarse_ds.add_layer(
            LAYER_COARSE,
            {s.id: matched.match(s.text) for s in train_sentences},
        )
    else:
        coarse_ds.add_layer(LAYER_COARSE, {s.id: [] for s in train_sentences})
    if config.boundary_noise > 0:
        noisy = {
            s.id: _perturb_spans(coarse_ds.spans(LAYER_COARSE, s.id), s.length,
                                 config.boundary_noise, rng)
            for s in train_sentences
        }
        coarse_ds.add_layer(LAYER_COARSE, noisy)

    dev_ds = Dataset(dev_sentences)
    dev_ds.add_layer(LAYER_GOLD, dev_gold)
    test_ds = Dataset(test_sentences)
    test_ds.add_layer(LAYER_GOLD, test_gold)

    n_gold = sum(len(v) for v in train_gold.values())
    n_coarse = sum(len(coarse_ds.spans(LAYER_COARSE, s.id)) for s in train_sentences)
    stats = {
        "n_train": n_train,
        "n_dev": n_dev,
        "n_test": n_test,
        "n_names": config.n_names,
        "dict_size": dict_size,
        "train_gold_entities": n_gold,
        "train_coarse_entities": n_coarse,
    }
    return SynthResult(gold_ds, coarse_ds, dictionary, dev_ds, test_ds, stats)


def write_corpus(result: SynthResult, outdir: str | Path) -> dict[str, Path]:
    """Write the generated corpus files; returns name -> path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "gold": outdir / "gold.jsonl",
        "coarse": outdir / "coarse.jsonl",
        "dev": outdir / "dev.jsonl",
        "test": outdir / "test.jsonl",
        "dictionary": outdir / "dictionary.txt",
    }
    save_dataset(result.gold, paths["gold"])
    save_dataset(result.coarse, paths["coarse"])
    save_dataset(result.dev, paths["dev"])
    save_dataset(result.test, paths["test"])
    result.dictionary.save(paths["dictionary"])
    return paths
