"""Weakly-supervised NER toolkit.

Machine-annotates text with a gazetteer, trains a linear-chain CRF in two
stages (coarse outline learning, then detail fine-tuning on human-corrected
disagreements), and distills the resulting tagger into a faster student.
"""

__version__ = "0.1.0"

MODEL_FORMAT_VERSION = 1


def __getattr__(name):
    # Convenience re-exports without importing the heavy modules eagerly
    # (crf pulls in the numba-compiled kernels).
    from importlib import import_module

    homes = {
        "Sentence": "corpus", "Span": "corpus", "Dataset": "corpus",
        "LabelScheme": "corpus", "spans_to_tags": "corpus", "tags_to_spans": "corpus",
        "split_sentences": "corpus", "load_dataset": "corpus", "save_dataset": "corpus",
        "NameDictionary": "gazetteer", "build_matcher": "gazetteer",
        "annotate_corpus": "gazetteer", "generate_abbreviations": "gazetteer",
        "FeatureEmitter": "emitter", "EmitterConfig": "emitter",
        "CrfModel": "crf", "TrainConfig": "crf", "fit": "crf",
        "load_model": "crf", "save_model": "crf",
        "entity_prf": "evaluation", "throughput_bench": "evaluation",
        "SynthConfig": "synth", "gen_corpus": "synth",
        "PipelineConfig": "pipeline", "run_pipeline": "pipeline",
    }
    if name in homes:
        return getattr(import_module(f".{homes[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
