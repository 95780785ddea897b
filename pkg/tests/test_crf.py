from __future__ import annotations

import numpy as np
import pytest

from conftest import random_model, random_sentence
from nerpipe import crf
from nerpipe.corpus import Dataset, LabelScheme, Sentence, Span, spans_to_tags
from nerpipe.emitter import EmissionTable, EmitterConfig
from nerpipe.errors import (
    ConfigError,
    CorruptionError,
    DataError,
    DivergenceError,
    InvalidGoldError,
    ShapeMismatchError,
    VersionError,
)
from oracles import (
    brute_force_log_partition,
    brute_force_marginals,
    brute_force_viterbi,
)


def random_instance(rng, scheme, max_len=4):
    model = random_model(scheme, rng, window=1, hash_dim=64,
                         constraints=bool(rng.integers(0, 2)), scale=1.0)
    length = int(rng.integers(1, max_len + 1))
    sentence = random_sentence(rng, length)
    emissions = model.emitter.emissions(sentence)
    return model, sentence, emissions


class TestLogPartition:
    def test_uniform_single_position(self, scheme):
        model = random_model(scheme, np.random.default_rng(0), scale=0.0)
        model.constraints = False
        emissions = EmissionTable(np.zeros((1, 3)))
        assert crf.log_partition(emissions, model) == pytest.approx(np.log(3))

    def test_uniform_two_positions_two_tags(self):
        # 2 unmasked tags, all scores 0, L=2 -> ln 4
        scheme = LabelScheme(["COM"])
        model = random_model(scheme, np.random.default_rng(0), scale=0.0)
        model.constraints = True  # masks I-COM at start and after O
        emissions = EmissionTable(np.zeros((1, 3)))
        # valid single-position sequences: O, B-COM -> hmm, I-COM masked at start
        assert crf.log_partition(emissions, model) == pytest.approx(np.log(2))

    def test_matches_enumeration(self, scheme):
        rng = np.random.default_rng(42)
        for _ in range(150):
            model, _, emissions = random_instance(rng, scheme)
            got = crf.log_partition(emissions, model)
            want = brute_force_log_partition(
                emissions.scores, model.transitions, model.start_scores,
                model.end_scores,
                model.trans_mask if model.constraints else None,
                model.start_mask if model.constraints else None,
            )
            assert got == pytest.approx(want, abs=1e-8)

    def test_matches_enumeration_two_labels(self, two_label_scheme):
        rng = np.random.default_rng(43)
        for _ in range(50):
            model, _, emissions = random_instance(rng, two_label_scheme, max_len=3)
            got = crf.log_partition(emissions, model)
            want = brute_force_log_partition(
                emissions.scores, model.transitions, model.start_scores,
                model.end_scores,
                model.trans_mask if model.constraints else None,
                model.start_mask if model.constraints else None,
            )
            assert got == pytest.approx(want, abs=1e-8)

    def test_shift_invariance(self, scheme):
        rng = np.random.default_rng(44)
        model, _, emissions = random_instance(rng, scheme, max_len=4)
        logz = crf.log_partition(emissions, model)
        tags = crf.viterbi_decode(emissions, model)
        shifted = EmissionTable(emissions.scores.copy())
        shifted.scores[0] += 3.25
        assert crf.log_partition(shifted, model) == pytest.approx(logz + 3.25, abs=1e-9)
        assert crf.viterbi_decode(shifted, model) == tags

    def test_numerically_stable_at_large_scores(self, scheme):
        model = random_model(scheme, np.random.default_rng(1), scale=0.0)
        model.constraints = False
        emissions = EmissionTable(np.full((4, 3), 1e3))
        got = crf.log_partition(emissions, model)
        assert np.isfinite(got)
        assert got == pytest.approx(4e3 + 4 * np.log(3), rel=1e-12)

    def test_shape_mismatch(self, scheme):
        model = random_model(scheme, np.random.default_rng(2))
        with pytest.raises(ShapeMismatchError):
            crf.log_partition(EmissionTable(np.zeros((2, 5))), model)


class TestMarginals:
    def test_match_enumeration(self, scheme):
        rng = np.random.default_rng(45)
        for _ in range(100):
            model, _, emissions = random_instance(rng, scheme)
            logz, unary, pair = crf.posterior_marginals(emissions, model)
            want_logz, want_unary, want_pair = brute_force_marginals(
                emissions.scores, model.transitions, model.start_scores,
                model.end_scores,
                model.trans_mask if model.constraints else None,
                model.start_mask if model.constraints else None,
            )
            assert logz == pytest.approx(want_logz, abs=1e-8)
            np.testing.assert_allclose(unary, want_unary, atol=1e-8)
            np.testing.assert_allclose(pair, want_pair, atol=1e-8)

    def test_unary_rows_sum_to_one(self, scheme):
        rng = np.random.default_rng(46)
        model, _, emissions = random_instance(rng, scheme)
        _, unary, _ = crf.posterior_marginals(emissions, model)
        np.testing.assert_allclose(unary.sum(axis=1), 1.0, atol=1e-10)


class TestViterbi:
    def test_matches_enumeration(self, scheme):
        rng = np.random.default_rng(47)
        for _ in range(150):
            model, _, emissions = random_instance(rng, scheme)
            got = crf.viterbi_decode(emissions, model)
            want_seq, _ = brute_force_viterbi(
                emissions.scores, model.transitions, model.start_scores,
                model.end_scores,
                model.trans_mask if model.constraints else None,
                model.start_mask if model.constraints else None,
            )
            assert tuple(model.scheme.tag_index(t) for t in got) == want_seq

    def test_per_position_argmax_when_no_transitions(self, scheme):
        model = random_model(scheme, np.random.default_rng(3), scale=0.0)
        model.constraints = False
        scores = np.array([[0.0, 2.0, 1.0], [3.0, 0.0, 1.0]])
        assert crf.viterbi_decode(EmissionTable(scores), model) == ("B-COM", "O")

    def test_tie_break_lowest_index(self, scheme):
        model = random_model(scheme, np.random.default_rng(4), scale=0.0)
        model.constraints = False
        emissions = EmissionTable(np.zeros((3, 3)))
        assert crf.viterbi_decode(emissions, model) == ("O", "O", "O")

    def test_decode_always_bio_valid(self, scheme):
        rng = np.random.default_rng(48)
        for _ in range(100):
            model = random_model(scheme, rng, scale=2.0)
            sentence = random_sentence(rng, int(rng.integers(1, 8)))
            tags = model.decode(sentence)
            assert crf_valid_bio(tags)

    def test_infeasible_mask(self, scheme):
        model = random_model(scheme, np.random.default_rng(5))
        model.start_mask[:] = False
        with pytest.raises(crf.InfeasibleError):
            crf.viterbi_decode(EmissionTable(np.zeros((2, 3))), model)


def crf_valid_bio(tags) -> bool:
    prev = "O"
    for tag in tags:
        if tag.startswith("I-"):
            if not (prev == f"B-{tag[2:]}" or prev == tag):
                return False
        prev = tag
    return True


class TestGradients:
    def test_all_parameters_match_finite_differences(self, scheme):
        rng = np.random.default_rng(49)
        for case in range(10):
            model = random_model(scheme, rng, window=1, hash_dim=32, scale=0.8)
            length = int(rng.integers(1, 5))
            sentence = random_sentence(rng, length, sid=f"s{case}")
            spans = [Span(0, min(2, length))] if rng.random() < 0.7 and length >= 2 else []
            gold = spans_to_tags(length, spans, scheme)
            l2 = 0.05 if case % 2 else 0.0
            loss, grads = crf.nll_and_gradient(model, sentence, gold, l2=l2)

            def loss_at() -> float:
                return crf.nll_and_gradient(model, sentence, gold, l2=l2)[0]

            h = 1e-5
            checks = [
                (model.transitions, grads.transitions),
                (model.start_scores, grads.start),
                (model.end_scores, grads.end),
                (model.emitter.weights, grads.emitter_dense(model)),
            ]
            for params, grad in checks:
                flat = params.reshape(-1)
                gflat = np.asarray(grad).reshape(-1)
                idx = range(flat.size) if flat.size <= 16 else \
                    rng.integers(0, flat.size, size=24)
                for k in idx:
                    orig = flat[k]
                    flat[k] = orig + h
                    up = loss_at()
                    flat[k] = orig - h
                    down = loss_at()
                    flat[k] = orig
                    numeric = (up - down) / (2 * h)
                    analytic = gflat[k]
                    assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(analytic), abs(numeric))

    def test_emission_gradient_is_marginal(self, scheme):
        rng = np.random.default_rng(50)
        model, sentence, emissions = random_instance(rng, scheme)
        gold = ("O",) * sentence.length
        _, unary, _ = crf.posterior_marginals(emissions, model)
        _, grads = crf.nll_and_gradient(model, sentence, gold)
        onehot = np.zeros_like(unary)
        onehot[:, 0] = 1.0
        np.testing.assert_allclose(grads.emission_residual, unary - onehot, atol=1e-10)

    def test_loss_nonnegative(self, scheme):
        rng = np.random.default_rng(51)
        for _ in range(20):
            model, sentence, emissions = random_instance(rng, scheme)
            tags = crf.viterbi_decode(emissions, model)
            loss, _ = crf.nll_and_gradient(model, sentence, tags)
            assert loss >= -1e-9

    def test_invalid_gold_rejected(self, scheme):
        model = random_model(scheme, np.random.default_rng(6))
        with pytest.raises(InvalidGoldError):
            crf.nll_and_gradient(model, Sentence("x", "ab"), ("O", "I-COM"))


def separable_dataset(scheme, n=20):
    """Tiny corpus where the pattern 'entity chars are uppercase' is exact."""
    rng = np.random.default_rng(123)
    sentences, gold = [], {}
    for i in range(n):
        prefix = "".join(rng.choice(list("abcd"), size=int(rng.integers(1, 4))))
        entity = "".join(rng.choice(list("XY"), size=int(rng.integers(2, 5))))
        suffix = "".join(rng.choice(list("efgh"), size=int(rng.integers(1, 4))))
        text = prefix + entity + suffix
        sid = f"s{i:03d}"
        sentences.append(Sentence(sid, text))
        gold[sid] = [Span(len(prefix), len(prefix) + len(entity))]
    ds = Dataset(sentences)
    ds.add_layer("gold", gold)
    return ds


class TestFit:
    def test_learns_separable_data(self, scheme):
        ds = separable_dataset(scheme)
        model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=2**12, seed=3))
        config = crf.TrainConfig(learning_rate=0.3, max_epochs=50, patience=50, seed=0)
        model, history = crf.fit(model, ds, ds, config)
        from nerpipe.evaluation import entity_prf

        predicted = {s.id: model.predict_spans(s) for s in ds.sentences}
        metrics = entity_prf(predicted, ds.layer("gold"))
        assert metrics.f1 == 1.0

    def test_early_stop_and_best_snapshot(self, scheme, monkeypatch):
        ds = separable_dataset(scheme, n=4)
        model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=256, seed=3))
        canned = iter([0.5, 0.7, 0.9, 0.9, 0.8, 0.6])
        snapshots = []

        def fake_eval(model_, dev, dev_layer, ids_cache=None):
            snapshots.append(model_.snapshot())
            return next(canned)

        monkeypatch.setattr(crf, "dev_entity_f1", fake_eval)
        config = crf.TrainConfig(learning_rate=0.1, max_epochs=50, patience=2, seed=0)
        model, history = crf.fit(model, ds, ds, config)
        assert history == [0.5, 0.7, 0.9, 0.9, 0.8]  # stops after epoch 5
        for name, arr in model.parameters().items():
            np.testing.assert_array_equal(arr, snapshots[2][name])  # epoch-3 snapshot

    def test_zero_learning_rate_is_noop(self, scheme):
        ds = separable_dataset(scheme, n=5)
        model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=256, seed=3))
        before = model.snapshot()
        config = crf.TrainConfig(learning_rate=0.0, max_epochs=5, patience=2, seed=0)
        model, _ = crf.fit(model, ds, ds, config)
        for name, arr in model.parameters().items():
            np.testing.assert_array_equal(arr, before[name])

    def test_training_determinism(self, scheme):
        ds = separable_dataset(scheme)
        outputs = []
        for _ in range(2):
            model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=512, seed=3))
            config = crf.TrainConfig(learning_rate=0.2, max_epochs=4, patience=4, seed=7)
            model, _ = crf.fit(model, ds, ds, config)
            outputs.append(model.snapshot())
        for name in outputs[0]:
            np.testing.assert_array_equal(outputs[0][name], outputs[1][name])

    def test_empty_dataset_raises(self, scheme):
        model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=64, seed=1))
        with pytest.raises(DataError):
            crf.fit(model, Dataset([]), Dataset([]), crf.TrainConfig())

    def test_divergence_detected(self, scheme):
        ds = separable_dataset(scheme, n=5)
        model = crf.CrfModel.fresh(scheme, EmitterConfig(window=1, hash_dim=256, seed=3))
        config = crf.TrainConfig(learning_rate=1e300, max_epochs=10, patience=5, seed=0)
        with pytest.raises(DivergenceError):
            crf.fit(model, ds, ds, config)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            crf.TrainConfig(learning_rate=-0.1)
        with pytest.raises(ConfigError):
            crf.TrainConfig(patience=0)

    def test_trains_on_external_emissions(self, scheme):
        # offline emission tables: the CRF still learns its transition scores
        from nerpipe.emitter import EmissionTable, ExternalEmitter

        ds = separable_dataset(scheme, n=12)
        rng = np.random.default_rng(3)
        tables = {}
        for s in ds.sentences:
            gold = spans_to_tags(s.length, ds.spans("gold", s.id), scheme)
            scores = rng.normal(0, 0.1, (s.length, scheme.num_tags))
            for i, tag in enumerate(gold):
                scores[i, scheme.tag_index(tag)] += 1.5  # informative but noisy
            tables[s.id] = EmissionTable(scores)
        model = crf.CrfModel(scheme, ExternalEmitter(scheme, tables))
        before = model.transitions.copy()
        config = crf.TrainConfig(learning_rate=0.1, max_epochs=5, patience=5, seed=0)
        model, history = crf.fit(model, ds, ds, config)
        assert not np.array_equal(model.transitions, before)
        assert history[-1] > 0.5


class TestSaveLoad:
    def make_trained(self, scheme):
        rng = np.random.default_rng(52)
        model = random_model(scheme, rng, window=2, hash_dim=512)
        model.metadata["train_seed"] = 7
        return model

    def test_round_trip_bit_identical(self, scheme, tmp_path):
        model = self.make_trained(scheme)
        path = tmp_path / "m.model"
        crf.save_model(model, path)
        loaded = crf.load_model(path)
        for name, arr in model.parameters().items():
            np.testing.assert_array_equal(arr, loaded.parameters()[name])
        assert loaded.scheme == model.scheme
        assert loaded.emitter.config == model.emitter.config
        assert loaded.metadata == model.metadata

    def test_round_trip_decodes_identically(self, scheme, tmp_path):
        rng = np.random.default_rng(53)
        model = self.make_trained(scheme)
        path = tmp_path / "m.model"
        crf.save_model(model, path)
        loaded = crf.load_model(path)
        for i in range(100):
            sentence = random_sentence(rng, int(rng.integers(1, 12)), sid=f"s{i}")
            assert loaded.decode(sentence) == model.decode(sentence)

    def test_truncated_file(self, scheme, tmp_path):
        model = self.make_trained(scheme)
        path = tmp_path / "m.model"
        crf.save_model(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptionError):
            crf.load_model(path)

    def test_flipped_payload_byte(self, scheme, tmp_path):
        model = self.make_trained(scheme)
        path = tmp_path / "m.model"
        crf.save_model(model, path)
        raw = bytearray(path.read_bytes())
        raw[-40] ^= 0xFF  # inside the last parameter block
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptionError):
            crf.load_model(path)

    def test_bumped_version(self, scheme, tmp_path):
        model = self.make_trained(scheme)
        path = tmp_path / "m.model"
        crf.save_model(model, path)
        raw = path.read_bytes()
        assert b'"format_version": 1' in raw
        path.write_bytes(raw.replace(b'"format_version": 1', b'"format_version": 9', 1))
        with pytest.raises(VersionError):
            crf.load_model(path)

    def test_not_a_model(self, tmp_path):
        path = tmp_path / "m.model"
        path.write_bytes(b"definitely not a model")
        with pytest.raises(CorruptionError):
            crf.load_model(path)
