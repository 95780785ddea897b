from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nerpipe.corpus import (
    Dataset,
    LabelScheme,
    Sentence,
    Span,
    load_dataset,
    save_dataset,
    spans_to_tags,
    split_sentences,
    tags_to_spans,
)
from nerpipe.errors import (
    InvariantError,
    OverlapError,
    ParseError,
    RangeError,
    UnknownLabelError,
)


class TestSplitSentences:
    def test_delimiters_kept(self):
        assert [s.text for s in split_sentences("A。B！C")] == ["A。", "B！", "C"]

    def test_empty_input(self):
        assert split_sentences("") == []

    def test_no_delimiters(self):
        assert [s.text for s in split_sentences("no delimiters here")] == ["no delimiters here"]

    def test_consecutive_delimiters(self):
        assert [s.text for s in split_sentences("A。。B")] == ["A。", "。", "B"]

    def test_ids_unique(self):
        ids = [s.id for s in split_sentences("a。b。c。")]
        assert len(set(ids)) == 3

    @given(st.text(alphabet="ab。！\n中", max_size=200))
    @settings(max_examples=200)
    def test_lossless(self, text):
        assert "".join(s.text for s in split_sentences(text)) == text
        assert all(s.text for s in split_sentences(text))


class TestSpansTags:
    def test_basic(self, scheme):
        assert spans_to_tags(4, [Span(1, 3)], scheme) == ("O", "B-COM", "I-COM", "O")

    def test_empty(self, scheme):
        assert spans_to_tags(3, [], scheme) == ("O", "O", "O")

    def test_overlap(self, scheme):
        with pytest.raises(OverlapError):
            spans_to_tags(3, [Span(0, 2), Span(1, 3)], scheme)

    def test_out_of_range(self, scheme):
        with pytest.raises(RangeError):
            spans_to_tags(3, [Span(1, 4)], scheme)

    def test_unknown_label(self, scheme):
        with pytest.raises(UnknownLabelError):
            spans_to_tags(3, [Span(0, 2, "LOC")], scheme)

    def test_tags_to_spans(self):
        assert tags_to_spans(["B-COM", "I-COM", "O"]) == [Span(0, 2)]

    def test_repair_on_read(self):
        assert tags_to_spans(["O", "I-COM"]) == [Span(1, 2)]

    def test_label_switch_repair(self):
        assert tags_to_spans(["B-COM", "I-ORG"]) == [Span(0, 1, "COM"), Span(1, 2, "ORG")]

    def test_no_entities(self):
        assert tags_to_spans(["O", "O", "O"]) == []

    def test_unknown_tag_reads_as_outside(self):
        assert tags_to_spans(["B-COM", "garbage", "B-COM"]) == [Span(0, 1), Span(2, 3)]

    @given(st.data())
    @settings(max_examples=300)
    def test_round_trip(self, data):
        scheme = LabelScheme(["COM", "ORG"])
        length = data.draw(st.integers(1, 12))
        spans = []
        cursor = 0
        while cursor < length:
            start = data.draw(st.integers(cursor, length))
            if start >= length:
                break
            end = data.draw(st.integers(start + 1, length))
            label = data.draw(st.sampled_from(scheme.labels))
            if data.draw(st.booleans()):
                spans.append(Span(start, end, label))
            cursor = end
        tags = spans_to_tags(length, spans, scheme)
        assert tags_to_spans(tags) == sorted(spans)


def make_dataset() -> Dataset:
    ds = Dataset([Sentence("a", "中国AB"), Sentence("b", "xyz")])
    ds.add_layer("gold", {"a": [Span(0, 2)], "b": []})
    ds.add_layer("coarse", {"a": [Span(2, 4)], "b": [Span(0, 2)]})
    return ds


class TestDatasetIO:
    def test_jsonl_round_trip(self, tmp_path):
        ds = make_dataset()
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.ids() == ds.ids()
        assert loaded.layers == ds.layers
        assert [s.text for s in loaded.sentences] == [s.text for s in ds.sentences]

    def test_jsonl_byte_exact(self, tmp_path):
        ds = make_dataset()
        first = tmp_path / "one.jsonl"
        second = tmp_path / "two.jsonl"
        save_dataset(ds, first)
        save_dataset(load_dataset(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_jsonl_key_order(self, tmp_path):
        path = tmp_path / "ds.jsonl"
        save_dataset(make_dataset(), path)
        record = json.loads(path.read_text().splitlines()[0])
        assert list(record) == ["id", "text", "layers"]

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = '{"id": "a", "text": "ab", "layers": {}}'
        path.write_text("\n".join([good] * 6 + ["{broken"]) + "\n")
        with pytest.raises(ParseError) as err:
            load_dataset(path)
        assert err.value.line == 7

    def test_invalid_span_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "text": "ab", "layers": {"gold": [{"start": 0, "end": 9, "label": "COM"}]}}\n')
        with pytest.raises(InvariantError):
            load_dataset(path)

    def test_repair_drops_bad_spans(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = {
            "id": "a", "text": "abcd",
            "layers": {"gold": [
                {"start": 0, "end": 9, "label": "COM"},
                {"start": 0, "end": 2, "label": "COM"},
                {"start": 1, "end": 3, "label": "COM"},
            ]},
        }
        path.write_text(json.dumps(record) + "\n")
        loaded = load_dataset(path, repair=True)
        assert loaded.spans("gold", "a") == (Span(0, 2),)

    def test_column_round_trip(self, tmp_path):
        ds = Dataset([Sentence("s000000", "中国AB"), Sentence("s000001", "xyz")])
        ds.add_layer("gold", {"s000000": [Span(0, 2)], "s000001": []})
        path = tmp_path / "ds.col"
        save_dataset(ds, path, format="column")
        loaded = load_dataset(path, format="column")
        assert loaded.ids() == ds.ids()
        assert [s.text for s in loaded.sentences] == [s.text for s in ds.sentences]
        assert loaded.layers == ds.layers

    def test_column_format_example(self, tmp_path):
        path = tmp_path / "ds.col"
        path.write_text("A\tB-COM\nB\tI-COM\n\n", encoding="utf-8")
        loaded = load_dataset(path, format="column")
        assert len(loaded) == 1
        assert loaded.sentences[0].text == "AB"
        assert loaded.spans("gold", "s000000") == (Span(0, 2),)

    def test_column_needs_single_layer(self, tmp_path):
        from nerpipe.errors import DataError

        with pytest.raises(DataError):
            save_dataset(make_dataset(), tmp_path / "x.col", format="column")

    def test_unicode_indices(self, tmp_path):
        # Span indices count scalar values, not bytes: 中国AB has length 4.
        ds = make_dataset()
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        sentence = loaded.sentence("a")
        assert sentence.length == 4
        span = loaded.spans("gold", "a")[0]
        assert sentence.text[span.start : span.end] == "中国"


class TestLabelScheme:
    def test_tag_order(self, two_label_scheme):
        assert two_label_scheme.tags == ("O", "B-COM", "I-COM", "B-ORG", "I-ORG")
        assert two_label_scheme.num_tags == 5

    def test_rejects_empty(self):
        with pytest.raises(InvariantError):
            LabelScheme([])

    def test_rejects_duplicates(self):
        with pytest.raises(InvariantError):
            LabelScheme(["COM", "COM"])

    def test_rejects_whitespace(self):
        with pytest.raises(InvariantError):
            LabelScheme(["C M"])

    def test_unknown_tag(self, scheme):
        with pytest.raises(UnknownLabelError):
            scheme.tag_index("B-LOC")
