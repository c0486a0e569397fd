import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctpe.corpus import (
    CorpusStore,
    SegmentationSpec,
    TokenizedDocument,
    dump_store,
    load_corpus,
    preprocess_text,
    read_raw,
    read_store,
    resegment,
    segment,
    split_point,
    split_sentences,
)
from ctpe.errors import DuplicateId, EmptySide, ParseError, UnknownBoundary

from conftest import write_jsonl


def doc_of(*parts, names=None, doc_id="d"):
    names = names or tuple(f"p{i}" for i in range(len(parts)))
    return TokenizedDocument(doc_id, tuple(names), tuple(tuple(p) for p in parts))


class TestPreprocess:
    def test_entity_and_number(self):
        assert preprocess_text("Deep&amp;Learning 2019") == ["deep", "learning"]

    def test_empty(self):
        assert preprocess_text("") == []

    def test_tags_and_hyphen(self):
        assert preprocess_text("<p>Graph-based IR</p>") == ["graph", "based", "ir"]

    def test_tags_removed_before_unescape(self):
        # An escaped tag is text, not markup: its letters survive.
        assert preprocess_text("&lt;b&gt;bold") == ["b", "bold"]

    def test_unescaped_capitals_are_lowercased(self):
        assert preprocess_text("&#65;BC") == ["abc"]

    def test_unicode_letters_count(self):
        assert preprocess_text("α-helix 3β 42") == ["α", "helix", "3β"]

    def test_digits_with_letters_kept(self):
        assert preprocess_text("word2vec, 100d!") == ["word2vec", "100d"]

    @given(st.text(max_size=200))
    @settings(max_examples=300, deadline=None)
    def test_tokens_lowercase_with_a_letter(self, text):
        for tok in preprocess_text(text):
            assert any(ch.isalpha() for ch in tok)
            assert tok == tok.lower()
            assert not any(ch.isspace() for ch in tok)

    @given(st.text(max_size=200))
    @settings(max_examples=300, deadline=None)
    def test_idempotent(self, text):
        once = preprocess_text(text)
        assert preprocess_text(" ".join(once)) == once


class TestSplitSentences:
    def test_examples(self):
        assert split_sentences("A b. C d!") == ["A b", "C d"]
        assert split_sentences("no terminator") == ["no terminator"]
        assert split_sentences("") == []

    def test_runs_of_terminators(self):
        assert split_sentences("Really?! Yes...") == ["Really", "Yes"]

    @given(st.text(alphabet=st.sampled_from(list("abc XYZ.!?,-")), max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_per_sentence_tokens_equal_whole_text(self, text):
        per_sentence = [t for s in split_sentences(text) for t in preprocess_text(s)]
        assert per_sentence == preprocess_text(text)


class TestSegment:
    def test_percent_floor(self):
        doc = doc_of([f"t{i}" for i in range(10)])
        pair = segment(doc, SegmentationSpec.at_percent(0.2), 200)
        assert pair.f == ("t0", "t1")
        assert len(pair.b) == 8

    def test_meaningful_seam(self):
        doc = doc_of(["t"] * 4, ["a"] * 50, names=("title", "abstract"))
        pair = segment(doc, SegmentationSpec(boundary="abstract"), 200)
        assert (len(pair.f), len(pair.b)) == (4, 50)
        assert segment(doc, SegmentationSpec(boundary=1), 200) == pair

    def test_truncation_keeps_first_tokens(self):
        doc = doc_of(["t"], [f"a{i}" for i in range(500)])
        pair = segment(doc, SegmentationSpec(), 200)
        assert len(pair.b) == 200
        assert pair.b[0] == "a0" and pair.b[-1] == "a199"

    def test_multi_part_seam(self):
        doc = doc_of(["a"], ["b", "b"], ["c", "c", "c"], names=("title", "abstract", "claim"))
        pair = segment(doc, SegmentationSpec(boundary="claim"), 10)
        assert pair.f == ("a", "b", "b") and pair.b == ("c", "c", "c")

    def test_split_point_is_exact(self):
        # 0.29 * 100 is 28.999999999999996 in binary floating point.
        assert split_point(100, 0.29) == 29
        assert split_point(10, 0.2) == 2
        assert split_point(7, 0.5) == 3

    def test_empty_side(self):
        with pytest.raises(EmptySide):
            segment(doc_of(["a", "b", "c"]), SegmentationSpec.at_percent(0.2), 10)
        with pytest.raises(EmptySide):
            segment(doc_of(["a"], []), SegmentationSpec(), 10)

    def test_unknown_boundary(self):
        doc = doc_of(["a"], ["b"], names=("title", "abstract"))
        with pytest.raises(UnknownBoundary):
            segment(doc, SegmentationSpec(boundary="claim"), 10)
        with pytest.raises(UnknownBoundary):
            segment(doc, SegmentationSpec(boundary=2), 10)
        with pytest.raises(UnknownBoundary):
            # The first part name is not a seam: it would leave f empty.
            segment(doc, SegmentationSpec(boundary="title"), 10)

    def test_spec_validation(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                SegmentationSpec.at_percent(bad)
        with pytest.raises(ValueError):
            SegmentationSpec(boundary=0)
        with pytest.raises(ValueError):
            SegmentationSpec(mode="sentence")

    @given(
        st.integers(min_value=2, max_value=300),
        st.integers(min_value=1, max_value=99),
    )
    @settings(max_examples=200, deadline=None)
    def test_complementary_positions(self, n, pct):
        tokens = [f"w{i}" for i in range(n)]
        p = pct / 100
        k = split_point(n, p)
        k_mirror = split_point(n, 1 - p)
        # Both cuts partition the same token list.
        assert tokens[:k] + tokens[k:] == tokens
        assert tokens[:k_mirror] + tokens[k_mirror:] == tokens
        assert k + k_mirror in (n - 1, n)
        doc = doc_of(tokens)
        if 0 < k < n:
            pair = segment(doc, SegmentationSpec.at_percent(p), n)
            assert pair.f + pair.b == tuple(tokens)

    @given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=40), st.integers(1, 30))
    @settings(max_examples=100, deadline=None)
    def test_sides_bounded_by_l_max(self, nf, nb, l_max):
        pair = segment(doc_of(["f"] * nf, ["b"] * nb), SegmentationSpec(), l_max)
        assert 1 <= len(pair.f) <= l_max and 1 <= len(pair.b) <= l_max


class TestLoadCorpus:
    def test_valid_file(self, tiny_raw):
        store = load_corpus(tiny_raw, SegmentationSpec(), 200)
        assert len(store.documents) == 6
        assert store.counts == {"candidate": 4, "test": 2}
        assert store.pairs["d1"].f == ("graph", "search")
        assert store.groundtruth() == {"d5": frozenset({"d1", "d2"}), "d6": frozenset({"d3", "d4"})}
        assert set(store.pairs) <= set(store.documents)

    def test_three_lines(self, tmp_path):
        rows = [{"id": f"x{i}", "parts": {"t": "a b", "a": "c d"}} for i in range(3)]
        store = load_corpus(write_jsonl(tmp_path / "c.jsonl", rows), SegmentationSpec(), 5)
        assert len(store.documents) == 3

    def test_duplicate_id(self, tmp_path):
        rows = [{"id": "x", "parts": {"t": "a", "a": "b"}}] * 2
        with pytest.raises(DuplicateId):
            load_corpus(write_jsonl(tmp_path / "c.jsonl", rows), SegmentationSpec(), 5)

    def test_empty_latter_side_dropped(self, tmp_path):
        rows = [
            {"id": "x", "parts": {"t": "a", "a": "b"}},
            {"id": "y", "parts": {"t": "a", "a": "1999 -- 2000"}},
        ]
        store = load_corpus(write_jsonl(tmp_path / "c.jsonl", rows), SegmentationSpec(), 5)
        assert store.dropped == ["y"]
        assert "y" in store.documents and "y" not in store.pairs

    @pytest.mark.parametrize(
        "line, needle",
        [
            ("{not json", "invalid JSON"),
            ('["a"]', "JSON object"),
            ('{"id": "", "parts": {"t": "a"}}', "'id'"),
            ('{"id": "x", "parts": {"t": 3}}', "'parts'"),
            ('{"id": "x", "parts": {"t": "  "}}', "no nonempty part"),
            ('{"id": "x", "parts": {"t": "a"}, "split": "train"}', "'split'"),
            ('{"id": "x", "parts": {"t": "a"}, "groundtruth": "y"}', "'groundtruth'"),
        ],
    )
    def test_parse_errors_carry_line_number(self, tmp_path, line, needle):
        path = write_jsonl(tmp_path / "c.jsonl", [{"id": "ok", "parts": {"t": "a", "b": "c"}}, line])
        with pytest.raises(ParseError) as info:
            load_corpus(path, SegmentationSpec(), 5)
        assert info.value.line == 2
        assert needle in str(info.value)
        assert ":2:" in str(info.value)

    def test_part_order_from_header_flag_and_keys(self, tmp_path):
        rows = [{"id": "x", "parts": {"abstract": "b", "title": "a"}}]
        path = write_jsonl(tmp_path / "c.jsonl", rows)
        assert read_raw(path)[0] == ("abstract", "title")
        assert read_raw(path, ["title", "abstract"])[0] == ("title", "abstract")
        path2 = write_jsonl(tmp_path / "d.jsonl", rows, {"part_order": ["title", "abstract"]})
        store = load_corpus(path2, SegmentationSpec(), 5)
        assert store.pairs["x"].f == ("a",) and store.pairs["x"].b == ("b",)

    def test_late_header_rejected(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [{"id": "x", "parts": {"t": "a"}}, {"part_order": ["t"]}])
        with pytest.raises(ParseError):
            read_raw(path)

    def test_serialization_roundtrip_and_determinism(self, tiny_raw, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        dump_store(load_corpus(tiny_raw, SegmentationSpec(), 3), a)
        dump_store(load_corpus(tiny_raw, SegmentationSpec(), 3), b)
        assert a.read_bytes() == b.read_bytes()
        back = read_store(a)
        assert isinstance(back, CorpusStore)
        c = tmp_path / "c.jsonl"
        dump_store(back, c)
        assert c.read_bytes() == a.read_bytes()
        assert back.pairs == load_corpus(tiny_raw, SegmentationSpec(), 3).pairs

    def test_read_store_rejects_raw_file(self, tiny_raw):
        with pytest.raises(ParseError):
            read_store(tiny_raw)

    def test_resegment(self, tiny_store):
        cut = resegment(tiny_store, SegmentationSpec.at_percent(0.5))
        doc = tiny_store.documents["d1"]
        k = split_point(len(doc.tokens), 0.5)
        assert cut.pairs["d1"].f == tuple(doc.tokens[:k])
        assert cut.segmentation.label() == "50%"
        assert tiny_store.segmentation.label() == "m(1)"

    def test_header_is_json(self, tiny_store, tmp_path):
        path = tmp_path / "s.jsonl"
        dump_store(tiny_store, path)
        header = json.loads(path.read_text().splitlines()[0])
        assert header["format"] == "ctpe-corpus/1"
        assert header["part_order"] == ["title", "abstract"]
