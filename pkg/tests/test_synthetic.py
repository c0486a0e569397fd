import json

import pytest

from ctpe.corpus import SegmentationSpec, load_corpus
from ctpe.evaluation import read_qrels
from ctpe.pipeline import evaluate_lists, judgments_for, retrieve_baseline
from ctpe.synthetic import SyntheticSpec, generate, generate_files, shared_word


def build(tmp_path, **kw):
    spec = SyntheticSpec(**kw)
    generate_files(spec, tmp_path / "c.jsonl", tmp_path / "q.txt")
    return spec, load_corpus(tmp_path / "c.jsonl", SegmentationSpec(), 200)


class TestGenerate:
    def test_counts_and_splits(self, tmp_path):
        _, store = build(tmp_path, topics=2, docs_per_topic=100, test_per_topic=5)
        assert len(store.ids("candidate")) == 200 and len(store.ids("test")) == 10
        gt = store.groundtruth()
        assert all(len(v) == 100 for v in gt.values())
        assert gt == read_qrels(tmp_path / "q.txt")

    def test_noise_free_topics_are_exclusive(self):
        records, _ = generate(SyntheticSpec(topics=3, docs_per_topic=20, noise=0.0))
        for rec in records:
            words = " ".join(rec["parts"].values()).lower().replace(".", "").split()
            assert all(w.startswith(f"topic{rec['topic']}term") for w in words)

    def test_noise_words_are_shared(self):
        records, _ = generate(SyntheticSpec(topics=2, docs_per_topic=30, noise=0.5))
        commons = {shared_word(i) for i in range(200)}
        abstracts = [rec["parts"]["abstract"].lower().rstrip(".").split() for rec in records]
        frac = sum(w in commons for a in abstracts for w in a) / sum(map(len, abstracts))
        assert 0.45 < frac < 0.55

    def test_lengths_in_range(self):
        spec = SyntheticSpec(topics=2, docs_per_topic=40)
        for rec in generate(spec)[0]:
            assert spec.f_len[0] <= len(rec["parts"]["title"].split()) <= spec.f_len[1]
            assert spec.b_len[0] <= len(rec["parts"]["abstract"].split()) <= spec.b_len[1]

    def test_same_seed_same_bytes(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        for d in ("a", "b"):
            generate_files(SyntheticSpec(seed=7), tmp_path / d / "c.jsonl", tmp_path / d / "q.txt")
        for name in ("c.jsonl", "q.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        generate_files(SyntheticSpec(seed=8), tmp_path / "c.jsonl", tmp_path / "q.txt")
        assert (tmp_path / "c.jsonl").read_bytes() != (tmp_path / "a" / "c.jsonl").read_bytes()

    def test_header_declares_part_order(self, tmp_path):
        build(tmp_path, topics=1, docs_per_topic=2, test_per_topic=1)
        header = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
        assert header == {"part_order": ["title", "abstract"]}

    def test_tfidf_perfect_without_noise(self, tmp_path):
        _, store = build(tmp_path, topics=2, noise=0.0)
        report = evaluate_lists(retrieve_baseline(store, "tfidf"), judgments_for(store))
        assert report.means["MAP"] == pytest.approx(1.0)

    @pytest.mark.parametrize("kw", [{"topics": 0}, {"noise": 1.0}, {"f_len": (5, 3)}, {"zipf": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SyntheticSpec(**kw)
