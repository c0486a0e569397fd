"""Topic-structured synthetic corpora with known ground truth.

Each document belongs to one topic. A token is off-topic with probability
``noise`` and then comes from the shared vocabulary that every topic uses;
otherwise it is a word of the document's own topic. Word frequencies within
each vocabulary are Zipf-distributed. Titles have their own noise rate. A test
document's ground truth is every candidate of its topic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .evaluation import write_qrels

PART_ORDER = ("title", "abstract")


@dataclass(frozen=True)
class SyntheticSpec:
    topics: int = 4
    vocab_per_topic: int = 400
    shared_vocab: int = 200
    docs_per_topic: int = 100
    test_per_topic: int = 10
    f_len: tuple[int, int] = (6, 10)
    b_len: tuple[int, int] = (24, 36)
    noise: float = 0.3
    title_noise: float = 0.0
    zipf: float = 1.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.topics, self.vocab_per_topic, self.shared_vocab, self.docs_per_topic, self.test_per_topic)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        for lo, hi in (self.f_len, self.b_len):
            if not (1 <= lo <= hi):
                raise ValueError("length ranges must satisfy 1 <= lo <= hi")
        for noise in (self.noise, self.title_noise):
            if not 0.0 <= noise < 1.0:
                raise ValueError("noise rates must lie in [0, 1)")
        if self.zipf < 0:
            raise ValueError("zipf exponent must be >= 0")


def topic_word(topic: int, i: int) -> str:
    return f"topic{topic}term{i}"


def shared_word(i: int) -> str:
    return f"common{i}"


def _zipf_probs(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate(spec: SyntheticSpec) -> tuple[list[dict], dict[str, frozenset[str]]]:
    """Return ``(records, qrels)``; records follow the raw corpus schema."""
    rng = np.random.default_rng(spec.seed)
    topic_probs = _zipf_probs(spec.vocab_per_topic, spec.zipf)
    shared_probs = _zipf_probs(spec.shared_vocab, spec.zipf)
    # Per-topic frequency ranks are shuffled so topics differ in their head words.
    topic_rank = [rng.permutation(spec.vocab_per_topic) for _ in range(spec.topics)]
    shared_rank = rng.permutation(spec.shared_vocab)

    def topic_draw(topic: int) -> str:
        return topic_word(topic, int(topic_rank[topic][rng.choice(spec.vocab_per_topic, p=topic_probs)]))

    def sample(topic: int, length: int, noise: float) -> list[str]:
        words = []
        for _ in range(length):
            if rng.random() < noise:
                words.append(shared_word(int(shared_rank[rng.choice(spec.shared_vocab, p=shared_probs)])))
            else:
                words.append(topic_draw(topic))
        return words

    def text(words: list[str]) -> str:
        return " ".join([words[0].capitalize()] + words[1:]) + "."

    per_split = {"candidate": spec.docs_per_topic, "test": spec.test_per_topic}
    records: list[dict] = []
    for split, prefix in (("candidate", "c"), ("test", "q")):
        n = per_split[split] * spec.topics
        # Shuffle topic labels over ids so id order carries no topic signal.
        labels = rng.permutation(np.repeat(np.arange(spec.topics), per_split[split]))
        width = len(str(n - 1))
        for k, topic in enumerate(labels):
            n_title = int(rng.integers(spec.f_len[0], spec.f_len[1] + 1))
            n_abstract = int(rng.integers(spec.b_len[0], spec.b_len[1] + 1))
            title = sample(int(topic), n_title, spec.title_noise)
            abstract = sample(int(topic), n_abstract, spec.noise)
            records.append(
                {
                    "id": f"{prefix}{k:0{width}d}",
                    "topic": int(topic),
                    "split": split,
                    "parts": {"title": text(title), "abstract": text(abstract)},
                }
            )
    by_topic: dict[int, list[str]] = {}
    for rec in records:
        if rec["split"] == "candidate":
            by_topic.setdefault(rec["topic"], []).append(rec["id"])
    qrels = {}
    for rec in records:
        if rec["split"] == "test":
            rec["groundtruth"] = sorted(by_topic.get(rec["topic"], []))
            qrels[rec["id"]] = frozenset(rec["groundtruth"])
    return records, qrels


def write_corpus(records: list[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"part_order": list(PART_ORDER)}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def generate_files(spec: SyntheticSpec, corpus_path, qrels_path) -> None:
    """Write the raw corpus JSON-lines file and the matching qrels file."""
    records, qrels = generate(spec)
    write_corpus(records, corpus_path)
    write_qrels(qrels, qrels_path)


def spec_to_json(spec: SyntheticSpec) -> dict:
    return asdict(spec)
