"""End-to-end helpers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import CorpusStore
from .embedding import EmbeddingTable, Vocabulary, random_table, tfidf_fit
from .encoder import TwinEncoder
from .evaluation import Judgments, MetricsReport, evaluate_run
from .representation import EmbeddingStore, embed_corpus
from .retrieval import RankedList, avg_index, baseline_top_n, tfidf_index, top_n
from .trainer import TrainConfig, TrainReport, train


def judgments_for(store: CorpusStore, relevant: dict | None = None) -> Judgments:
    """Ground truth from the corpus (or an explicit qrels mapping), with the
    candidate split as the judged pool."""
    rel = store.groundtruth() if relevant is None else relevant
    return Judgments(dict(rel), frozenset(store.ids("candidate")))


def retrieve_pairs(emb: EmbeddingStore, store: CorpusStore, depth: int | None = None) -> list[RankedList]:
    """Rank the candidate split for every embedded test document."""
    candidates = [c for c in store.ids("candidate") if c in emb]
    return [top_n(emb.get(q), emb, depth, candidates) for q in store.ids("test") if q in emb]


def retrieve_baseline(
    store: CorpusStore, kind: str, table: EmbeddingTable | None = None, depth: int | None = None
) -> list[RankedList]:
    if kind == "avg":
        if table is None:
            raise ValueError("the avg baseline needs an embedding table")
        index = avg_index(store, table)
    elif kind == "tfidf":
        index = tfidf_index(tfidf_fit(store))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    candidates = store.ids("candidate")
    return [
        baseline_top_n(q, index.unit[index.row[q]], index, depth, candidates) for q in store.ids("test")
    ]


def evaluate_lists(
    ranked: list[RankedList], judgments: Judgments, n: int = 20, cutoff: int | None = None
) -> MetricsReport:
    run = {rl.query_id: rl.ids for rl in ranked}
    return evaluate_run(run, judgments, n, cutoff)


@dataclass
class CTPEResult:
    twin: TwinEncoder
    report: TrainReport
    embeddings: EmbeddingStore
    metrics: MetricsReport


def run_ctpe(store: CorpusStore, table: EmbeddingTable, config: TrainConfig, n: int = 20) -> CTPEResult:
    """Train, embed, retrieve and evaluate on one corpus."""
    twin, report = train(store, table, config)
    emb = embed_corpus(twin, table, store)
    metrics = evaluate_lists(retrieve_pairs(emb, store), judgments_for(store), n)
    return CTPEResult(twin, report, emb, metrics)


def corpus_random_table(store: CorpusStore, dim: int, seed: int) -> EmbeddingTable:
    return random_table(Vocabulary.from_store(store), dim, seed)
