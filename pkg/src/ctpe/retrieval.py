"""Ranking candidates for a query document.

Coupled-pair embeddings are compared crosswise,

    sim(d_i, d_j) = cos(v_f_i, v_b_j) + cos(v_f_j, v_b_i),

which scores how well each document continues the other. Single-vector
baselines (averaged word vectors, tf-idf) use plain cosine similarity.
Scoring is exhaustive; ties are broken by ascending candidate id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .embedding import EmbeddingTable, rank_scores
from .encoder import cosine
from .errors import AllTokensOOV, FingerprintMismatch, UnknownId, ZeroVector
from .representation import DocEmbedding, EmbeddingStore


@dataclass
class RankedList:
    query_id: str
    items: list[tuple[str, float]] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [c for c, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def __len__(self):
        return len(self.items)


def _check_fingerprints(a: str | None, b: str | None) -> None:
    if a is not None and b is not None and a != b:
        raise FingerprintMismatch(f"embeddings come from different models ({a} vs {b})")


def pair_similarity(a: DocEmbedding, b: DocEmbedding) -> float:
    _check_fingerprints(a.fingerprint, b.fingerprint)
    if a.v_f.shape != b.v_f.shape:
        raise FingerprintMismatch("embeddings have different dimensions")
    return cosine(a.v_f, b.v_b) + cosine(a.v_b, b.v_f)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("a stored embedding is the zero vector")
    return m / norms


def _ranked(query_id: str, ids: Sequence[str], scores: np.ndarray, n: int | None) -> RankedList:
    order = rank_scores(ids, scores, n)
    return RankedList(query_id, [(ids[i], float(scores[i])) for i in order])


def top_n(
    query: DocEmbedding, store: EmbeddingStore, n: int | None = 20, candidates: Iterable[str] | None = None
) -> RankedList:
    """The ``n`` candidates with the highest pair similarity to ``query``.

    ``candidates`` restricts the pool (default: every stored document); the
    query itself is always excluded. ``n=None`` ranks the whole pool.
    """
    _check_fingerprints(query.fingerprint, store.fingerprint)
    if query.v_f.shape != (store.dim,):
        raise FingerprintMismatch(f"query dimension {query.v_f.shape} does not match store {store.dim}")
    pool = store.ids() if candidates is None else sorted(candidates)
    missing = [c for c in pool if c not in store]
    if missing:
        raise UnknownId(f"{len(missing)} candidate(s) not in the store, e.g. {missing[0]!r}")
    ids = [c for c in pool if c != query.doc_id]
    cf, cb = store.matrices(ids)
    qf = query.v_f / np.linalg.norm(query.v_f)
    qb = query.v_b / np.linalg.norm(query.v_b)
    scores = _unit_rows(cb) @ qf + _unit_rows(cf) @ qb if ids else np.zeros(0)
    return _ranked(query.doc_id, ids, scores, n)


def avg_embed(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Mean of the in-vocabulary token vectors."""
    idx = table.lookup(tokens)
    if idx.size == 0:
        raise AllTokensOOV(f"none of {len(tokens)} tokens is in the vocabulary")
    return table.vectors[idx].mean(axis=0)


class VectorIndex:
    """Single-vector document representations (dense rows or sparse rows).

    Rows are L2-normalized once; an all-zero row scores 0 against everything.
    """

    def __init__(self, ids: Sequence[str], matrix):
        self.ids = list(ids)
        self.row = {doc_id: i for i, doc_id in enumerate(self.ids)}
        if len(self.row) != len(self.ids):
            raise ValueError("duplicate ids in vector index")
        self.sparse = sp.issparse(matrix)
        if self.sparse:
            matrix = sp.csr_matrix(matrix, dtype=np.float64)
            norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
            safe = np.where(norms > 0, norms, 1.0)
            self.unit = sp.csr_matrix(sp.diags(1.0 / safe) @ matrix)
        else:
            matrix = np.asarray(matrix, dtype=np.float64)
            norms = np.linalg.norm(matrix, axis=1)
            safe = np.where(norms > 0, norms, 1.0)
            self.unit = matrix / safe[:, None]
        self.norms = norms

    def __len__(self):
        return len(self.ids)

    def scores(self, query_vec) -> np.ndarray:
        if sp.issparse(query_vec):
            q = sp.csr_matrix(query_vec, dtype=np.float64)
            qn = np.sqrt(q.multiply(q).sum())
            if qn == 0:
                return np.zeros(len(self.ids))
            out = self.unit @ (q.T / qn)
            return np.asarray(out.todense() if sp.issparse(out) else out).ravel()
        q = np.asarray(query_vec, dtype=np.float64).ravel()
        qn = np.linalg.norm(q)
        if qn == 0:
            return np.zeros(len(self.ids))
        out = self.unit @ (q / qn)
        return np.asarray(out).ravel()


def baseline_top_n(
    query_id: str, query_vec, index: VectorIndex, n: int | None = 20, candidates: Iterable[str] | None = None
) -> RankedList:
    """Cosine ranking of single-vector representations (avg / tf-idf)."""
    scores = index.scores(query_vec)
    if candidates is None:
        keep = [i for i, c in enumerate(index.ids) if c != query_id]
    else:
        try:
            keep = sorted(index.row[c] for c in set(candidates) if c != query_id)
        except KeyError as exc:
            raise UnknownId(f"candidate {exc.args[0]!r} is not indexed") from None
    ids = [index.ids[i] for i in keep]
    return _ranked(query_id, ids, scores[keep], n)


def avg_index(store, table: EmbeddingTable) -> VectorIndex:
    """Averaged word vectors over each document's former+latter tokens.

    Documents with no in-vocabulary token get a zero row.
    """
    ids = store.ids()
    rows = np.zeros((len(ids), table.dim))
    for k, doc_id in enumerate(ids):
        pair = store.pairs[doc_id]
        try:
            rows[k] = avg_embed(list(pair.f) + list(pair.b), table)
        except AllTokensOOV:
            pass
    return VectorIndex(ids, rows)


def tfidf_index(tfidf) -> VectorIndex:
    return VectorIndex(tfidf.ids, tfidf.matrix)


# ---------------------------------------------------------------------------
# Run files
# ---------------------------------------------------------------------------


def format_score(score: float) -> str:
    return repr(float(score))


def write_run(ranked: Iterable[RankedList], path) -> None:
    """TREC-style run: ``query_id candidate_id rank score`` per line."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rl in ranked:
            for rank, (cid, score) in enumerate(rl.items, start=1):
                fh.write(f"{rl.query_id} {cid} {rank} {format_score(score)}\n")
