"""Frozen word-vector tables and the TF-IDF index.

Tables map a token sequence to a ``dim x l`` matrix whose columns are the
vectors of the in-vocabulary tokens, zero-padded on the right. They are never
updated during encoder training.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import AllTokensOOV, ConfigError, DimMismatch, ParseError, UnknownId

logger = logging.getLogger(__name__)


class Vocabulary:
    """Dense token -> index map."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        for tok in tokens:
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)

    @classmethod
    def from_store(cls, store) -> "Vocabulary":
        """Sorted vocabulary of every token in the corpus.

        Built from whole documents rather than their truncated pairs, so the
        vocabulary does not change when the corpus is re-segmented.
        """
        seen = set()
        for doc in store.documents.values():
            seen.update(doc.tokens)
        return cls(sorted(seen))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def get(self, token: str) -> int | None:
        return self.index.get(token)


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    vectors: np.ndarray  # (size, dim) float64

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.vocab.size:
            raise DimMismatch(
                f"vectors shape {self.vectors.shape} does not match vocabulary of {self.vocab.size}"
            )
        if self.vectors.shape[1] < 1:
            raise DimMismatch("embedding dimension must be positive")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.vocab.size} {self.dim}\n".encode())
        h.update("\n".join(self.vocab.tokens).encode("utf-8"))
        h.update(self.vectors.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        """Row indices of the in-vocabulary tokens, in order."""
        idx = [self.vocab.index[t] for t in tokens if t in self.vocab.index]
        return np.asarray(idx, dtype=np.int64)


@dataclass
class SequenceMatrix:
    data: np.ndarray  # (dim, l); columns >= valid_len are zero
    valid_len: int

    @property
    def length(self) -> int:
        return self.data.shape[1]


def random_table(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingTable:
    """i.i.d. uniform vectors on ``[-0.5/dim, 0.5/dim]``."""
    if dim < 1:
        raise ConfigError("dim must be positive")
    rng = np.random.default_rng(seed)
    half = 0.5 / dim
    return EmbeddingTable(vocab, rng.uniform(-half, half, size=(vocab.size, dim)))


def _is_header(fields: list[str]) -> bool:
    return len(fields) == 2 and all(f.isdigit() for f in fields)


def load_pretrained(path, dim: int | None = None) -> EmbeddingTable:
    """Read a word2vec-style text file: optional ``count dim`` header, then
    ``token v1 ... v_dim`` per line."""
    path = Path(path)
    tokens: list[str] = []
    rows: list[list[float]] = []
    declared_count = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if lineno == 1 and _is_header(fields):
                declared_count, header_dim = int(fields[0]), int(fields[1])
                if dim is not None and header_dim != dim:
                    raise DimMismatch(f"{path}: header declares dim {header_dim}, expected {dim}")
                dim = header_dim
                continue
            tok, values = fields[0], fields[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise DimMismatch(f"{path}:{lineno}: {len(values)} values, expected dim {dim}")
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric vector entry", lineno, path) from None
            tokens.append(tok)
    if declared_count is not None and declared_count != len(tokens):
        raise ParseError(f"header declares {declared_count} rows, found {len(tokens)}", None, path)
    if dim is None:
        raise ParseError("no vectors found", None, path)
    try:
        vocab = Vocabulary(tokens)
    except ValueError as exc:
        raise ParseError(str(exc), None, path) from None
    vectors = np.asarray(rows, dtype=np.float64).reshape(len(tokens), dim)
    return EmbeddingTable(vocab, vectors)


def save_table(table: EmbeddingTable, path) -> None:
    """Write ``table`` in the text format read by :func:`load_pretrained`.

    Floats are written with ``repr`` so a load round-trips bit-exactly.
    """
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{table.vocab.size} {table.dim}\n")
        for tok, row in zip(table.vocab.tokens, table.vectors):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


def embed_sequence(tokens: Sequence[str], table: EmbeddingTable, l: int) -> SequenceMatrix:
    """Place the first ``l`` in-vocabulary token vectors as columns."""
    idx = table.lookup(tokens)
    if idx.size == 0:
        raise AllTokensOOV(f"none of {len(tokens)} tokens is in the vocabulary")
    idx = idx[:l]
    data = np.zeros((table.dim, l))
    data[:, : idx.size] = table.vectors[idx].T
    return SequenceMatrix(data, int(idx.size))


# ---------------------------------------------------------------------------
# TF-IDF
# ---------------------------------------------------------------------------


class TfIdfIndex:
    """Raw-count tf times ``ln(N / df)`` idf, one row per document.

    Rows are kept L2-normalized so cosine similarity is a sparse dot product.
    """

    def __init__(self, ids: list[str], vocab: Vocabulary, idf: np.ndarray, matrix: sp.csr_matrix):
        self.ids = ids
        self.vocab = vocab
        self.idf = idf
        self.matrix = matrix  # unnormalized tf-idf
        self.row = {doc_id: i for i, doc_id in enumerate(ids)}
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        self.norms = norms
        safe = np.where(norms > 0, norms, 1.0)
        self.normalized = sp.csr_matrix(sp.diags(1.0 / safe) @ matrix)

    def __len__(self):
        return len(self.ids)

    def vector(self, doc_id: str) -> dict[str, float]:
        """Sparse tf-idf weights of one document as ``{term: weight}``."""
        if doc_id not in self.row:
            raise UnknownId(f"document {doc_id!r} is not indexed")
        r = self.matrix.getrow(self.row[doc_id])
        return {self.vocab.tokens[j]: float(v) for j, v in zip(r.indices, r.data)}

    def similarities(self, doc_id: str) -> np.ndarray:
        """Cosine similarity of ``doc_id`` against every indexed document."""
        if doc_id not in self.row:
            raise UnknownId(f"document {doc_id!r} is not indexed")
        q = self.normalized.getrow(self.row[doc_id])
        return np.asarray((self.normalized @ q.T).todense()).ravel()

    def transform(self, tokens: Sequence[str]) -> sp.csr_matrix:
        """tf-idf row vector for an arbitrary token list (unknown terms dropped)."""
        counts = Counter(t for t in tokens if t in self.vocab.index)
        cols = np.array([self.vocab.index[t] for t in counts], dtype=np.int64)
        vals = np.array([counts[t] for t in counts], dtype=np.float64) * self.idf[cols]
        return sp.csr_matrix((vals, (np.zeros_like(cols), cols)), shape=(1, self.vocab.size))


def document_tokens(pair) -> list[str]:
    return list(pair.f) + list(pair.b)


def tfidf_fit(store) -> TfIdfIndex:
    """Fit over every coupled pair of ``store`` (former then latter tokens)."""
    ids = store.ids()
    counts = [Counter(document_tokens(store.pairs[i])) for i in ids]
    df: Counter = Counter()
    for c in counts:
        df.update(c.keys())
    vocab = Vocabulary(sorted(df))
    n_docs = len(ids)
    idf = np.array([math.log(n_docs / df[t]) for t in vocab.tokens], dtype=np.float64)
    rows, cols, vals = [], [], []
    for r, c in enumerate(counts):
        for term, tf in sorted(c.items()):
            j = vocab.index[term]
            rows.append(r)
            cols.append(j)
            vals.append(tf * idf[j])
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n_docs, vocab.size), dtype=np.float64)
    matrix.eliminate_zeros()
    return TfIdfIndex(ids, vocab, idf, matrix)


def rank_scores(ids: Sequence[str], scores: np.ndarray, k: int | None = None) -> list[int]:
    """Positions ordered by descending score, ties by ascending id."""
    order = np.lexsort((np.asarray(ids, dtype=str), -np.asarray(scores, dtype=np.float64)))
    order = order.tolist()
    return order if k is None else order[:k]


def tfidf_topk(index: TfIdfIndex, doc_id: str, k: int) -> list[str]:
    """The ``k`` documents most tf-idf-similar to ``doc_id``, excluding itself."""
    scores = index.similarities(doc_id)
    q = index.row[doc_id]
    order = [i for i in rank_scores(index.ids, scores) if i != q]
    return [index.ids[i] for i in order[:k]]


@dataclass
class EncodedPairs:
    """Former/latter token-row indices for a set of coupled pairs.

    Matrices are materialized per batch so memory stays ``O(N * l)``.
    """

    table: EmbeddingTable
    ids: list[str]
    f_idx: np.ndarray  # (N, l) row indices, -1 = padding
    f_len: np.ndarray  # (N,)
    b_idx: np.ndarray
    b_len: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def l(self) -> int:
        return self.f_idx.shape[1]

    def matrices(self, side: str, rows) -> np.ndarray:
        """``(B, dim, l)`` input matrices for ``side`` in ``{"f", "b"}``."""
        idx = (self.f_idx if side == "f" else self.b_idx)[np.asarray(rows, dtype=np.int64)]
        return self._padded_vectors[idx].transpose(0, 2, 1)

    @cached_property
    def _padded_vectors(self) -> np.ndarray:
        # Index -1 selects this trailing zero row.
        return np.vstack([self.table.vectors, np.zeros((1, self.table.dim))])

    def lengths(self, side: str, rows) -> np.ndarray:
        return (self.f_len if side == "f" else self.b_len)[np.asarray(rows, dtype=np.int64)]


def _padded_rows(idx: np.ndarray, l: int) -> np.ndarray:
    out = np.full(l, -1, dtype=np.int64)
    out[: idx.size] = idx[:l]
    return out


def embed_pairs(pairs, table: EmbeddingTable, l: int, min_len: int = 1):
    """Index both sides of each pair; returns ``(EncodedPairs, skipped)``.

    Pairs with a side that has fewer than ``min_len`` in-vocabulary tokens are
    left out and reported in ``skipped`` as ``{doc_id: reason}``.
    """
    ids, fi, fl, bi, bl = [], [], [], [], []
    skipped: dict[str, str] = {}
    for pair in pairs:
        f_rows, b_rows = table.lookup(pair.f)[:l], table.lookup(pair.b)[:l]
        shortest = min(f_rows.size, b_rows.size)
        if shortest == 0:
            skipped[pair.doc_id] = "all tokens of a side are out of vocabulary"
            continue
        if shortest < min_len:
            skipped[pair.doc_id] = f"side shorter than widest kernel ({shortest} < {min_len})"
            continue
        ids.append(pair.doc_id)
        fi.append(_padded_rows(f_rows, l))
        fl.append(f_rows.size)
        bi.append(_padded_rows(b_rows, l))
        bl.append(b_rows.size)
    for doc_id, reason in skipped.items():
        logger.warning("skipping %s: %s", doc_id, reason)
    return (
        EncodedPairs(
            table,
            ids,
            np.array(fi, dtype=np.int64).reshape(len(ids), l),
            np.array(fl, dtype=np.int64),
            np.array(bi, dtype=np.int64).reshape(len(ids), l),
            np.array(bl, dtype=np.int64),
        ),
        skipped,
    )
