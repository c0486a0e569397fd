"""Coupled-pair document embeddings ``v = (v_f, v_b)`` and their store file.

Store layout (all integers/floats little-endian)::

    CTPEEMB1\\n
    {"format": ..., "dim": D, "count": N, "ids": [...],
     "encoder_fingerprint": ..., "table_fingerprint": ..., "skipped": {...}}\\n
    N * 2 * D float64 values: for each id in header order, v_f then v_b
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusStore, CoupledPair
from .embedding import EmbeddingTable, embed_pairs, embed_sequence
from .encoder import TwinEncoder, forward, forward_batch
from .errors import DimMismatch, FingerprintMismatch, ParseError, ZeroVector

logger = logging.getLogger(__name__)

STORE_MAGIC = b"CTPEEMB1\n"
STORE_FORMAT = "ctpe-embeddings/1"


@dataclass(frozen=True)
class DocEmbedding:
    doc_id: str
    v_f: np.ndarray
    v_b: np.ndarray
    fingerprint: str | None = None

    def __post_init__(self):
        if self.v_f.shape != self.v_b.shape or self.v_f.ndim != 1:
            raise DimMismatch("v_f and v_b must be vectors of equal length")


@dataclass
class EmbeddingStore:
    dim: int
    encoder_fingerprint: str
    table_fingerprint: str
    vectors: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return f"{self.encoder_fingerprint}:{self.table_fingerprint}"

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, doc_id):
        return doc_id in self.vectors

    def ids(self) -> list[str]:
        return sorted(self.vectors)

    def get(self, doc_id: str) -> DocEmbedding:
        v_f, v_b = self.vectors[doc_id]
        return DocEmbedding(doc_id, v_f, v_b, self.fingerprint)

    def add(self, emb: DocEmbedding) -> None:
        if emb.fingerprint is not None and emb.fingerprint != self.fingerprint:
            raise FingerprintMismatch(f"{emb.doc_id}: embedding from a different model")
        if emb.v_f.shape != (self.dim,):
            raise DimMismatch(f"{emb.doc_id}: expected dimension {self.dim}, got {emb.v_f.shape}")
        self.vectors[emb.doc_id] = (emb.v_f, emb.v_b)

    def matrices(self, ids: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(len(ids), dim)`` former and latter vectors."""
        if not ids:
            return np.zeros((0, self.dim)), np.zeros((0, self.dim))
        vf = np.stack([self.vectors[i][0] for i in ids])
        vb = np.stack([self.vectors[i][1] for i in ids])
        return vf, vb


def _check_nonzero(doc_id: str, v_f: np.ndarray, v_b: np.ndarray) -> None:
    if not (np.any(v_f) and np.any(v_b)):
        raise ZeroVector(f"{doc_id}: encoded side is the zero vector")


def embed_document(twin: TwinEncoder, table: EmbeddingTable, pair: CoupledPair, l: int | None = None) -> DocEmbedding:
    """``v_f`` from the former tower on ``f``, ``v_b`` from the latter tower on ``b``."""
    l = twin.l if l is None else l
    v_f, _ = forward(twin.former, embed_sequence(pair.f, table, l))
    v_b, _ = forward(twin.latter, embed_sequence(pair.b, table, l))
    _check_nonzero(pair.doc_id, v_f, v_b)
    fp = f"{twin.fingerprint()}:{table.fingerprint()}"
    return DocEmbedding(pair.doc_id, v_f, v_b, fp)


def embed_corpus(
    twin: TwinEncoder, table: EmbeddingTable, store: CorpusStore, l: int | None = None, batch_size: int = 256
) -> EmbeddingStore:
    """Embed every coupled pair of ``store``; unembeddable documents are
    skipped and listed in ``EmbeddingStore.skipped``."""
    l = twin.l if l is None else l
    out = EmbeddingStore(twin.output_dim, twin.fingerprint(), table.fingerprint())
    data, skipped = embed_pairs([store.pairs[i] for i in store.ids()], table, l, max(twin.widths))
    out.skipped.update(skipped)
    for start in range(0, len(data), batch_size):
        rows = np.arange(start, min(start + batch_size, len(data)))
        vf, _ = forward_batch(twin.former, data.matrices("f", rows), data.lengths("f", rows))
        vb, _ = forward_batch(twin.latter, data.matrices("b", rows), data.lengths("b", rows))
        for k, r in enumerate(rows):
            doc_id = data.ids[r]
            try:
                _check_nonzero(doc_id, vf[k], vb[k])
            except ZeroVector as exc:
                logger.warning("skipping %s", exc)
                out.skipped[doc_id] = "encoded side is the zero vector"
                continue
            out.vectors[doc_id] = (vf[k].copy(), vb[k].copy())
    out.skipped = dict(sorted(out.skipped.items()))
    return out


def save_store(store: EmbeddingStore, path) -> None:
    ids = store.ids()
    header = {
        "format": STORE_FORMAT,
        "dim": store.dim,
        "count": len(ids),
        "ids": ids,
        "encoder_fingerprint": store.encoder_fingerprint,
        "table_fingerprint": store.table_fingerprint,
        "skipped": store.skipped,
    }
    vf, vb = store.matrices(ids)
    body = np.stack([vf, vb], axis=1) if ids else np.zeros((0, 2, store.dim))
    with Path(path).open("wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def load_store(path) -> EmbeddingStore:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.readline() != STORE_MAGIC:
            raise ParseError("not a CTPE embedding store", 1, path)
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad store header ({exc.msg})", 2, path) from None
        if header.get("format") != STORE_FORMAT:
            raise ParseError(f"unsupported store format {header.get('format')!r}", 2, path)
        dim, count = int(header["dim"]), int(header["count"])
        buf = fh.read()
    if len(buf) != 8 * 2 * dim * count:
        raise ParseError(f"expected {count} records of dimension {dim}", None, path)
    body = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(count, 2, dim)
    out = EmbeddingStore(dim, header["encoder_fingerprint"], header["table_fingerprint"])
    out.skipped = dict(header.get("skipped", {}))
    for doc_id, rec in zip(header["ids"], body):
        out.vectors[doc_id] = (rec[0].copy(), rec[1].copy())
    return out
