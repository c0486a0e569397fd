"""Corpus loading, text preprocessing and former/latter segmentation.

Raw corpora are JSON-lines files, one document per line::

    {"part_order": ["title", "abstract"]}                 # optional header
    {"id": "d1", "parts": {"title": "...", "abstract": "..."},
     "groundtruth": ["d7", "d9"], "split": "test"}

Every part is run through :func:`preprocess_text`; the tokenized document is
then cut into a :class:`CoupledPair` ``(f, b)`` either at a named part seam
("meaningful" segmentation) or at a token-level fraction of its length.
"""

from __future__ import annotations

import html
import json
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateId, EmptySide, ParseError, UnknownBoundary

logger = logging.getLogger(__name__)

SPLITS = ("candidate", "test")
STORE_FORMAT = "ctpe-corpus/1"

_TAG_RE = re.compile(r"<[^>]*>")
_SENTENCE_END_RE = re.compile(r"[.!?]+")


# ---------------------------------------------------------------------------
# Text preprocessing
# ---------------------------------------------------------------------------


def _has_letter(token: str) -> bool:
    return any(ch.isalpha() for ch in token)


def _split_on_punctuation(text: str) -> list[str]:
    # Punctuation is anything that is neither alphanumeric nor whitespace.
    cleaned = "".join(ch if ch.isalnum() or ch.isspace() else " " for ch in text)
    return cleaned.split()


def preprocess_text(raw: str) -> list[str]:
    """Tokenize ``raw`` with the five-step pipeline.

    1. lowercase, 2. strip HTML tags, 3. unescape HTML entities,
    4. split on punctuation, 5. drop tokens without a letter.

    Entities restored in step 3 may reintroduce capitals (``&#65;``), so the
    text is lowercased once more before splitting.
    """
    text = raw.lower()
    text = _TAG_RE.sub(" ", text)
    text = html.unescape(text).lower()
    return [tok for tok in _split_on_punctuation(text) if _has_letter(tok)]


def split_sentences(raw: str) -> list[str]:
    """Split raw text on terminal punctuation (``.``, ``!``, ``?``)."""
    pieces = (p.strip() for p in _SENTENCE_END_RE.split(raw))
    return [p for p in pieces if p]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawDocument:
    id: str
    parts: tuple[tuple[str, str], ...]
    groundtruth: frozenset[str] | None = None
    split: str = "candidate"


@dataclass(frozen=True)
class TokenizedDocument:
    id: str
    part_names: tuple[str, ...]
    part_tokens: tuple[tuple[str, ...], ...]
    groundtruth: frozenset[str] | None = None
    split: str = "candidate"

    @property
    def tokens(self) -> list[str]:
        return [tok for part in self.part_tokens for tok in part]

    @property
    def boundaries(self) -> list[int]:
        """Token offsets at which each named part begins."""
        offsets, pos = [], 0
        for part in self.part_tokens:
            offsets.append(pos)
            pos += len(part)
        return offsets


@dataclass(frozen=True)
class SegmentationSpec:
    """Where to cut a document into its former and latter part.

    ``mode="meaningful"`` cuts at a part seam: ``boundary`` is either the
    index of the first latter-side part or its name. ``mode="percent"`` cuts
    at ``floor(percent * n_tokens)``.
    """

    mode: str = "meaningful"
    boundary: int | str = 1
    percent: float | None = None

    def __post_init__(self):
        if self.mode == "percent":
            if self.percent is None or not (0.0 < self.percent < 1.0):
                raise ValueError(f"percent mode needs 0 < percent < 1, got {self.percent!r}")
        elif self.mode == "meaningful":
            if isinstance(self.boundary, int) and self.boundary < 1:
                raise ValueError("meaningful boundary index must be >= 1")
        else:
            raise ValueError(f"unknown segmentation mode {self.mode!r}")

    @classmethod
    def at_percent(cls, percent: float) -> "SegmentationSpec":
        return cls(mode="percent", percent=percent)

    def label(self) -> str:
        if self.mode == "percent":
            return f"{self.percent * 100:g}%"
        return f"m({self.boundary})"

    def to_json(self) -> dict:
        if self.mode == "percent":
            return {"mode": "percent", "percent": self.percent}
        return {"mode": "meaningful", "boundary": self.boundary}

    @classmethod
    def from_json(cls, obj: dict) -> "SegmentationSpec":
        if obj["mode"] == "percent":
            return cls(mode="percent", percent=float(obj["percent"]))
        return cls(mode="meaningful", boundary=obj["boundary"])


@dataclass(frozen=True)
class CoupledPair:
    doc_id: str
    f: tuple[str, ...]
    b: tuple[str, ...]


@dataclass
class CorpusStore:
    part_order: tuple[str, ...]
    segmentation: SegmentationSpec
    l_max: int
    documents: dict[str, TokenizedDocument] = field(default_factory=dict)
    pairs: dict[str, CoupledPair] = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for doc_id in self.pairs:
            out[self.documents[doc_id].split] += 1
        return out

    def ids(self, split: str | None = None) -> list[str]:
        """Sorted ids of documents that have a coupled pair."""
        return sorted(
            i for i in self.pairs if split is None or self.documents[i].split == split
        )

    def groundtruth(self) -> dict[str, frozenset[str]]:
        return {
            i: self.documents[i].groundtruth
            for i in self.ids("test")
            if self.documents[i].groundtruth
        }


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


def _resolve_boundary(doc: TokenizedDocument, boundary: int | str) -> int:
    if isinstance(boundary, str):
        if boundary.isdigit():
            boundary = int(boundary)
        elif boundary in doc.part_names:
            boundary = doc.part_names.index(boundary)
        else:
            raise UnknownBoundary(f"{doc.id}: no part named {boundary!r}")
    if not (1 <= boundary < len(doc.part_names)):
        raise UnknownBoundary(
            f"{doc.id}: seam {boundary} does not exist for {len(doc.part_names)} parts"
        )
    return boundary


def split_point(n_tokens: int, percent: float) -> int:
    # Exact rational arithmetic, so 0.29 * 100 gives 29 and not 28.
    return math.floor(Fraction(repr(percent)) * n_tokens)


def segment(doc: TokenizedDocument, spec: SegmentationSpec, l_max: int) -> CoupledPair:
    """Cut ``doc`` into a coupled pair and truncate each side to ``l_max``."""
    if spec.mode == "meaningful":
        k = _resolve_boundary(doc, spec.boundary)
        f = [t for part in doc.part_tokens[:k] for t in part]
        b = [t for part in doc.part_tokens[k:] for t in part]
    else:
        tokens = doc.tokens
        k = split_point(len(tokens), spec.percent)
        f, b = tokens[:k], tokens[k:]
    if not f or not b:
        side = "former" if not f else "latter"
        raise EmptySide(f"{doc.id}: {side} part is empty")
    return CoupledPair(doc.id, tuple(f[:l_max]), tuple(b[:l_max]))


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def tokenize_document(raw: RawDocument, part_order: Sequence[str]) -> TokenizedDocument:
    by_name = dict(raw.parts)
    names = tuple(part_order)
    tokens = tuple(tuple(preprocess_text(by_name.get(n, ""))) for n in names)
    return TokenizedDocument(raw.id, names, tokens, raw.groundtruth, raw.split)


def _parse_raw(obj, lineno: int, path) -> RawDocument:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", lineno, path)
    doc_id = obj.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        raise ParseError("field 'id' must be a nonempty string", lineno, path)
    parts = obj.get("parts")
    if not isinstance(parts, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in parts.items()
    ):
        raise ParseError("field 'parts' must map names to strings", lineno, path)
    if not any(v.strip() for v in parts.values()):
        raise ParseError(f"document {doc_id!r} has no nonempty part", lineno, path)
    gt = obj.get("groundtruth")
    if gt is not None:
        if not isinstance(gt, list) or not all(isinstance(g, str) for g in gt):
            raise ParseError("field 'groundtruth' must be a list of ids", lineno, path)
        gt = frozenset(gt)
    split = obj.get("split", "candidate")
    if split not in SPLITS:
        raise ParseError(f"field 'split' must be one of {SPLITS}, got {split!r}", lineno, path)
    return RawDocument(doc_id, tuple(parts.items()), gt, split)


def read_raw(path, part_order: Sequence[str] | None = None):
    """Parse a raw corpus file into ``(part_order, [RawDocument])``."""
    path = Path(path)
    docs: list[RawDocument] = []
    header_order = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno, path) from None
            if isinstance(obj, dict) and "id" not in obj and "part_order" in obj:
                if docs or header_order is not None:
                    raise ParseError("header line must come first", lineno, path)
                header_order = list(obj["part_order"])
                continue
            docs.append(_parse_raw(obj, lineno, path))
    order = list(part_order or header_order or [])
    if not order:
        # Fall back to first-seen key order across documents.
        for doc in docs:
            for name, _ in doc.parts:
                if name not in order:
                    order.append(name)
    return tuple(order), docs


def build_store(
    docs: Iterable[TokenizedDocument], part_order: Sequence[str], spec: SegmentationSpec, l_max: int
) -> CorpusStore:
    store = CorpusStore(tuple(part_order), spec, l_max)
    for doc in docs:
        if doc.id in store.documents:
            raise DuplicateId(f"duplicate document id {doc.id!r}")
        store.documents[doc.id] = doc
    for doc_id in sorted(store.documents):
        try:
            store.pairs[doc_id] = segment(store.documents[doc_id], spec, l_max)
        except EmptySide as exc:
            logger.warning("dropping document: %s", exc)
            store.dropped.append(doc_id)
    store.documents = dict(sorted(store.documents.items()))
    return store


def load_corpus(
    path, spec: SegmentationSpec, l_max: int, part_order: Sequence[str] | None = None
) -> CorpusStore:
    """Load, preprocess and segment a raw JSON-lines corpus."""
    order, raws = read_raw(path, part_order)
    seen = set()
    for raw in raws:
        if raw.id in seen:
            raise DuplicateId(f"duplicate document id {raw.id!r} in {path}")
        seen.add(raw.id)
    store = build_store((tokenize_document(r, order) for r in raws), order, spec, l_max)
    if store.dropped:
        logger.warning("%d document(s) dropped for an empty side", len(store.dropped))
    return store


def resegment(store: CorpusStore, spec: SegmentationSpec, l_max: int | None = None) -> CorpusStore:
    """Re-cut every document of ``store`` with a different segmentation."""
    return build_store(
        store.documents.values(), store.part_order, spec, store.l_max if l_max is None else l_max
    )


# ---------------------------------------------------------------------------
# Processed-corpus serialization
# ---------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dump_store(store: CorpusStore, path) -> None:
    """Write a processed corpus (tokens per part plus the cut pairs)."""
    header = {
        "format": STORE_FORMAT,
        "part_order": list(store.part_order),
        "segmentation": store.segmentation.to_json(),
        "l_max": store.l_max,
        "dropped": sorted(store.dropped),
    }
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for doc_id in sorted(store.documents):
            doc = store.documents[doc_id]
            rec = {
                "id": doc.id,
                "split": doc.split,
                "groundtruth": sorted(doc.groundtruth) if doc.groundtruth is not None else None,
                "parts": {n: list(t) for n, t in zip(doc.part_names, doc.part_tokens)},
            }
            pair = store.pairs.get(doc_id)
            if pair is not None:
                rec["f"] = list(pair.f)
                rec["b"] = list(pair.b)
            fh.write(_dumps(rec) + "\n")


def read_store(path) -> CorpusStore:
    """Read a file written by :func:`dump_store`."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip()]
    if not lines:
        raise ParseError("empty processed corpus", None, path)
    try:
        header = json.loads(lines[0][1])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", 1, path) from None
    if not isinstance(header, dict) or header.get("format") != STORE_FORMAT:
        raise ParseError(f"not a processed corpus (expected format {STORE_FORMAT})", 1, path)
    store = CorpusStore(
        tuple(header["part_order"]),
        SegmentationSpec.from_json(header["segmentation"]),
        int(header["l_max"]),
        dropped=list(header["dropped"]),
    )
    for lineno, line in lines[1:]:
        try:
            rec = json.loads(line)
            names = tuple(rec["parts"])
            doc = TokenizedDocument(
                rec["id"],
                names,
                tuple(tuple(rec["parts"][n]) for n in names),
                frozenset(rec["groundtruth"]) if rec.get("groundtruth") is not None else None,
                rec["split"],
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed record ({exc})", lineno, path) from None
        if doc.id in store.documents:
            raise DuplicateId(f"duplicate document id {doc.id!r} in {path}")
        store.documents[doc.id] = doc
        if "f" in rec:
            store.pairs[doc.id] = CoupledPair(doc.id, tuple(rec["f"]), tuple(rec["b"]))
    return store
