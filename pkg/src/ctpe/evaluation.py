"""Retrieval metrics over run files: P/R/F1 at N, AP/MAP, NDCG and bpref.

Relevance is binary. Every candidate that is not in a query's ground truth
counts as judged nonrelevant (complete judgments over the candidate pool).
NDCG and bpref are computed over the whole ranking unless a cutoff is given.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyJudgments, MalformedRun, ParseError, UnknownQuery

METRICS = ("P", "R", "F1", "MAP", "NDCG", "bpref")


def _ids(ranked) -> list[str]:
    return ranked.ids if hasattr(ranked, "ids") else list(ranked)


def _require(rel) -> None:
    if not rel:
        raise EmptyJudgments("query has no relevant documents")


def prf_at_n(ranked, rel, n: int = 20) -> tuple[float, float, float]:
    _require(rel)
    if n < 1:
        raise ValueError("N must be >= 1")
    hits = sum(1 for c in _ids(ranked)[:n] if c in rel)
    p = hits / n
    r = hits / len(rel)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def average_precision(ranked, rel) -> float:
    _require(rel)
    hits, total = 0, 0.0
    for k, c in enumerate(_ids(ranked), start=1):
        if c in rel:
            hits += 1
            total += hits / k
    return total / len(rel)


def ndcg(ranked, rel, n: int | None = None) -> float:
    """Binary-gain NDCG with a ``1/log2(rank + 1)`` discount."""
    _require(rel)
    ids = _ids(ranked)
    if n is not None:
        ids = ids[:n]
    dcg = sum(1.0 / math.log2(k + 1) for k, c in enumerate(ids, start=1) if c in rel)
    ideal = len(rel) if n is None else min(len(rel), n)
    idcg = sum(1.0 / math.log2(k + 1) for k in range(1, ideal + 1))
    return dcg / idcg


def bpref(ranked, rel, judged_nonrel, n: int | None = None) -> float:
    """Binary preference.

    ``judged_nonrel`` is either the set of judged nonrelevant ids or just its
    size; any retrieved id outside ``rel`` counts as judged nonrelevant.
    """
    _require(rel)
    ids = _ids(ranked)
    if n is not None:
        ids = ids[:n]
    n_rel = len(rel)
    n_nonrel = judged_nonrel if isinstance(judged_nonrel, int) else len(judged_nonrel)
    denom = min(n_rel, n_nonrel)
    above, total = 0, 0.0
    for c in ids:
        if c in rel:
            total += 1.0 - (min(above, n_rel) / denom if denom else 0.0)
        else:
            above += 1
    return total / n_rel


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def read_run(path) -> dict[str, list[str]]:
    """Parse ``query_id candidate_id rank score`` lines into ranked id lists."""
    path = Path(path)
    rows: dict[str, list[tuple[int, str]]] = defaultdict(list)
    seen: set[tuple[str, str]] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise MalformedRun(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            qid, cid, rank, score = fields
            try:
                rank_i = int(rank)
                float(score)
            except ValueError:
                raise MalformedRun(f"{path}:{lineno}: rank must be an integer and score a number") from None
            if (qid, cid) in seen:
                raise MalformedRun(f"{path}:{lineno}: candidate {cid} listed twice for {qid}")
            seen.add((qid, cid))
            rows[qid].append((rank_i, cid))
    out = {}
    for qid, items in rows.items():
        items.sort()
        ranks = [r for r, _ in items]
        if len(set(ranks)) != len(ranks):
            raise MalformedRun(f"{path}: duplicate rank for query {qid}")
        out[qid] = [c for _, c in items]
    return out


def read_qrels(path) -> dict[str, frozenset[str]]:
    """``query_id candidate_id relevance`` lines; relevance > 0 is relevant."""
    path = Path(path)
    rel: dict[str, set[str]] = defaultdict(set)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise ParseError("expected 'query_id candidate_id relevance'", lineno, path)
            try:
                grade = int(fields[2])
            except ValueError:
                raise ParseError("relevance must be an integer", lineno, path) from None
            if grade > 0:
                rel[fields[0]].add(fields[1])
            else:
                rel.setdefault(fields[0], set())
    return {q: frozenset(s) for q, s in sorted(rel.items())}


def write_qrels(judgments: dict[str, Iterable[str]], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for qid in sorted(judgments):
            for cid in sorted(judgments[qid]):
                fh.write(f"{qid} {cid} 1\n")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Judgments:
    relevant: dict[str, frozenset[str]]
    candidates: frozenset[str] | None = None  # None: pool = ids seen in the run

    def nonrelevant_count(self, qid: str, retrieved: Sequence[str]) -> int:
        pool = self.candidates if self.candidates is not None else set(retrieved)
        return len(set(pool) - self.relevant[qid])


@dataclass
class MetricsReport:
    n: int
    cutoff: int | None
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "topn": self.n,
            "ndcg_bpref_cutoff": self.cutoff if self.cutoff is not None else "full",
            "queries": len(self.per_query),
            "mean": self.means,
            "per_query": self.per_query,
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        cut = "full ranking" if self.cutoff is None else f"top {self.cutoff}"
        lines = [
            f"# P/R/F1 at top {self.n}; MAP over full ranking; NDCG/bpref over {cut}",
            f"# queries: {len(self.per_query)}",
        ]
        width = max([5] + [len(q) for q in self.per_query])
        head = "query".ljust(width) + "".join(m.rjust(9) for m in METRICS)
        lines.append(head)
        for qid in sorted(self.per_query):
            vals = self.per_query[qid]
            lines.append(qid.ljust(width) + "".join(f"{vals[m]:9.4f}" for m in METRICS))
        lines.append("mean".ljust(width) + "".join(f"{self.means[m]:9.4f}" for m in METRICS))
        return "\n".join(lines) + "\n"


def evaluate_query(ranked, rel, n_nonrel: int, n: int = 20, cutoff: int | None = None) -> dict[str, float]:
    p, r, f1 = prf_at_n(ranked, rel, n)
    return {
        "P": p,
        "R": r,
        "F1": f1,
        "MAP": average_precision(ranked, rel),
        "NDCG": ndcg(ranked, rel, cutoff),
        "bpref": bpref(ranked, rel, n_nonrel, cutoff),
    }


def evaluate_run(run, judgments: Judgments, n: int = 20, cutoff: int | None = None) -> MetricsReport:
    """Per-query metrics plus unweighted means.

    ``run`` is a path or a ``{query_id: [candidate ids]}`` mapping. Judged
    queries absent from the run score zero on every metric.
    """
    if not isinstance(run, dict):
        run = read_run(run)
    unknown = sorted(set(run) - set(judgments.relevant))
    if unknown:
        raise UnknownQuery(f"run contains {len(unknown)} unjudged query id(s), e.g. {unknown[0]!r}")
    report = MetricsReport(n, cutoff)
    for qid in sorted(judgments.relevant):
        rel = judgments.relevant[qid]
        if not rel:
            continue
        ranked = run.get(qid)
        if ranked is None:
            report.per_query[qid] = {m: 0.0 for m in METRICS}
            continue
        n_nonrel = judgments.nonrelevant_count(qid, ranked)
        report.per_query[qid] = evaluate_query(ranked, rel, n_nonrel, n, cutoff)
    if not report.per_query:
        raise EmptyJudgments("no query has relevant documents")
    k = len(report.per_query)
    report.means = {m: math.fsum(v[m] for v in report.per_query.values()) / k for m in METRICS}
    return report
