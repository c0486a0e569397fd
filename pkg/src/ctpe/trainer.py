"""Coherence training of the twin encoder.

Every epoch pairs each document ``d_i`` with a random partner ``d_j`` and
builds one uncoupled pair, either ``(f_i, b_j)`` or ``(f_j, b_i)``. The
encoder is trained with the hinge

    L = max(0, M - (cos(v_f_i, v_b_i) - cos(v_f_x, v_b_y)))

and Adam. Former parts always go through the former tower and latter parts
through the latter tower, for coupled and uncoupled pairs alike.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .corpus import CorpusStore
from .embedding import EmbeddingTable, EncodedPairs, TfIdfIndex, embed_pairs, rank_scores, tfidf_fit
from .encoder import TwinEncoder, backward, cosine_rows, forward_batch, init_encoder
from .errors import ConfigError, CorpusTooSmall, ShapeMismatch

logger = logging.getLogger(__name__)

SAMPLING_MODES = ("uniform", "tfidf")


@dataclass
class TrainConfig:
    l_max: int = 200
    l: int = 200
    margin: float = 0.1
    lr: float = 0.001
    batch_size: int = 200
    epochs: int = 100
    patience: int = 10
    sampling: str = "uniform"
    seed: int = 0
    n_s: tuple[int, ...] = (1, 2, 3, 5)
    n_f: int = 1024
    tfidf_k: int = 100

    def __post_init__(self):
        self.n_s = tuple(int(w) for w in self.n_s)
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.l < 1 or self.l_max < 1:
            raise ConfigError("l and l_max must be >= 1")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")
        if self.tfidf_k < 1:
            raise ConfigError("tfidf_k must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, raw in values.items():
            default = known[key].default
            try:
                if isinstance(default, tuple):
                    if isinstance(raw, str):
                        raw = [x for x in raw.replace("{", "").replace("}", "").replace(",", " ").split()]
                    kwargs[key] = tuple(int(x) for x in raw)
                elif isinstance(default, bool):
                    kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
                else:
                    kwargs[key] = type(default)(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass
class PairBatch:
    """Row indices into an :class:`EncodedPairs`.

    Sample ``k`` is the coupled pair ``(f[pos[k]], b[pos[k]])`` against the
    uncoupled pair ``(f[neg_f[k]], b[neg_b[k]])``.
    """

    pos: np.ndarray
    neg_f: np.ndarray
    neg_b: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.int64)
        self.neg_f = np.asarray(self.neg_f, dtype=np.int64)
        self.neg_b = np.asarray(self.neg_b, dtype=np.int64)
        if not (self.pos.shape == self.neg_f.shape == self.neg_b.shape):
            raise ShapeMismatch("positives and negatives must be aligned")
        if np.any(self.neg_f == self.neg_b):
            raise ValueError("an uncoupled pair must take its sides from different documents")

    def __len__(self):
        return self.pos.size


@dataclass
class NegativeAssignment:
    """One epoch's negatives: document ``i`` is paired with ``partner[i]``.

    ``swap[i]`` False gives ``(f_i, b_partner)``, True gives
    ``(f_partner, b_i)``. ``from_topk[i]`` records whether the partner was
    drawn from the tf-idf neighbour pool.
    """

    partner: np.ndarray
    swap: np.ndarray
    from_topk: np.ndarray

    @property
    def neg_f(self) -> np.ndarray:
        own = np.arange(self.partner.size)
        return np.where(self.swap, self.partner, own)

    @property
    def neg_b(self) -> np.ndarray:
        own = np.arange(self.partner.size)
        return np.where(self.swap, own, self.partner)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    stop_reason: str = "no_training"
    skipped: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def topk_neighbours(index: TfIdfIndex, ids: list[str], k: int) -> list[np.ndarray]:
    """For each id, positions (within ``ids``) of its ``k`` most tf-idf-similar
    documents among ``ids``, excluding itself."""
    cols = np.array([index.row[i] for i in ids], dtype=np.int64)
    out = []
    for i, doc_id in enumerate(ids):
        scores = index.similarities(doc_id)[cols]
        order = [j for j in rank_scores(ids, scores) if j != i]
        out.append(np.array(order[:k], dtype=np.int64))
    return out


def sample_negatives(n_docs: int, sampling: str = "uniform", seed=None, topk=None) -> NegativeAssignment:
    """Draw one uncoupled partner per document.

    ``uniform``: the partner is uniform over the other documents.
    ``tfidf``: a fair coin picks the pool, either ``topk[i]`` (the document's
    tf-idf neighbours) or all other documents, then the partner is uniform
    within that pool. Either way a second fair coin picks which side is swapped.
    """
    if n_docs < 2:
        raise CorpusTooSmall(f"negative sampling needs at least 2 documents, got {n_docs}")
    if sampling not in SAMPLING_MODES:
        raise ConfigError(f"unknown sampling mode {sampling!r}")
    rng = _rng(seed)
    own = np.arange(n_docs)
    r = rng.integers(0, n_docs - 1, size=n_docs)
    partner = r + (r >= own)  # uniform over D \ {d_i}
    from_topk = np.zeros(n_docs, dtype=bool)
    if sampling == "tfidf":
        if topk is None:
            raise ConfigError("tfidf sampling needs the tf-idf neighbour lists")
        from_topk = rng.random(n_docs) < 0.5
        u = rng.random(n_docs)
        for i in np.flatnonzero(from_topk):
            pool = topk[i]
            partner[i] = pool[int(u[i] * len(pool))]
    swap = rng.random(n_docs) < 0.5
    return NegativeAssignment(partner, swap, from_topk)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss(cos_pos, cos_neg, margin: float):
    """Hinge ``max(0, M - (cos_pos - cos_neg))``; works on scalars and arrays."""
    out = np.maximum(0.0, margin - (np.asarray(cos_pos) - np.asarray(cos_neg)))
    return float(out) if np.ndim(out) == 0 else out


def batch_gradients(twin: TwinEncoder, batch: PairBatch, data: EncodedPairs, margin: float):
    """Mean hinge loss over ``batch`` and its gradient.

    Returns ``(grads, mean_loss, n_used)`` with ``grads`` aligned to
    ``twin.arrays()``. Samples whose encoded side is the zero vector have no
    cosine and are left out of the mean.
    """
    n = len(batch)
    f_rows = np.concatenate([batch.pos, batch.neg_f])
    b_rows = np.concatenate([batch.pos, batch.neg_b])
    vf, trace_f = forward_batch(twin.former, data.matrices("f", f_rows), data.lengths("f", f_rows))
    vb, trace_b = forward_batch(twin.latter, data.matrices("b", b_rows), data.lengths("b", b_rows))
    c_pos, gpf, gpb = cosine_rows(vf[:n], vb[:n])
    c_neg, gnf, gnb = cosine_rows(vf[n:], vb[n:])
    ok = np.isfinite(c_pos) & np.isfinite(c_neg)
    used = int(ok.sum())
    if used < n:
        logger.warning("%d sample(s) skipped: encoded side is the zero vector", n - used)
    if used == 0:
        return [np.zeros_like(a) for a in twin.arrays()], 0.0, 0
    c_pos = np.where(ok, c_pos, 0.0)
    c_neg = np.where(ok, c_neg, 0.0)
    losses = np.where(ok, loss(c_pos, c_neg, margin), 0.0)
    # dL/dcos_pos = -1 and dL/dcos_neg = +1 wherever the hinge is active.
    active = (ok & (margin - (c_pos - c_neg) > 0)).astype(np.float64)[:, None] / used
    grad_vf = np.concatenate([-active * gpf, active * gnf])
    grad_vb = np.concatenate([-active * gpb, active * gnb])
    grads_f, _ = backward(twin.former, trace_f, grad_vf, input_grad=False)
    grads_b, _ = backward(twin.latter, trace_b, grad_vb, input_grad=False)
    return grads_f + grads_b, float(losses.sum() / used), used


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(
    store: CorpusStore,
    table: EmbeddingTable,
    config: TrainConfig,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[TwinEncoder, TrainReport]:
    """Train a twin encoder on every coupled pair of ``store``.

    Stops after ``config.epochs`` epochs or once the epoch-mean loss has not
    improved for ``config.patience`` epochs, and returns the parameters of the
    best epoch. ``epochs=0`` returns the freshly initialized encoder.
    """
    twin = init_encoder(table.dim, config.l, config.n_s, config.n_f, config.seed)
    pairs = [store.pairs[i] for i in store.ids()]
    data, skipped = embed_pairs(pairs, table, config.l, min_len=max(twin.widths))
    report = TrainReport(skipped=skipped)
    if config.epochs == 0:
        return twin, report
    n_docs = len(data)
    if n_docs < 2:
        raise CorpusTooSmall(f"only {n_docs} embeddable document(s); need at least 2")

    topk = None
    if config.sampling == "tfidf":
        topk = topk_neighbours(tfidf_fit(store), data.ids, config.tfidf_k)

    rng = np.random.default_rng([config.seed, 1])
    state = AdamState.zeros_like(twin.arrays())
    params = twin.arrays()
    best_loss, best_twin, since_best = np.inf, twin.copy(), 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        neg = sample_negatives(n_docs, config.sampling, rng, topk)
        neg_f, neg_b = neg.neg_f, neg.neg_b
        order = rng.permutation(n_docs)
        total, count = 0.0, 0
        for start in range(0, n_docs, config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = PairBatch(rows, neg_f[rows], neg_b[rows])
            grads, mean_loss, used = batch_gradients(twin, batch, data, config.margin)
            if used:
                adam_step(state, params, grads, config.lr)
                total += mean_loss * used
                count += used
        epoch_loss = total / count if count else float("nan")
        seconds = time.perf_counter() - started
        report.epoch_losses.append(epoch_loss)
        report.epoch_seconds.append(seconds)
        report.stopped_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, seconds)
        logger.info("epoch %d mean loss %.6f (%.2fs)", epoch, epoch_loss, seconds)
        if epoch_loss < best_loss:
            best_loss, best_twin, since_best = epoch_loss, twin.copy(), 0
            report.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                report.stop_reason = "early_stop"
                break
    else:
        report.stop_reason = "max_epochs"
    return best_twin, report
