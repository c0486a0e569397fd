"""Four-branch text CNN with a hand-written backward pass.

Each tower convolves a ``dim x l`` input with ``n_f`` filters at four kernel
widths (stride 1), applies ReLU, max-pools every feature map over its valid
positions and concatenates the pooled blocks into a ``4 * n_f`` vector.

Everything works on batches: inputs are ``(B, dim, l)`` arrays with a
per-row ``valid_len``. The single-matrix :func:`forward` is a thin wrapper.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .embedding import SequenceMatrix
from .errors import ConfigError, ParseError, SequenceTooShort, TraceMismatch, ZeroVector

N_BLOCKS = 4
CHECKPOINT_MAGIC = b"CTPECKPT1\n"
CHECKPOINT_FORMAT = "ctpe-checkpoint/1"


@dataclass
class ConvBlock:
    width: int
    kernels: np.ndarray  # (n_f, dim, width)
    bias: np.ndarray  # (n_f,)


@dataclass
class EncoderParams:
    blocks: list[ConvBlock]

    @property
    def n_f(self) -> int:
        return self.blocks[0].kernels.shape[0]

    @property
    def dim(self) -> int:
        return self.blocks[0].kernels.shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(b.width for b in self.blocks)

    @property
    def output_dim(self) -> int:
        return len(self.blocks) * self.n_f

    def arrays(self) -> list[np.ndarray]:
        """Parameter tensors in declared order: kernels, bias per block."""
        out = []
        for b in self.blocks:
            out.extend((b.kernels, b.bias))
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [ConvBlock(b.width, b.kernels.copy(), b.bias.copy()) for b in self.blocks]
        )


@dataclass
class TwinEncoder:
    """Former-part and latter-part towers with identical configuration."""

    former: EncoderParams
    latter: EncoderParams
    l: int

    def __post_init__(self):
        a, b = self.former, self.latter
        if (a.dim, a.n_f, a.widths) != (b.dim, b.n_f, b.widths):
            raise ConfigError("former and latter towers must share dim, n_f and widths")
        if max(a.widths) > self.l:
            raise ConfigError(f"kernel width {max(a.widths)} exceeds sequence length l={self.l}")

    @property
    def dim(self) -> int:
        return self.former.dim

    @property
    def n_f(self) -> int:
        return self.former.n_f

    @property
    def widths(self) -> tuple[int, ...]:
        return self.former.widths

    @property
    def output_dim(self) -> int:
        return self.former.output_dim

    def arrays(self) -> list[np.ndarray]:
        return self.former.arrays() + self.latter.arrays()

    def tensor_names(self) -> list[str]:
        names = []
        for tower in ("former", "latter"):
            for w in self.widths:
                names += [f"{tower}.w{w}.kernels", f"{tower}.w{w}.bias"]
        return names

    def copy(self) -> "TwinEncoder":
        return TwinEncoder(self.former.copy(), self.latter.copy(), self.l)

    def config(self) -> dict:
        return {"dim": self.dim, "l": self.l, "n_s": list(self.widths), "n_f": self.n_f}

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.config(), sort_keys=True).encode())
        for arr in self.arrays():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class ForwardTrace:
    """What :func:`backward` needs from a forward pass."""

    params: EncoderParams
    inputs: np.ndarray  # (B, dim, l)
    valid_lens: np.ndarray  # (B,)
    pre: list[np.ndarray] = field(default_factory=list)  # per block (B, L, n_f)
    argmax: list[np.ndarray] = field(default_factory=list)  # per block (B, n_f)
    output: np.ndarray | None = None  # (B, output_dim)

    @property
    def relu_masks(self) -> list[np.ndarray]:
        return [p > 0 for p in self.pre]


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _check_config(dim: int, l: int, n_s: Sequence[int], n_f: int) -> tuple[int, ...]:
    widths = tuple(int(w) for w in n_s)
    if len(widths) != N_BLOCKS:
        raise ConfigError(f"expected {N_BLOCKS} kernel widths, got {len(widths)}")
    if min(widths) < 1 or len(set(widths)) != N_BLOCKS:
        raise ConfigError(f"kernel widths must be distinct positive integers: {widths}")
    if dim < 1 or n_f < 1 or l < 1:
        raise ConfigError("dim, l and n_f must be positive")
    if max(widths) > l:
        raise ConfigError(f"kernel width {max(widths)} exceeds sequence length l={l}")
    return tuple(sorted(widths))


def _init_tower(rng: np.random.Generator, dim: int, widths, n_f: int) -> EncoderParams:
    blocks = []
    for w in widths:
        bound = np.sqrt(6.0 / (dim * w + n_f))
        blocks.append(ConvBlock(w, rng.uniform(-bound, bound, size=(n_f, dim, w)), np.zeros(n_f)))
    return EncoderParams(blocks)


def init_encoder(dim=100, l=200, n_s=(1, 2, 3, 5), n_f=1024, seed=0) -> TwinEncoder:
    """Fan-based uniform kernels, zero biases, deterministic per seed."""
    widths = _check_config(dim, l, n_s, n_f)
    rng = np.random.default_rng(seed)
    former = _init_tower(rng, dim, widths, n_f)
    latter = _init_tower(rng, dim, widths, n_f)
    return TwinEncoder(former, latter, l)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _windows(x: np.ndarray, w: int) -> np.ndarray:
    # (B, dim, l) -> (B, L, dim, w) view, L = l - w + 1
    return sliding_window_view(x, w, axis=2).transpose(0, 2, 1, 3)


def forward_batch(params: EncoderParams, x: np.ndarray, valid_lens) -> tuple[np.ndarray, ForwardTrace]:
    """Encode a batch ``x`` of shape ``(B, dim, l)``."""
    x = np.asarray(x, dtype=np.float64)
    valid_lens = np.asarray(valid_lens, dtype=np.int64)
    if x.ndim != 3 or x.shape[1] != params.dim:
        raise ValueError(f"expected input of shape (B, {params.dim}, l), got {x.shape}")
    batch, _, length = x.shape
    max_w = max(params.widths)
    if valid_lens.shape != (batch,) or np.any(valid_lens > length):
        raise ValueError("valid_lens must give one length <= l per row")
    if np.any(valid_lens < max_w):
        raise SequenceTooShort(
            f"valid length {int(valid_lens.min())} is shorter than kernel width {max_w}"
        )
    trace = ForwardTrace(params, x, valid_lens)
    pooled = []
    for block in params.blocks:
        w = block.width
        win = _windows(x, w)
        n_pos = win.shape[1]
        flat = win.reshape(batch, n_pos, -1)
        pre = flat @ block.kernels.reshape(block.kernels.shape[0], -1).T + block.bias
        act = np.maximum(pre, 0.0)
        # Pool only over positions whose window lies inside the valid prefix.
        valid = np.arange(n_pos)[None, :] < (valid_lens - w + 1)[:, None]
        masked = np.where(valid[:, :, None], act, -np.inf)
        am = masked.argmax(axis=1)  # first maximal position
        pooled.append(np.take_along_axis(act, am[:, None, :], axis=1)[:, 0, :])
        trace.pre.append(pre)
        trace.argmax.append(am)
    trace.output = np.concatenate(pooled, axis=1)
    return trace.output, trace


def forward(params: EncoderParams, m: SequenceMatrix) -> tuple[np.ndarray, ForwardTrace]:
    out, trace = forward_batch(params, m.data[None, :, :], [m.valid_len])
    return out[0], trace


def backward(
    params: EncoderParams, trace: ForwardTrace, grad_out: np.ndarray, input_grad: bool = True
) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Gradients of ``sum(output * grad_out)``.

    Returns parameter gradients aligned with ``params.arrays()`` (summed over
    the batch) and, if requested, the gradient w.r.t. the inputs, shaped like
    the forward input (a single matrix when the trace came from
    :func:`forward`).
    """
    if trace.params is not params or len(trace.pre) != len(params.blocks):
        raise TraceMismatch("trace was not produced by these parameters")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    squeeze = grad_out.ndim == 1
    if squeeze:
        grad_out = grad_out[None, :]
    x = trace.inputs
    batch = x.shape[0]
    if grad_out.shape != (batch, params.output_dim):
        raise TraceMismatch(
            f"grad_out shape {grad_out.shape} does not match output {(batch, params.output_dim)}"
        )
    n_f = params.n_f
    rows = np.arange(batch)[:, None]
    grads: list[np.ndarray] = []
    dx_t = np.zeros((batch, x.shape[2], x.shape[1])) if input_grad else None  # (B, l, dim)
    for k, block in enumerate(params.blocks):
        if block.kernels.shape != (n_f, x.shape[1], block.width):
            raise TraceMismatch("parameter shapes changed since the forward pass")
        am = trace.argmax[k]
        g = grad_out[:, k * n_f : (k + 1) * n_f]
        pre_at = np.take_along_axis(trace.pre[k], am[:, None, :], axis=1)[:, 0, :]
        gp = g * (pre_at > 0)  # (B, n_f); dead ReLU units pass nothing
        win = _windows(x, block.width)  # (B, L, dim, w)
        selected = win[rows, am]  # (B, n_f, dim, w)
        grads.append(np.einsum("bf,bfdw->fdw", gp, selected))
        grads.append(gp.sum(axis=0))
        if dx_t is not None:
            for j in range(block.width):
                contrib = gp[:, :, None] * block.kernels[None, :, :, j]  # (B, n_f, dim)
                np.add.at(dx_t, (np.broadcast_to(rows, am.shape), am + j), contrib)
    dx = None
    if dx_t is not None:
        dx = dx_t.transpose(0, 2, 1)
        if squeeze:
            dx = dx[0]
    return grads, dx


# ---------------------------------------------------------------------------
# Cosine similarity
# ---------------------------------------------------------------------------


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_grad(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(d cos/du, d cos/dv)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    c = u @ v / (nu * nv)
    return v / (nu * nv) - c * u / nu**2, u / (nu * nv) - c * v / nv**2


def cosine_rows(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise cosine of two ``(B, D)`` arrays plus both gradients.

    Rows where either side is all-zero get ``nan`` so callers can skip them.
    """
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    ok = (nu > 0) & (nv > 0)
    nu_s = np.where(ok, nu, 1.0)[:, None]
    nv_s = np.where(ok, nv, 1.0)[:, None]
    c = np.einsum("bd,bd->b", u, v) / (nu_s[:, 0] * nv_s[:, 0])
    gu = v / (nu_s * nv_s) - c[:, None] * u / nu_s**2
    gv = u / (nu_s * nv_s) - c[:, None] * v / nv_s**2
    c = np.where(ok, c, np.nan)
    return c, gu, gv


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(twin: TwinEncoder, path, meta: dict | None = None) -> None:
    """Binary checkpoint: magic line, JSON header line, raw little-endian
    float64 tensors in the order listed by the header."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": twin.config(),
        "fingerprint": twin.fingerprint(),
        "meta": meta or {},
        "tensors": [
            {"name": n, "shape": list(a.shape)} for n, a in zip(twin.tensor_names(), twin.arrays())
        ],
    }
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for arr in twin.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[TwinEncoder, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(twin, meta)``."""
    path = Path(path)
    with path.open("rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ParseError("not a CTPE checkpoint", 1, path)
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad checkpoint header ({exc.msg})", 2, path) from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"unsupported checkpoint format {header.get('format')!r}", 2, path)
        arrays = []
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ParseError(f"truncated tensor {spec['name']}", None, path)
            arrays.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
        if fh.read(1):
            raise ParseError("trailing bytes after last tensor", None, path)
    cfg = header["config"]
    widths = _check_config(cfg["dim"], cfg["l"], cfg["n_s"], cfg["n_f"])
    towers = []
    for t in range(2):
        chunk = arrays[t * 2 * N_BLOCKS : (t + 1) * 2 * N_BLOCKS]
        towers.append(
            EncoderParams([ConvBlock(w, chunk[2 * i], chunk[2 * i + 1]) for i, w in enumerate(widths)])
        )
    twin = TwinEncoder(towers[0], towers[1], cfg["l"])
    if twin.fingerprint() != header["fingerprint"]:
        raise ParseError("checkpoint fingerprint does not match its tensors", None, path)
    return twin, header.get("meta", {})
