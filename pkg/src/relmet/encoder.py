"""Convolutional sentence encoder with exact reverse-mode gradients.

Pipeline per instance: word embedding (optionally shifted by a perturbation)
concatenated with two position embeddings, same-padded 1-D convolution, ReLU,
max-pool over valid (non-PAD) time steps, affine projection, safe L2
normalization.  All arithmetic is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .data import PAD_ID, EncodedBatch

NORM_EPS = 1e-12
CHECKPOINT_FORMAT = "relmet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    word_dim: int = 64
    position_dim: int = 8
    num_filters: int = 64
    kernel_width: int = 3
    hidden_dim: int = 64
    max_len: int = 20
    max_offset: int = 20

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.kernel_width > self.max_len:
            raise ValueError("kernel_width must not exceed max_len")

    @property
    def input_dim(self):
        return self.word_dim + 2 * self.position_dim

    @property
    def num_positions(self):
        return 2 * self.max_offset + 1


@dataclass
class EncoderParams:
    word_emb: np.ndarray  # (vocab_size, word_dim)
    pos1_emb: np.ndarray  # (num_positions, position_dim)
    pos2_emb: np.ndarray  # (num_positions, position_dim)
    conv_w: np.ndarray  # (num_filters, kernel_width, input_dim)
    conv_b: np.ndarray  # (num_filters,)
    proj_w: np.ndarray  # (num_filters, hidden_dim)
    proj_b: np.ndarray  # (hidden_dim,)

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.tensors().items()})

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(**{k: np.zeros_like(v) for k, v in self.tensors().items()})


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Scaled-uniform init for every weight tensor; biases start at zero."""
    d = cfg.input_dim
    return EncoderParams(
        word_emb=_glorot(rng, (cfg.vocab_size, cfg.word_dim), cfg.vocab_size, cfg.word_dim),
        pos1_emb=_glorot(rng, (cfg.num_positions, cfg.position_dim), cfg.num_positions, cfg.position_dim),
        pos2_emb=_glorot(rng, (cfg.num_positions, cfg.position_dim), cfg.num_positions, cfg.position_dim),
        conv_w=_glorot(rng, (cfg.num_filters, cfg.kernel_width, d), cfg.kernel_width * d, cfg.kernel_width * cfg.num_filters),
        conv_b=np.zeros(cfg.num_filters),
        proj_w=_glorot(rng, (cfg.num_filters, cfg.hidden_dim), cfg.num_filters, cfg.hidden_dim),
        proj_b=np.zeros(cfg.hidden_dim),
    )


@dataclass
class Trace:
    """Intermediate activations cached by forward for one backward pass."""

    params: EncoderParams
    batch: EncodedBatch
    x_pad: np.ndarray  # (m, max_len + kernel_width - 1, input_dim)
    relu_mask: np.ndarray  # (m, max_len, num_filters) bool
    pool_idx: np.ndarray  # (m, num_filters) argmax time index, -1 if no valid step
    pooled: np.ndarray  # (m, num_filters)
    hidden: np.ndarray  # (m, hidden_dim) pre-normalization
    norms: np.ndarray  # (m,)
    word_dim: int
    pad_left: int
    consumed: bool = False


def _validate_batch(params: EncoderParams, batch: EncodedBatch):
    vocab_size, _ = params.word_emb.shape
    n_pos = params.pos1_emb.shape[0]
    m, t = batch.token_ids.shape
    if batch.head_pos.shape != (m, t) or batch.tail_pos.shape != (m, t):
        raise ValueError("position matrices must match token_ids shape")
    if batch.token_ids.max(initial=0) >= vocab_size:
        raise ValueError("token id out of range for embedding table")
    if batch.head_pos.max(initial=0) >= n_pos or batch.tail_pos.max(initial=0) >= n_pos:
        raise ValueError("position id out of range for embedding table")


def forward(
    params: EncoderParams,
    batch: EncodedBatch,
    embedding_offset: np.ndarray | None = None,
) -> tuple[np.ndarray, Trace]:
    """Encode a batch into unit-norm rows.  Returns (representations, trace).

    `embedding_offset`, when given, is added to the looked-up word embeddings
    and must have shape (m, max_len, word_dim).
    """
    _validate_batch(params, batch)
    token_ids = batch.token_ids
    m, t = token_ids.shape
    word_dim = params.word_emb.shape[1]
    n_filters, kw, d = params.conv_w.shape

    w = params.word_emb[token_ids]
    if embedding_offset is not None:
        if embedding_offset.shape != (m, t, word_dim):
            raise ValueError(
                f"embedding_offset shape {embedding_offset.shape} != {(m, t, word_dim)}"
            )
        w = w + embedding_offset
    x = np.concatenate([w, params.pos1_emb[batch.head_pos], params.pos2_emb[batch.tail_pos]], axis=2)

    pad_left = (kw - 1) // 2
    pad_right = kw // 2
    x_pad = np.pad(x, ((0, 0), (pad_left, pad_right), (0, 0)))
    pre = np.broadcast_to(params.conv_b, (m, t, n_filters)).copy()
    for w_off in range(kw):
        pre += x_pad[:, w_off : w_off + t, :] @ params.conv_w[:, w_off, :].T
    act = np.maximum(pre, 0.0)

    valid = token_ids != PAD_ID
    masked = np.where(valid[:, :, None], act, -np.inf)
    has_valid = valid.any(axis=1)
    pool_idx = np.where(has_valid[:, None], masked.argmax(axis=1), -1)
    pooled = np.where(has_valid[:, None], masked.max(axis=1, initial=-np.inf), 0.0)

    hidden = pooled @ params.proj_w + params.proj_b
    norms = np.linalg.norm(hidden, axis=1)
    reps = hidden / (norms + NORM_EPS)[:, None]

    trace = Trace(
        params=params,
        batch=batch,
        x_pad=x_pad,
        relu_mask=pre > 0.0,
        pool_idx=pool_idx,
        pooled=pooled,
        hidden=hidden,
        norms=norms,
        word_dim=word_dim,
        pad_left=pad_left,
    )
    return reps, trace


def backward(
    params: EncoderParams, trace: Trace, grad_reps: np.ndarray
) -> tuple[EncoderParams, np.ndarray]:
    """Exact gradients of a scalar with d(scalar)/d(representations) given.

    Returns (gradients shaped like EncoderParams, gradient with respect to the
    word-embedding inputs, shape (m, max_len, word_dim)).  A trace feeds
    exactly one backward call.
    """
    if trace.consumed:
        raise ValueError("trace already consumed by a previous backward call")
    if trace.params is not params:
        raise ValueError("trace was produced by a different parameter set")
    m, t = trace.batch.token_ids.shape
    if grad_reps.shape != trace.hidden.shape:
        raise ValueError(f"grad_reps shape {grad_reps.shape} != {trace.hidden.shape}")
    trace.consumed = True
    n_filters, kw, d = params.conv_w.shape
    grads = params.zeros_like()

    # L2 normalization: r = h / (|h| + eps).
    u = trace.norms + NORM_EPS
    n_safe = np.maximum(trace.norms, 1e-300)
    hg = np.sum(trace.hidden * grad_reps, axis=1)
    g_hidden = grad_reps / u[:, None] - trace.hidden * (hg / (n_safe * u * u))[:, None]

    grads.proj_w[:] = trace.pooled.T @ g_hidden
    grads.proj_b[:] = g_hidden.sum(axis=0)
    g_pooled = g_hidden @ params.proj_w.T

    # Max-pool routes gradient to the earliest argmax time step only.
    g_act = np.zeros((m, t, n_filters))
    rows, cols = np.nonzero(trace.pool_idx >= 0)
    g_act[rows, trace.pool_idx[rows, cols], cols] = g_pooled[rows, cols]

    g_pre = g_act * trace.relu_mask
    grads.conv_b[:] = g_pre.sum(axis=(0, 1))
    g_x_pad = np.zeros_like(trace.x_pad)
    for w_off in range(kw):
        grads.conv_w[:, w_off, :] = np.einsum("btf,btd->fd", g_pre, trace.x_pad[:, w_off : w_off + t, :])
        g_x_pad[:, w_off : w_off + t, :] += g_pre @ params.conv_w[:, w_off, :]

    g_x = g_x_pad[:, trace.pad_left : trace.pad_left + t, :]
    wd = trace.word_dim
    pd = params.pos1_emb.shape[1]
    g_word_inputs = g_x[:, :, :wd].copy()
    np.add.at(grads.word_emb, trace.batch.token_ids, g_word_inputs)
    np.add.at(grads.pos1_emb, trace.batch.head_pos, g_x[:, :, wd : wd + pd])
    np.add.at(grads.pos2_emb, trace.batch.tail_pos, g_x[:, :, wd + pd :])
    return grads, g_word_inputs


def save_checkpoint(path, cfg: EncoderConfig, params: EncoderParams):
    """Write config plus parameter tensors: a JSON header line with shape
    headers followed by raw little-endian float64 bytes, bit-exact."""
    tensors = params.tensors()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderConfig, EncoderParams]:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"not a checkpoint file: {path}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format tag: {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {header.get('version')!r}")
        cfg = EncoderConfig(**header["config"])
        arrays = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape))
            buf = fh.read(n * 8)
            if len(buf) != n * 8:
                raise ValueError("checkpoint truncated")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return cfg, EncoderParams(**arrays)
