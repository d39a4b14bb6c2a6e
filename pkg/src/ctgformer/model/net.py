"""The patch-transformer network.

Each channel is processed independently: per-sequence standardisation over
observed samples, segmentation into patches, linear patch embedding plus a
learned positional table, a stack of post-norm encoder layers whose attention
ignores mostly-missing patches, masked global average pooling, and finally a
sigmoid head over the two concatenated channel summaries.

All stages run batched over a leading batch axis; the public single-trace
operations wrap batches of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ModelError
from ..numcore import (
    Tensor,
    activation,
    concat,
    dropout,
    layer_norm,
    masked_fill,
    matmul,
    reshape,
    sigmoid,
    softmax,
    transpose,
)
from ..signal import Trace
from .config import ModelConfig
from .params import Backbone, LayerParams, ModelParams

INSTANCE_NORM_EPS = 1e-8
LAYER_NORM_EPS = 1e-5


@dataclass
class PatchSet:
    patches: np.ndarray      # (N, P) patch values
    patch_mask: np.ndarray   # (N,) True where the patch is attended


def instance_normalize(values: np.ndarray, mask: np.ndarray,
                       eps: float = INSTANCE_NORM_EPS):
    """Standardise observed samples to zero mean, unit variance; masked
    positions stay 0. Statistics are recomputed per call, so inference uses
    each sequence's own mean and variance. Returns (normalized, mu, sigma)."""
    normalized, mu, sigma = _instance_normalize_batch(values[None, :], mask[None, :], eps)
    return normalized[0], float(mu[0]), float(sigma[0])


def _instance_normalize_batch(values: np.ndarray, mask: np.ndarray,
                              eps: float = INSTANCE_NORM_EPS):
    counts = mask.sum(axis=1)
    if np.any(counts < 2):
        raise ModelError("instance normalization needs at least 2 observed samples per channel")
    masked_vals = np.where(mask, values, 0.0)
    mu = masked_vals.sum(axis=1) / counts
    centered = np.where(mask, values - mu[:, None], 0.0)
    sigma = np.sqrt((centered ** 2).sum(axis=1) / counts)
    sigma = np.maximum(sigma, eps)
    return centered / sigma[:, None], mu, sigma


def make_patches(channel: np.ndarray, mask: np.ndarray, patch_len: int, stride: int) -> PatchSet:
    """Cut one channel into patches of ``patch_len`` every ``stride`` samples.
    A patch is attended unless more than half of its samples are masked out."""
    patches, patch_mask = _make_patches_batch(channel[None, :], mask[None, :],
                                              patch_len, stride)
    return PatchSet(patches=patches[0], patch_mask=patch_mask[0])


def _patch_indices(seq_len: int, patch_len: int, stride: int) -> np.ndarray:
    if patch_len > seq_len:
        raise ModelError(f"patch_len {patch_len} exceeds sequence length {seq_len}")
    n = (seq_len - patch_len) // stride + 1
    return np.arange(n)[:, None] * stride + np.arange(patch_len)[None, :]


def _make_patches_batch(values: np.ndarray, mask: np.ndarray, patch_len: int, stride: int):
    idx = _patch_indices(values.shape[1], patch_len, stride)
    patches = values[:, idx]                       # (B, N, P)
    missing = (~mask)[:, idx].sum(axis=2)          # (B, N)
    patch_mask = missing <= patch_len * 0.5
    return patches, patch_mask


def patch_count(seq_len: int, patch_len: int, stride: int) -> int:
    return _patch_indices(seq_len, patch_len, stride).shape[0]


def embed_patches(ps: PatchSet, w_patch: Tensor, w_pos: Tensor) -> Tensor:
    """Project patches into the latent width and add positional rows. Masked
    patches are embedded too; masking is enforced inside attention."""
    n = ps.patches.shape[-2]
    if w_pos.shape[0] != n:
        raise ModelError(f"positional table has {w_pos.shape[0]} rows, need {n}")
    return matmul(Tensor(ps.patches), w_patch) + w_pos


def attention(e: Tensor, layer: LayerParams, patch_mask: np.ndarray, n_heads: int,
              attn_dropout: float = 0.0, training: bool = False,
              rng: Optional[np.random.Generator] = None) -> Tensor:
    """Multi-head self-attention with masked key columns.

    Masked patches receive -inf logits in every row, so their weight is
    exactly zero and unmasked rows match what physical deletion of the
    masked keys/values would give.
    """
    squeeze = e.ndim == 2
    if squeeze:
        e = reshape(e, (1,) + e.shape)
        patch_mask = np.asarray(patch_mask, dtype=bool)[None, :]
    b, n, d = e.shape
    if d % n_heads != 0:
        raise ModelError(f"width {d} not divisible by {n_heads} heads")
    if not patch_mask.any(axis=1).all():
        raise ModelError("attention saw a sequence with every patch masked")
    dk = d // n_heads

    def heads(x):
        return transpose(reshape(x, (b, n, n_heads, dk)), (0, 2, 1, 3))

    q, k, v = heads(matmul(e, layer.w_q)), heads(matmul(e, layer.w_k)), heads(matmul(e, layer.w_v))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    key_gone = (~patch_mask)[:, None, None, :]     # broadcast over heads and query rows
    weights = softmax(masked_fill(scores, key_gone, -np.inf), axis=-1)
    weights = dropout(weights, attn_dropout, training=training, rng=rng)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (b, n, d))
    out = matmul(ctx, layer.w_o)
    return reshape(out, (n, d)) if squeeze else out


def ffn(h: Tensor, layer: LayerParams, kind: str) -> Tensor:
    """Position-wise feed-forward: act(h W1 + b1) W2 + b2."""
    return matmul(activation(matmul(h, layer.w_ffn1) + layer.b_ffn1, kind), layer.w_ffn2) + layer.b_ffn2


def encoder_layer(e: Tensor, layer: LayerParams, patch_mask: np.ndarray, cfg: ModelConfig,
                  training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Post-norm block: LN(e + Drop(Attn(e))) then LN(. + Drop(FFN(.)))."""
    a = attention(e, layer, patch_mask, cfg.n_heads, cfg.attn_dropout, training, rng)
    e1 = layer_norm(e + dropout(a, cfg.dropout, training=training, rng=rng),
                    layer.ln1_gain, layer.ln1_bias, eps=LAYER_NORM_EPS)
    f = ffn(e1, layer, cfg.activation)
    return layer_norm(e1 + dropout(f, cfg.dropout, training=training, rng=rng),
                      layer.ln2_gain, layer.ln2_bias, eps=LAYER_NORM_EPS)


def run_encoder(e: Tensor, backbone: Backbone, patch_mask: np.ndarray, cfg: ModelConfig,
                training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    for layer in backbone.layers:
        e = encoder_layer(e, layer, patch_mask, cfg, training, rng)
    return e


def _encode_channel_batch(values: np.ndarray, mask: np.ndarray, cfg: ModelConfig,
                          backbone: Backbone, training: bool = False,
                          rng: Optional[np.random.Generator] = None):
    normalized, _, _ = _instance_normalize_batch(values, mask)
    patches, patch_mask = _make_patches_batch(normalized, mask, cfg.patch_len, cfg.stride)
    e = matmul(Tensor(patches), backbone.w_patch) + backbone.w_pos
    return run_encoder(e, backbone, patch_mask, cfg, training, rng), patch_mask


def encode_channel(values: np.ndarray, mask: np.ndarray, cfg: ModelConfig,
                   params: ModelParams, channel: int = 0, training: bool = False,
                   rng: Optional[np.random.Generator] = None) -> Tensor:
    """Encode one channel of one trace to its (N, d) patch representations."""
    e, _ = _encode_channel_batch(np.asarray(values)[None, :], np.asarray(mask, dtype=bool)[None, :],
                                 cfg, params.backbone_for(channel), training, rng)
    return reshape(e, e.shape[1:])


def pool_channel(e: Tensor, patch_mask: np.ndarray) -> Tensor:
    """Mean of the attended patch representations."""
    squeeze = e.ndim == 2
    if squeeze:
        e = reshape(e, (1,) + e.shape)
        patch_mask = np.asarray(patch_mask, dtype=bool)[None, :]
    counts = patch_mask.sum(axis=1)
    if np.any(counts == 0):
        raise ModelError("cannot pool a sequence with every patch masked")
    weights = Tensor((patch_mask / counts[:, None])[:, None, :])   # (B, 1, N)
    pooled = reshape(matmul(weights, e), (e.shape[0], e.shape[2]))
    return reshape(pooled, (pooled.shape[1],)) if squeeze else pooled


def classify(g_fhr: Tensor, g_toco: Tensor, w_head: Tensor, b_head: Tensor,
             fc_dropout: float = 0.0, training: bool = False,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Sigmoid probability from the concatenated channel summaries."""
    squeeze = g_fhr.ndim == 1
    if squeeze:
        g_fhr, g_toco = reshape(g_fhr, (1, -1)), reshape(g_toco, (1, -1))
    fused = dropout(concat([g_fhr, g_toco], axis=-1), fc_dropout, training=training, rng=rng)
    prob = sigmoid(matmul(fused, w_head) + b_head)
    out = reshape(prob, (prob.shape[0],))
    return reshape(out, ()) if squeeze else out


def forward_batch(batch: dict, cfg: ModelConfig, params: ModelParams,
                  training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Probabilities for a stacked batch (see ``data.stack_traces``)."""
    pooled = []
    for c, (vals, mask) in enumerate((("fhr", "fhr_mask"), ("toco", "toco_mask"))):
        e, patch_mask = _encode_channel_batch(batch[vals], batch[mask], cfg,
                                              params.backbone_for(c), training, rng)
        pooled.append(pool_channel(e, patch_mask))
    return classify(pooled[0], pooled[1], params.w_head, params.b_head,
                    cfg.fc_dropout, training, rng)


def max_forward_chunk(cfg: ModelConfig, budget_bytes: int = 384 << 20) -> int:
    """Largest trace count one training forward pass may carry without the
    taped activations outgrowing the memory budget.

    The tape keeps every layer's intermediates alive until backward: per
    trace and layer roughly six attention-score-sized arrays
    (heads x N x N) plus about fourteen token-sized ones (N x width),
    float64. Depends only on the config, so chunked runs stay deterministic.
    """
    n = cfg.n_patches
    per_layer = 6 * cfg.n_heads * n * n + 14 * n * max(cfg.d_model, cfg.d_ff)
    per_trace = cfg.n_layers * per_layer * 8
    return max(1, budget_bytes // per_trace)


def forward(trace: Trace, cfg: ModelConfig, params: ModelParams,
            training: bool = False, rng: Optional[np.random.Generator] = None) -> float:
    batch = {"fhr": trace.fhr[None, :], "fhr_mask": trace.fhr_mask[None, :],
             "toco": trace.toco[None, :], "toco_mask": trace.toco_mask[None, :]}
    return float(forward_batch(batch, cfg, params, training, rng).data[0])


def predict(trace: Trace, cfg: ModelConfig, params: ModelParams,
            threshold: float = 0.5) -> tuple:
    """(probability, hard label) at the given decision threshold."""
    prob = forward(trace, cfg, params, training=False)
    return prob, int(prob >= threshold)


def predict_scores(traces, cfg: ModelConfig, params: ModelParams,
                   batch_size: int = 256) -> np.ndarray:
    """Inference probabilities for a list of traces, batched, no tape."""
    from ..data import stack_traces

    step = min(batch_size, max_forward_chunk(cfg))
    scores = []
    for lo in range(0, len(traces), step):
        chunk = stack_traces(traces[lo:lo + step])
        scores.append(forward_batch(chunk, cfg, params, training=False).data)
    return np.concatenate(scores)
