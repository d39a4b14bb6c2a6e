"""Learnable weights and their deterministic initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelError
from ..numcore import Tensor, param_init
from .config import ModelConfig


@dataclass
class LayerParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_ffn1: Tensor
    b_ffn1: Tensor
    w_ffn2: Tensor
    b_ffn2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class Backbone:
    w_patch: Tensor   # (P, d) patch projection
    w_pos: Tensor     # (N, d) learned positional table
    layers: list = field(default_factory=list)


@dataclass
class ModelParams:
    backbones: list            # one entry if shared, one per channel otherwise
    w_head: Tensor             # (2d, 1) on the concatenated pooled channels
    b_head: Tensor             # (1,)

    def backbone_for(self, channel: int) -> Backbone:
        return self.backbones[0] if len(self.backbones) == 1 else self.backbones[channel]


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Fan-scaled uniform init for weight matrices; zeros for biases and the
    positional table; ones for layer-norm gains. Deterministic per seed."""
    counter = iter(np.random.SeedSequence(seed).generate_state(1 + 4096).tolist())

    def uni(shape):
        return param_init(shape, "uniform_fan", seed=next(counter))

    d, dff = cfg.d_model, cfg.d_ff

    def make_backbone():
        layers = [
            LayerParams(
                w_q=uni((d, d)), w_k=uni((d, d)), w_v=uni((d, d)), w_o=uni((d, d)),
                w_ffn1=uni((d, dff)), b_ffn1=param_init((dff,), "zeros"),
                w_ffn2=uni((dff, d)), b_ffn2=param_init((d,), "zeros"),
                ln1_gain=param_init((d,), "ones"), ln1_bias=param_init((d,), "zeros"),
                ln2_gain=param_init((d,), "ones"), ln2_bias=param_init((d,), "zeros"),
            )
            for _ in range(cfg.n_layers)
        ]
        return Backbone(w_patch=uni((cfg.patch_len, d)),
                        w_pos=param_init((cfg.n_patches, d), "zeros"),
                        layers=layers)

    n_backbones = 1 if cfg.share_backbone else cfg.channels
    return ModelParams(
        backbones=[make_backbone() for _ in range(n_backbones)],
        w_head=uni((cfg.channels * d, 1)),
        b_head=param_init((1,), "zeros"),
    )


def named_tensors(params: ModelParams) -> dict:
    """Stable name -> Tensor mapping used by the optimizer and checkpoints."""
    out = {}
    for bi, bb in enumerate(params.backbones):
        prefix = f"backbone{bi}"
        out[f"{prefix}.w_patch"] = bb.w_patch
        out[f"{prefix}.w_pos"] = bb.w_pos
        for li, layer in enumerate(bb.layers):
            for name, t in vars(layer).items():
                out[f"{prefix}.layer{li}.{name}"] = t
    out["head.w"] = params.w_head
    out["head.b"] = params.b_head
    return out


def clone_param_data(params: ModelParams) -> dict:
    return {name: t.data.copy() for name, t in named_tensors(params).items()}


def load_param_data(params: ModelParams, snapshot: dict) -> None:
    named = named_tensors(params)
    if set(named) != set(snapshot):
        missing = set(named) ^ set(snapshot)
        raise ModelError(f"parameter name mismatch: {sorted(missing)[:4]}")
    for name, t in named.items():
        arr = snapshot[name]
        if arr.shape != t.data.shape:
            raise ModelError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
        t.data = arr.copy()
        t.grad = None
