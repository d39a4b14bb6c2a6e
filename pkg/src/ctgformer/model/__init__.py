"""Patch-transformer model: config, parameters, network, checkpoints."""

from .config import ACTIVATION_KINDS, ModelConfig
from .params import (
    Backbone,
    LayerParams,
    ModelParams,
    clone_param_data,
    init_params,
    load_param_data,
    named_tensors,
)
from .net import (
    PatchSet,
    attention,
    classify,
    embed_patches,
    encode_channel,
    encoder_layer,
    ffn,
    forward,
    forward_batch,
    instance_normalize,
    make_patches,
    patch_count,
    pool_channel,
    predict,
    predict_scores,
    run_encoder,
)
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint

__all__ = [
    "ACTIVATION_KINDS",
    "Backbone",
    "FORMAT_VERSION",
    "LayerParams",
    "ModelConfig",
    "ModelParams",
    "PatchSet",
    "attention",
    "classify",
    "clone_param_data",
    "embed_patches",
    "encode_channel",
    "encoder_layer",
    "ffn",
    "forward",
    "forward_batch",
    "init_params",
    "instance_normalize",
    "load_checkpoint",
    "load_param_data",
    "make_patches",
    "named_tensors",
    "patch_count",
    "pool_channel",
    "predict",
    "predict_scores",
    "run_encoder",
    "save_checkpoint",
]
