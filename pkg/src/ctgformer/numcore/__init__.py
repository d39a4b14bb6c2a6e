"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""

from .tensor import Graph, Node, Tensor, as_tensor, backward
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    ACTIVATIONS,
    INIT_SCHEMES,
    activation,
    add,
    clamp,
    concat,
    dropout,
    elu,
    gelu,
    layer_norm,
    log,
    masked_fill,
    matmul,
    mul,
    neg,
    param_init,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "ACTIVATIONS",
    "INIT_SCHEMES",
    "Graph",
    "GradCheckReport",
    "Node",
    "Tensor",
    "activation",
    "add",
    "as_tensor",
    "backward",
    "clamp",
    "concat",
    "dropout",
    "elu",
    "gelu",
    "grad_check",
    "layer_norm",
    "log",
    "masked_fill",
    "matmul",
    "mul",
    "neg",
    "param_init",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "tmean",
    "transpose",
    "tsum",
]
