from . import checkpoint
from .kernels import BACKEND
from .tensor import (
    Graph,
    Tensor,
    add,
    batch_norm2d,
    concat,
    conv2d,
    dense,
    depthwise_conv2d,
    exp,
    global_avg_pool,
    index_select,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    softmax,
    square,
    sum,
    weighted_sum,
)

__all__ = [
    "BACKEND",
    "Graph",
    "Tensor",
    "add",
    "batch_norm2d",
    "checkpoint",
    "concat",
    "conv2d",
    "dense",
    "depthwise_conv2d",
    "exp",
    "global_avg_pool",
    "index_select",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "softmax",
    "square",
    "sum",
    "weighted_sum",
]
