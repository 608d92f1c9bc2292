from .tensor import DTYPE, GraphError, Tensor, backward, precision
from .functional import (
    add,
    batch_norm2d,
    concat_channels,
    conv2d,
    maxpool2d,
    mul,
    scale,
    silu,
    split_channels,
    sum_all,
    upsample_nearest2x,
)
from . import checkpoint

__all__ = [
    "DTYPE",
    "GraphError",
    "Tensor",
    "add",
    "backward",
    "batch_norm2d",
    "checkpoint",
    "concat_channels",
    "conv2d",
    "maxpool2d",
    "mul",
    "precision",
    "scale",
    "silu",
    "split_channels",
    "sum_all",
    "upsample_nearest2x",
]
