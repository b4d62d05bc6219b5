"""Minimal reverse-mode array engine (float32, CPU)."""
from . import kernels, ops
from .array import (
    DTYPE,
    Array,
    GraphError,
    NonFiniteError,
    ShapeError,
    backward,
    is_grad_enabled,
    no_grad,
)
from .ops import (
    abs_,
    add,
    batch_norm,
    concat,
    conv2d,
    down2_avg,
    elementwise,
    exp,
    expand,
    gaussian_heatmap,
    grid_sample,
    group_norm,
    l2_normalize,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    normalized_sigmoid,
    pick,
    relu,
    resample,
    reshape,
    sigmoid,
    slice_axis,
    soft_argmax,
    soft_covariance,
    softmax,
    sub,
    sum_,
    transpose,
    up2_bilinear,
)
from .optim import SGD, sgd_step

__all__ = [
    "DTYPE", "Array", "GraphError", "NonFiniteError", "ShapeError", "backward", "is_grad_enabled",
    "no_grad", "kernels", "ops", "SGD", "sgd_step", "abs_", "add", "batch_norm", "concat", "conv2d", "down2_avg",
    "elementwise", "exp", "expand", "gaussian_heatmap", "grid_sample", "group_norm", "l2_normalize", "log",
    "log_softmax", "matmul", "mean", "mul", "neg", "normalized_sigmoid", "pick", "relu", "resample", "reshape", "sigmoid",
    "slice_axis", "soft_argmax", "soft_covariance", "softmax", "sub", "sum_", "transpose",
    "up2_bilinear",
]
