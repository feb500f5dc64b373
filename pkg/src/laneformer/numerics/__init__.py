"""Dense tensor core: primitives, reverse-mode gradients, gradient checking."""
from .geometry import roi_align, roi_sampling_matrix, sinusoidal_embedding, sinusoidal_grid, sinusoidal_table
from .gradcheck import grad_check
from .tensor import (
    GradTape,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    conv2d,
    index,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    set_finite_check,
    sigmoid,
    softmax,
    sub,
    tabs,
    transpose,
    tsum,
)

__all__ = [
    "GradTape", "Tensor", "add", "as_tensor", "clamp_min", "concat", "conv2d", "grad_check",
    "index", "layer_norm", "linear", "log", "matmul", "mean", "mul", "no_grad", "relu",
    "reshape", "roi_align", "roi_sampling_matrix", "scale", "set_finite_check", "sigmoid",
    "sinusoidal_embedding", "sinusoidal_grid", "sinusoidal_table", "softmax", "sub", "tabs",
    "transpose", "tsum",
]
