"""Minimal tensor engine: primitives with hand-written backward passes."""
from .fftconv import conv2d_multi, conv2d_multi_backward
from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    BCE_EPS,
    bce_loss,
    concat_channels,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    pool3,
    pool3_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    split_backward,
    tensor,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "BCE_EPS", "GradCheckReport", "adam_step", "bce_loss", "concat_channels",
    "conv2d", "conv2d_backward", "conv2d_multi", "conv2d_multi_backward", "dense",
    "dense_backward", "grad_check", "pool3", "pool3_backward", "relative_error", "relu",
    "relu_backward", "sigmoid", "sigmoid_backward", "softmax", "softmax_backward",
    "split_backward", "tensor",
]
