"""Dense tensor engine with tape-based reverse-mode differentiation."""
from . import ops
from .fft import fft, fft2, fft2_array, next_pow2
from .gradcheck import GradCheckResult, gradcheck, relative_error
from .module import Conv2d, DWConv2d, LayerNorm, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    default_dtype,
    no_grad,
    precision,
)

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "DWConv2d",
    "GradCheckResult",
    "LayerNorm",
    "Linear",
    "Module",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "default_dtype",
    "fft",
    "fft2",
    "fft2_array",
    "gradcheck",
    "next_pow2",
    "no_grad",
    "ops",
    "precision",
    "relative_error",
]
