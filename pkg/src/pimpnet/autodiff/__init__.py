"""Minimal reverse-mode autodiff over dense numpy-backed tensors."""
from . import ops
from .optim import AdamState, adam_step, zero_grad
from .tensor import Tape, Tensor, backward, current_tape, default_dtype, precision

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "current_tape",
    "default_dtype",
    "ops",
    "precision",
    "zero_grad",
]
