from .tensor import DimensionError, Tensor, backward, gradients, no_grad
from . import functional
from .optim import AdamState, Adam, adam_step, poly_decay_lr
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam", "AdamState", "DimensionError", "Tensor", "adam_step", "backward",
    "functional", "gradients", "load_checkpoint", "no_grad", "poly_decay_lr",
    "save_checkpoint",
]
