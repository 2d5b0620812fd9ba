from . import functional
from .checkpoint import CheckpointError, load_params, save_params
from .optim import AdamState, adam_step, lr_schedule
from .tensor import DimensionError, Tape, Tensor, backward

__all__ = [
    "AdamState",
    "CheckpointError",
    "DimensionError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "functional",
    "load_params",
    "lr_schedule",
    "save_params",
]
