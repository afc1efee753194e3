from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients
from .module import Conv2d, InstanceNorm, Linear, Module, Parameter
from .optim import Adam, AdamState, adam_step, lr_linear_decay
from .tensor import NonScalarOutput, TapeMissing, Tensor, backward

__all__ = [
    "ops", "Tensor", "backward", "NonScalarOutput", "TapeMissing",
    "Module", "Parameter", "Conv2d", "Linear", "InstanceNorm",
    "Adam", "AdamState", "adam_step", "lr_linear_decay",
    "save_checkpoint", "load_checkpoint", "CheckpointError", "check_gradients",
]
