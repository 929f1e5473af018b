"""Small numpy autodiff engine, initializers, RMSProp and checkpoint I/O."""
from . import engine as ops
from .checkpoint import MAGIC as CHECKPOINT_MAGIC
from .checkpoint import VERSION as CHECKPOINT_VERSION
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import DTYPE, Tensor, backward, no_grad
from .gradcheck import GradCheckReport, grad_check
from .optim import Rmsprop, RmspropState, glorot_uniform, orthogonal_init, rmsprop_step

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "DTYPE",
    "GradCheckReport",
    "Rmsprop",
    "RmspropState",
    "Tensor",
    "backward",
    "glorot_uniform",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "ops",
    "orthogonal_init",
    "rmsprop_step",
    "save_checkpoint",
]
