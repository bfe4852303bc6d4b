"""Dense-tensor numerical engine with reverse-mode differentiation."""

from .alloc import configure_allocator
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .ops import (
    BatchNormState,
    add,
    avg_pool2d,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    max_pool2d,
    relu,
    softmax_cross_entropy,
)
from .optim import sgd_step
from .tape import (
    Parameter,
    Tape,
    TapeConsumedError,
    Tensor,
    backward,
    check_finite,
    debug_checks_enabled,
    set_debug_checks,
    zero_grads,
)

__all__ = [
    "BatchNormState",
    "CheckpointError",
    "Parameter",
    "Tape",
    "TapeConsumedError",
    "Tensor",
    "add",
    "avg_pool2d",
    "backward",
    "batch_norm",
    "check_finite",
    "configure_allocator",
    "conv2d",
    "debug_checks_enabled",
    "finite_diff_check",
    "global_avg_pool",
    "linear",
    "load_checkpoint",
    "max_pool2d",
    "relu",
    "save_checkpoint",
    "set_debug_checks",
    "sgd_step",
    "softmax_cross_entropy",
    "zero_grads",
]
