from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .fused import additive_attention, neighbor_pairs
from .optim import AdamW, OneCycleSchedule, optimizer_step
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    current_tape,
    div,
    gather,
    matmul,
    max_,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    softmax,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamW", "CheckpointError", "additive_attention", "neighbor_pairs", "OneCycleSchedule", "Tape", "Tensor", "add", "as_tensor",
    "backward", "concat", "current_tape", "div", "gather", "load_checkpoint", "matmul", "max_",
    "mean", "mul", "neg", "no_grad", "optimizer_step", "relu", "reshape", "save_checkpoint",
    "softmax", "sub", "sum_", "tanh", "transpose",
]
