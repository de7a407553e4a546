"""Dense float64 arithmetic with a reverse-mode tape."""

from . import ops
from .gradcheck import GradCheckReport, finite_diff_check
from .ops import (
    concat,
    elu,
    exp,
    gather_rows,
    leaky_relu,
    log_sigmoid,
    log,
    matmul,
    relu,
    scatter_add_rows,
    segment_softmax,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from .optim import AdamW, cosine_lr
from .tensor import NumericError, ShapeError, Tape, Tensor, as_tensor, current_tape, no_tape

__all__ = [
    "AdamW",
    "GradCheckReport",
    "NumericError",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "concat",
    "cosine_lr",
    "current_tape",
    "elu",
    "exp",
    "finite_diff_check",
    "gather_rows",
    "leaky_relu",
    "log_sigmoid",
    "log",
    "matmul",
    "no_tape",
    "ops",
    "relu",
    "scatter_add_rows",
    "segment_softmax",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
]
