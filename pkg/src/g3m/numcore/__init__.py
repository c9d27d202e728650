"""Dense float64 tensors with reverse-mode autodiff and Adam."""
from . import ops
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .ops import OPS, forward
from .optim import AdamState, adam_step
from .tensor import DTYPE, Parameter, ShapeError, Tape, TapeError, Tensor, backward, lift

__all__ = [
    "DTYPE", "OPS", "AdamState", "GradCheckError", "GradCheckReport", "Parameter",
    "ShapeError", "Tape", "TapeError", "Tensor", "adam_step", "backward", "forward",
    "grad_check", "lift", "ops",
]
