from . import ops
from .checkpoint import load_archive, save_archive
from .gradcheck import GradcheckReport, NonDeterministicError, gradcheck
from .layers import BatchNorm, Conv2d, ConvUnit, Linear, Module, Parameter, set_padding
from .optim import Adam
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    no_grad,
    set_finite_checks,
)

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "ConvUnit", "GradcheckReport", "Linear", "Module",
    "NonDeterministicError", "NonFiniteError", "Parameter", "ShapeError", "Tape", "Tensor",
    "as_tensor", "backward", "gradcheck", "load_archive", "no_grad", "ops", "save_archive",
    "set_finite_checks", "set_padding",
]
