from captrfuse.core.tensor import (
    Tape,
    Tensor,
    backward,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    parameter,
    precision,
    set_default_dtype,
)
from captrfuse.core.gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "get_default_dtype",
    "is_grad_enabled",
    "no_grad",
    "parameter",
    "precision",
    "set_default_dtype",
    "GradCheckReport",
    "grad_check",
]
