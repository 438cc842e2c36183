"""Tensor package. A small float64 array type with reverse-mode automatic
differentiation recorded on an explicit computation tape."""

from opgrpo.tensor._tape import (
    ComputationTape,
    NonFiniteError,
    TapeError,
    TapeNode,
    active_tape,
)
from opgrpo.tensor._tensor import (
    DomainError,
    ElementwiseOp,
    ShapeMismatchError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    div,
    elementwise,
    exp,
    log,
    matmul,
    minimum,
    mul,
    neg,
    reshape,
    square,
    stack,
    sub,
    tanh,
    tensor_mean,
    tensor_sum,
)
