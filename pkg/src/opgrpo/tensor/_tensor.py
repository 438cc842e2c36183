"""This module provides a dense float64 tensor with reverse-mode automatic
differentiation, and the primitive operations it supports."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from opgrpo.tensor._tape import (
    BackwardFn,
    ComputationTape,
    NonFiniteError,
    TapeError,
    TapeNode,
    active_tape,
)
from opgrpo.utilities import OptionEnum

# pylint: disable=protected-access

Array = NDArray[np.float64]


class ShapeMismatchError(ValueError):
    """Error raised when operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """Error raised when an operation is evaluated outside its domain, e.g. the log of a
    non-positive value or a division by zero."""


class ElementwiseOp(OptionEnum):
    """An enum detailing the elementwise primitives available through `elementwise`.

    Options are:
        add, sub, mul, div - binary arithmetic\n
        neg, exp, log, tanh, square - unary maps\n
        clamp - clip into [low, high], needs the `low` and `high` keywords\n
        minimum - elementwise minimum of two operands
    """

    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    EXP = "exp"
    LOG = "log"
    TANH = "tanh"
    SQUARE = "square"
    CLAMP = "clamp"
    MINIMUM = "minimum"


class Tensor:
    """A dense array of 64-bit floats that can take part in reverse-mode
    differentiation.

    Every tensor holds finite values only: constructing one from NaN or infinite
    data, or producing such values in any operation, raises `NonFiniteError`.

    Parameters
    ----------
    data : ArrayLike
        Values, copied into a float64 array.
    requires_grad : bool, optional
        Whether gradients should be accumulated into `.grad` for this leaf, by
        default False.
    name : str, optional
        Label used in error messages and parameter listings.

    Attributes
    ----------
    data : NDArray[np.float64]
        The values.
    grad : Optional[NDArray[np.float64]]
        Accumulated gradient, same shape as data, populated by backward.
    """

    # Makes numpy hand mixed `ndarray <op> Tensor` expressions to the Tensor operators.
    __array_ufunc__ = None

    def __init__(
        self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None
    ) -> None:
        values = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(name or "tensor", stage="construction")
        self.data: Array = values
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad
        self.name = name
        self._op: Optional[str] = None
        self._tape: Optional[ComputationTape] = None

    @classmethod
    def _from_op(
        cls,
        op_name: str,
        data: Array,
        inputs: Sequence["Tensor"],
        backward_fn: BackwardFn,
    ) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op_name)
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.requires_grad = False
        out.name = None
        out._op = None
        out._tape = None

        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._op = op_name
            tape.record(TapeNode(op_name, tuple(inputs), out, backward_fn))
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the tensor."""
        return self.data.shape

    @property
    def size(self) -> int:
        """Number of entries."""
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        """Whether this tensor was created directly rather than by a recorded op."""
        return self._op is None

    def item(self) -> float:
        """Return the value of a single-entry tensor as a float."""
        if self.size != 1:
            raise ShapeMismatchError(
                f"Only single-entry tensors convert to float. Shape: {self.shape}"
            )
        return float(self.data.reshape(-1)[0])

    def __float__(self) -> float:
        return self.item()

    def numpy(self) -> Array:
        """Return a copy of the values."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Return a constant copy of this tensor that no gradient flows through."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        """Forget any accumulated gradient."""
        self.grad = None

    def accumulate_grad(self, grad: Array) -> None:
        """Add a gradient contribution to `.grad`."""
        grad = np.asarray(grad, dtype=np.float64).reshape(self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return (
            f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"
        )

    def __add__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return add(self, other)

    def __radd__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return add(other, self)

    def __sub__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor | ArrayLike") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        """Sum over one axis, or all entries when axis is None."""
        return tensor_sum(self, axis=axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        """Mean over one axis, or all entries when axis is None."""
        return tensor_mean(self, axis=axis)

    def exp(self) -> "Tensor":
        """Elementwise exponential."""
        return exp(self)

    def log(self) -> "Tensor":
        """Elementwise natural logarithm."""
        return log(self)

    def tanh(self) -> "Tensor":
        """Elementwise hyperbolic tangent."""
        return tanh(self)

    def square(self) -> "Tensor":
        """Elementwise square."""
        return square(self)

    def clamp(self, low: float, high: float) -> "Tensor":
        """Elementwise clip into [low, high]."""
        return clamp(self, low, high)


def as_tensor(value: "Tensor | ArrayLike") -> Tensor:
    """Return the value itself if it is a tensor, or wrap it as a constant."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _is_scalar_shape(shape: Tuple[int, ...]) -> bool:
    return len(shape) == 0 or shape == (1,)


def _check_broadcast(op_name: str, left: Tensor, right: Tensor) -> None:
    """Allow equal shapes, scalar against anything and a row vector against a matrix."""
    l_shape, r_shape = left.shape, right.shape
    if l_shape == r_shape or _is_scalar_shape(l_shape) or _is_scalar_shape(r_shape):
        return
    if len(l_shape) == 1 and len(r_shape) == 2 and l_shape[0] == r_shape[1]:
        return
    if len(r_shape) == 1 and len(l_shape) == 2 and r_shape[0] == l_shape[1]:
        return
    raise ShapeMismatchError(
        f"Shapes {l_shape} and {r_shape} cannot be combined in `{op_name}`."
    )


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(
    op_name: str,
    left: "Tensor | ArrayLike",
    right: "Tensor | ArrayLike",
    forward: Callable[[Array, Array], Array],
    backward: Callable[[Array, Array, Array, Array], Tuple[Array, Array]],
) -> Tensor:
    a, b = as_tensor(left), as_tensor(right)
    _check_broadcast(op_name, a, b)
    out_data = forward(a.data, b.data)

    def backward_fn(grad: Array) -> Tuple[Array, Array]:
        grad_a, grad_b = backward(grad, a.data, b.data, out_data)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor._from_op(op_name, out_data, (a, b), backward_fn)


def add(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Elementwise sum."""
    return _binary(
        "add", left, right, np.add, lambda g, a, b, out: (g, g)  # type: ignore
    )


def sub(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Elementwise difference."""
    return _binary(
        "sub", left, right, np.subtract, lambda g, a, b, out: (g, -g)  # type: ignore
    )


def mul(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Elementwise product."""
    return _binary(
        "mul",
        left,
        right,
        np.multiply,  # type: ignore
        lambda g, a, b, out: (g * b, g * a),
    )


def div(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Elementwise quotient.

    Raises
    ------
    DomainError
        If any denominator entry is zero.
    """
    denominator = as_tensor(right)
    if np.any(denominator.data == 0.0):
        raise DomainError("Division by zero in `div`.")
    return _binary(
        "div",
        left,
        denominator,
        np.divide,  # type: ignore
        lambda g, a, b, out: (g / b, -g * a / (b * b)),
    )


def minimum(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Elementwise minimum. On ties the gradient flows to the left operand."""
    a, b = as_tensor(left), as_tensor(right)
    _check_broadcast("minimum", a, b)
    choose_left = a.data <= b.data
    out_data = np.where(choose_left, a.data, b.data)

    def backward_fn(grad: Array) -> Tuple[Array, Array]:
        return (
            _unbroadcast(np.where(choose_left, grad, 0.0), a.shape),
            _unbroadcast(np.where(choose_left, 0.0, grad), b.shape),
        )

    return Tensor._from_op("minimum", out_data, (a, b), backward_fn)


def _unary(
    op_name: str,
    value: "Tensor | ArrayLike",
    forward: Callable[[Array], Array],
    derivative: Callable[[Array, Array], Array],
) -> Tensor:
    x = as_tensor(value)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = forward(x.data)
    return Tensor._from_op(
        op_name, out_data, (x,), lambda g: (g * derivative(x.data, out_data),)
    )


def neg(value: "Tensor | ArrayLike") -> Tensor:
    """Elementwise negation."""
    return _unary("neg", value, np.negative, lambda x, out: -np.ones_like(x))


def exp(value: "Tensor | ArrayLike") -> Tensor:
    """Elementwise exponential."""
    return _unary("exp", value, np.exp, lambda x, out: out)


def log(value: "Tensor | ArrayLike") -> Tensor:
    """Elementwise natural logarithm.

    Raises
    ------
    DomainError
        If any entry is not strictly positive.
    """
    x = as_tensor(value)
    if np.any(x.data <= 0.0):
        raise DomainError("Logarithm of a non-positive value in `log`.")
    return _unary("log", x, np.log, lambda x, out: 1.0 / x)


def tanh(value: "Tensor | ArrayLike") -> Tensor:
    """Elementwise hyperbolic tangent."""
    return _unary("tanh", value, np.tanh, lambda x, out: 1.0 - out * out)


def square(value: "Tensor | ArrayLike") -> Tensor:
    """Elementwise square."""
    return _unary("square", value, np.square, lambda x, out: 2.0 * x)


def clamp(value: "Tensor | ArrayLike", low: float, high: float) -> Tensor:
    """Clip every entry into [low, high]. The gradient is one inside the interval
    (bounds included) and zero outside it."""
    if low > high:
        raise ValueError(f"Clamp bounds are inverted: low={low}, high={high}")
    return _unary(
        "clamp",
        value,
        lambda x: np.clip(x, low, high),
        lambda x, out: ((x >= low) & (x <= high)).astype(np.float64),
    )


def matmul(left: "Tensor | ArrayLike", right: "Tensor | ArrayLike") -> Tensor:
    """Matrix product of two 2-D tensors.

    Raises
    ------
    ShapeMismatchError
        If either operand is not 2-D or the inner dimensions disagree.
    """
    a, b = as_tensor(left), as_tensor(right)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"Shapes {a.shape} and {b.shape} cannot be combined in `matmul`."
        )
    out_data = a.data @ b.data
    return Tensor._from_op(
        "matmul", out_data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def tensor_sum(value: "Tensor | ArrayLike", axis: Optional[int] = None) -> Tensor:
    """Sum over one axis, or all entries when axis is None."""
    x = as_tensor(value)
    out_data = np.asarray(np.sum(x.data, axis=axis))

    def backward_fn(grad: Array) -> Tuple[Array]:
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return Tensor._from_op("sum", out_data, (x,), backward_fn)


def tensor_mean(value: "Tensor | ArrayLike", axis: Optional[int] = None) -> Tensor:
    """Mean over one axis, or all entries when axis is None."""
    x = as_tensor(value)
    count = x.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis=axis), 1.0 / count)


def reshape(value: "Tensor | ArrayLike", shape: Tuple[int, ...]) -> Tensor:
    """Return the same entries laid out with a new shape."""
    x = as_tensor(value)
    out_data = x.data.reshape(shape)
    return Tensor._from_op("reshape", out_data, (x,), lambda g: (g.reshape(x.shape),))


def concat(values: Sequence["Tensor | ArrayLike"], axis: int = 1) -> Tensor:
    """Concatenate tensors along an existing axis."""
    tensors = [as_tensor(v) for v in values]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._from_op(
        "concat",
        out_data,
        tensors,
        lambda g: tuple(np.split(g, boundaries, axis=axis)),
    )


def stack(values: Sequence["Tensor | ArrayLike"], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    tensors = [as_tensor(v) for v in values]
    if len({t.shape for t in tensors}) > 1:
        raise ShapeMismatchError("All tensors must share one shape in `stack`.")
    out_data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._from_op(
        "stack",
        out_data,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


_UNARY_OPS = {
    ElementwiseOp.NEG: neg,
    ElementwiseOp.EXP: exp,
    ElementwiseOp.LOG: log,
    ElementwiseOp.TANH: tanh,
    ElementwiseOp.SQUARE: square,
}
_BINARY_OPS = {
    ElementwiseOp.ADD: add,
    ElementwiseOp.SUB: sub,
    ElementwiseOp.MUL: mul,
    ElementwiseOp.DIV: div,
    ElementwiseOp.MINIMUM: minimum,
}


def elementwise(
    op_kind: ElementwiseOp | str,
    *inputs: "Tensor | ArrayLike",
    low: Optional[float] = None,
    high: Optional[float] = None,
) -> Tensor:
    """Apply an elementwise primitive by name.

    Parameters
    ----------
    op_kind : ElementwiseOp | str
        Which primitive to apply.
    *inputs : Tensor | ArrayLike
        One operand for unary primitives and clamp, two for binary primitives.
    low, high : float, optional
        Bounds, required for clamp only.

    Returns
    -------
    Tensor

    Raises
    ------
    ValueError
        If the number of operands does not match the primitive, or clamp bounds are
        missing.
    """
    kind = ElementwiseOp.parse(op_kind)
    if kind is ElementwiseOp.CLAMP:
        if len(inputs) != 1 or low is None or high is None:
            raise ValueError("`clamp` takes one operand and both `low` and `high`.")
        return clamp(inputs[0], low, high)
    if kind in _UNARY_OPS:
        if len(inputs) != 1:
            raise ValueError(f"`{kind}` takes exactly one operand.")
        return _UNARY_OPS[kind](inputs[0])
    if len(inputs) != 2:
        raise ValueError(f"`{kind}` takes exactly two operands.")
    return _BINARY_OPS[kind](inputs[0], inputs[1])


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss through the tape that
    recorded it.

    Raises
    ------
    TapeError
        If the loss was not produced by a recorded forward pass, is not scalar, or its
        tape has already been walked backwards.
    """
    if loss._tape is None:
        raise TapeError("Loss was not produced by a recorded forward pass.")
    loss._tape.backward(loss)
