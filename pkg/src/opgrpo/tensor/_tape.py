"""This module provides the computation tape, the ordered record of primitive operations
that reverse-mode differentiation walks backwards."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

if TYPE_CHECKING:
    from opgrpo.tensor._tensor import Tensor

BackwardFn = Callable[[NDArray[np.float64]], Sequence[Optional[NDArray[np.float64]]]]


class TapeError(RuntimeError):
    """Error raised when a tape is used outside its forward/backward contract."""


class NonFiniteError(ArithmeticError):
    """Error raised when an operation produces NaN or infinite values.

    Parameters
    ----------
    op_name : str
        Name of the primitive that produced the values.
    stage : str, optional
        Either "forward" or "backward", by default "forward".
    """

    def __init__(self, op_name: str, stage: str = "forward") -> None:
        self.op_name = op_name
        self.stage = stage
        self.message = f"Non-finite values produced by `{op_name}` during {stage} pass."
        super().__init__(self.message)


@dataclass
class TapeNode:
    """One recorded primitive: its inputs, its output and the rule mapping the upstream
    gradient to one gradient per input (None where an input needs none)."""

    op_name: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward_fn: BackwardFn


_ACTIVE_TAPES: List["ComputationTape"] = []


def active_tape() -> Optional["ComputationTape"]:
    """Return the innermost tape entered with a `with` block, if any."""
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class ComputationTape:
    """Ordered record of the primitive operations of one forward pass.

    Operations on tensors that require gradients are recorded while the tape is
    active, i.e. inside `with ComputationTape() as tape:`. Outside any tape nothing is
    recorded and results do not require gradients. A tape can be walked backwards
    exactly once.

    Attributes
    ----------
    nodes : List[TapeNode]
        Recorded operations in forward order.
    traversal : List[int]
        Node indices in the order the backward pass visited them.
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []
        self.traversal: List[int] = []
        self._consumed = False

    def __enter__(self) -> "ComputationTape":
        if self._consumed:
            raise TapeError("This tape has already been walked backwards.")
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        if not _ACTIVE_TAPES or _ACTIVE_TAPES[-1] is not self:
            raise TapeError("Computation tapes must be exited in reverse entry order.")
        _ACTIVE_TAPES.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def consumed(self) -> bool:
        """Whether backward has already been run on this tape."""
        return self._consumed

    def record(self, node: TapeNode) -> None:
        """Append a node to the tape and mark its output as produced here."""
        if self._consumed:
            raise TapeError("Cannot record onto a tape that has been walked backwards.")
        self.nodes.append(node)
        node.output._tape = self  # pylint: disable=protected-access

    def backward(self, loss: "Tensor") -> None:
        """Populate `.grad` of every leaf that requires gradients with d(loss)/d(leaf).

        Parameters
        ----------
        loss : Tensor
            Scalar produced by an operation recorded on this tape.

        Raises
        ------
        TapeError
            If backward has already been run, the loss is not scalar or it was not
            produced on this tape.
        NonFiniteError
            If a gradient becomes NaN or infinite.
        """
        if self._consumed:
            raise TapeError(
                "Backward has already been run on this tape; "
                "run a fresh forward pass first."
            )
        if loss.size != 1:
            raise TapeError(f"Loss must be a scalar. Received shape: {loss.shape}")
        if loss._tape is not self:  # pylint: disable=protected-access
            raise TapeError("Loss was not produced by a forward pass recorded here.")

        pending: Dict[int, NDArray[np.float64]] = {id(loss): np.ones_like(loss.data)}
        for index in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[index]
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            self.traversal.append(index)
            for tensor, grad in zip(node.inputs, node.backward_fn(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError(node.op_name, stage="backward")
                if tensor.is_leaf:
                    tensor.accumulate_grad(grad)
                elif id(tensor) in pending:
                    pending[id(tensor)] = pending[id(tensor)] + grad
                else:
                    pending[id(tensor)] = grad

        self._consumed = True
