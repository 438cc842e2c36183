"""This module provides the conditional velocity field network."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from opgrpo.tensor import Tensor, add, as_tensor, concat, matmul, tanh


@dataclass(frozen=True)
class FieldArchitecture:
    """Shape of the velocity field MLP.

    Parameters
    ----------
    latent_dim : int, optional
        Dimension D of the latent, by default 2.
    num_conditions : int, optional
        Number of distinct task conditions, by default 8.
    hidden_sizes : Tuple[int, ...], optional
        Widths of the tanh hidden layers, two or three of them, by default (64, 64).
    time_embedding_dim : int, optional
        Width of the learned step embedding, by default 8.
    condition_embedding_dim : int, optional
        Width of the learned condition embedding, by default 8.
    output_scale : float, optional
        Scale applied to the initial output-layer weights, by default 0.1, so an
        untrained field moves latents only slightly.
    """

    latent_dim: int = 2
    num_conditions: int = 8
    hidden_sizes: Tuple[int, ...] = (64, 64)
    time_embedding_dim: int = 8
    condition_embedding_dim: int = 8
    output_scale: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes)
        )
        for name in (
            "latent_dim",
            "num_conditions",
            "time_embedding_dim",
            "condition_embedding_dim",
        ):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(
                    f"{name} must be a positive integer. Received: {value}"
                )
        if not 2 <= len(self.hidden_sizes) <= 3 or min(self.hidden_sizes) < 1:
            raise ValueError(
                "hidden_sizes must hold two or three positive widths. "
                f"Received: {self.hidden_sizes}"
            )
        if not self.output_scale > 0:
            raise ValueError(
                f"output_scale must be positive. Received: {self.output_scale}"
            )

    @property
    def input_dim(self) -> int:
        """Width of the network input, latent plus both embeddings."""
        return self.latent_dim + self.time_embedding_dim + self.condition_embedding_dim

    def to_dict(self) -> dict:
        """Plain-dict form used in config files and checkpoint headers."""
        return {
            "latent_dim": int(self.latent_dim),
            "num_conditions": int(self.num_conditions),
            "hidden_sizes": list(self.hidden_sizes),
            "time_embedding_dim": int(self.time_embedding_dim),
            "condition_embedding_dim": int(self.condition_embedding_dim),
            "output_scale": float(self.output_scale),
        }


def _one_hot(indices: NDArray[np.int64], width: int) -> NDArray[np.float64]:
    encoded = np.zeros((indices.shape[0], width))
    encoded[np.arange(indices.shape[0]), indices] = 1.0
    return encoded


class VelocityField:
    """Conditional velocity field v(z, t, c), a tanh MLP over the concatenation of the
    latent with learned step and condition embeddings.

    Embedding lookups are one-hot matrix products so that they are differentiable with
    the tensor primitives.

    Parameters
    ----------
    architecture : FieldArchitecture
        Layer sizes.
    num_steps : int
        Number of sampler steps T; steps are indexed 1..T.
    seed : int, optional
        Seed of the parameter initialisation, by default 0.
    requires_grad : bool, optional
        Whether the parameters accumulate gradients, by default True.
    """

    def __init__(
        self,
        architecture: FieldArchitecture,
        num_steps: int,
        seed: int = 0,
        requires_grad: bool = True,
    ) -> None:
        rng = np.random.default_rng(seed)
        arrays: Dict[str, NDArray[np.float64]] = {
            "time_embedding": rng.standard_normal(
                (num_steps, architecture.time_embedding_dim)
            ),
            "condition_embedding": rng.standard_normal(
                (architecture.num_conditions, architecture.condition_embedding_dim)
            ),
        }
        fan_in = architecture.input_dim
        for index, width in enumerate(architecture.hidden_sizes):
            arrays[f"hidden_{index}/weight"] = rng.standard_normal(
                (fan_in, width)
            ) / np.sqrt(fan_in)
            arrays[f"hidden_{index}/bias"] = np.zeros(width)
            fan_in = width
        arrays["output/weight"] = (
            rng.standard_normal((fan_in, architecture.latent_dim))
            / np.sqrt(fan_in)
            * architecture.output_scale
        )
        arrays["output/bias"] = np.zeros(architecture.latent_dim)
        self._setup(architecture, num_steps, arrays, requires_grad)

    def _setup(
        self,
        architecture: FieldArchitecture,
        num_steps: int,
        arrays: Mapping[str, NDArray[np.float64]],
        requires_grad: bool,
    ) -> None:
        if num_steps < 1:
            raise ValueError(f"num_steps must be positive. Received: {num_steps}")
        self.architecture = architecture
        self.num_steps = int(num_steps)
        self.parameters: Dict[str, Tensor] = {
            name: Tensor(values, requires_grad=requires_grad, name=name)
            for name, values in arrays.items()
        }

    @classmethod
    def from_state(
        cls,
        architecture: FieldArchitecture,
        num_steps: int,
        state: Mapping[str, NDArray[np.float64]],
        requires_grad: bool = True,
    ) -> "VelocityField":
        """Build a field from named parameter arrays, e.g. read from a checkpoint.

        Raises
        ------
        ValueError
            If a parameter is missing, unexpected or has the wrong shape.
        """
        field = cls(architecture, num_steps, seed=0, requires_grad=requires_grad)
        field.load_state_dict(state)
        return field

    @classmethod
    def constant(
        cls, architecture: FieldArchitecture, num_steps: int, velocity: ArrayLike
    ) -> "VelocityField":
        """A frozen field returning the same velocity everywhere, for analytic checks.

        All weights are zero, so every hidden activation is zero and the output equals
        the output bias.
        """
        template = cls(architecture, num_steps, seed=0, requires_grad=False)
        arrays = {
            name: np.zeros_like(values) for name, values in template.state_dict().items()
        }
        arrays["output/bias"] = np.broadcast_to(
            np.asarray(velocity, dtype=np.float64), (architecture.latent_dim,)
        ).copy()
        field = cls.__new__(cls)
        field._setup(architecture, num_steps, arrays, requires_grad=False)
        return field

    @property
    def param_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(param.size for param in self.parameters.values())

    @property
    def requires_grad(self) -> bool:
        """Whether the parameters accumulate gradients."""
        return all(param.requires_grad for param in self.parameters.values())

    def __call__(
        self,
        latents: "Tensor | ArrayLike",
        steps: "int | Sequence[int] | NDArray[np.int64]",
        condition_ids: "int | Sequence[int] | NDArray[np.int64]",
    ) -> Tensor:
        """Evaluate the field on a batch.

        Parameters
        ----------
        latents : Tensor | ArrayLike
            Latents of shape (N, D).
        steps : int | Sequence[int]
            Step index t in 1..T, one per row or shared.
        condition_ids : int | Sequence[int]
            Condition id in 0..num_conditions-1, one per row or shared.

        Returns
        -------
        Tensor
            Velocities of shape (N, D).

        Raises
        ------
        ValueError
            If the latents are not (N, D) or an index is out of range.
        """
        z = as_tensor(latents)
        if z.ndim != 2 or z.shape[1] != self.architecture.latent_dim:
            raise ValueError(
                f"Latents must have shape (N, {self.architecture.latent_dim}). "
                f"Received: {z.shape}"
            )
        rows = z.shape[0]
        step_index = np.broadcast_to(np.asarray(steps, dtype=np.int64), (rows,))
        cond_index = np.broadcast_to(np.asarray(condition_ids, dtype=np.int64), (rows,))
        if np.any(step_index < 1) or np.any(step_index > self.num_steps):
            raise ValueError(
                f"Step indices must lie in [1, {self.num_steps}]. "
                f"Received: {sorted(set(step_index.tolist()))}"
            )
        if np.any(cond_index < 0) or np.any(
            cond_index >= self.architecture.num_conditions
        ):
            raise ValueError(
                "Condition ids must lie in "
                f"[0, {self.architecture.num_conditions - 1}]. "
                f"Received: {sorted(set(cond_index.tolist()))}"
            )

        params = self.parameters
        hidden = concat(
            [
                z,
                matmul(
                    _one_hot(step_index - 1, self.num_steps), params["time_embedding"]
                ),
                matmul(
                    _one_hot(cond_index, self.architecture.num_conditions),
                    params["condition_embedding"],
                ),
            ],
            axis=1,
        )
        for index in range(len(self.architecture.hidden_sizes)):
            hidden = tanh(
                add(
                    matmul(hidden, params[f"hidden_{index}/weight"]),
                    params[f"hidden_{index}/bias"],
                )
            )
        return add(matmul(hidden, params["output/weight"]), params["output/bias"])

    def state_dict(self) -> Dict[str, NDArray[np.float64]]:
        """Copies of the named parameter arrays, in a fixed order."""
        return {name: param.numpy() for name, param in self.parameters.items()}

    def load_state_dict(self, state: Mapping[str, NDArray[np.float64]]) -> None:
        """Overwrite the parameter values in place.

        Raises
        ------
        ValueError
            If a parameter is missing, unexpected or has the wrong shape, or a value is
            non-finite.
        """
        missing = set(self.parameters) - set(state)
        unexpected = set(state) - set(self.parameters)
        if missing or unexpected:
            raise ValueError(
                "Parameter names do not match the architecture. "
                f"Missing: {sorted(missing)}, unexpected: {sorted(unexpected)}"
            )
        for name, param in self.parameters.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != param.shape:
                raise ValueError(
                    f"Parameter {name} must have shape {param.shape}. "
                    f"Received: {values.shape}"
                )
            if not np.all(np.isfinite(values)):
                raise ValueError(f"Parameter {name} holds non-finite values.")
            param.data = values.copy()

    def copy(self, requires_grad: Optional[bool] = None) -> "VelocityField":
        """Independent copy of the field."""
        field = self.__class__.__new__(self.__class__)
        field._setup(
            self.architecture,
            self.num_steps,
            self.state_dict(),
            self.requires_grad if requires_grad is None else requires_grad,
        )
        return field

    def snapshot(self) -> "VelocityField":
        """Frozen copy that never records onto a tape, used as the rollout policy."""
        return self.copy(requires_grad=False)

    def fingerprint(self) -> str:
        """SHA-256 over parameter names and raw values."""
        digest = hashlib.sha256()
        for name, param in self.parameters.items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(param.data).tobytes())
        return digest.hexdigest()

    def zero_grad(self) -> None:
        """Forget accumulated gradients."""
        for param in self.parameters.values():
            param.zero_grad()

    def gradients(self) -> Dict[str, NDArray[np.float64]]:
        """Accumulated gradients by parameter name, zeros where nothing flowed."""
        return {
            name: np.zeros_like(param.data) if param.grad is None else param.grad.copy()
            for name, param in self.parameters.items()
        }
