"""Feedforward networks with LeakyReLU hidden activations and a linear output layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from laser.core.autodiff import Var, leaky_relu
from laser.core.rng import SeededRng, sample_standard_normal
from laser.errors import DimensionError

DEFAULT_SLOPE = 0.01


@dataclass
class MlpParams:
    """Weights are stored ``(fan_in, fan_out)`` so a layer is ``h @ W + b``.

    Entries of ``weights``/``biases`` are float arrays for plain evaluation or
    :class:`~laser.core.autodiff.Var` leaves while differentiating.
    """

    layer_sizes: tuple[int, ...]
    weights: list
    biases: list
    activation_slope: float = DEFAULT_SLOPE

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise DimensionError("an MLP needs at least an input and an output size")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise DimensionError(f"expected {n_layers} weight/bias pairs")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if tuple(_shape(w)) != expected or tuple(_shape(b)) != (expected[1],):
                raise DimensionError(f"layer {i}: weight {_shape(w)} / bias {_shape(b)} do not match {expected}")
        if not 0.0 < self.activation_slope < 1.0:
            raise ValueError("activation_slope must lie in (0, 1)")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> list:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def names(self, prefix: str = "") -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out.extend((f"{prefix}W{i}", f"{prefix}b{i}"))
        return out

    def with_arrays(self, arrays: Sequence) -> "MlpParams":
        """Same architecture, parameters taken from ``arrays`` (order of :meth:`arrays`)."""
        arrays = list(arrays)
        return MlpParams(self.layer_sizes, arrays[0::2], arrays[1::2], self.activation_slope)

    def map(self, fn: Callable) -> "MlpParams":
        return self.with_arrays([fn(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return self.map(lambda a: np.array(a, dtype=np.float64, copy=True))


def _shape(a) -> tuple[int, ...]:
    return a.shape if hasattr(a, "shape") else np.shape(a)


def init_mlp(layer_sizes: Sequence[int], rng: SeededRng, slope: float = DEFAULT_SLOPE) -> MlpParams:
    """He-normal weights scaled for LeakyReLU, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        std = np.sqrt(2.0 / ((1.0 + slope**2) * fan_in))
        weights.append(std * sample_standard_normal(rng, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), weights, biases, slope)


def mlp_forward(params: MlpParams, x):
    """Evaluate the network on a batch ``x`` of shape ``(rows, n_in)``.

    Works on plain arrays or on :class:`Var` nodes; the result has the same kind.
    """
    cols = _shape(x)[-1] if len(_shape(x)) == 2 else None
    if cols != params.n_in:
        raise DimensionError(f"input has {cols} columns, network expects {params.n_in}")
    h = x if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = leaky_relu(h, params.activation_slope)
    return h
