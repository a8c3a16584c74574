"""Gradient extraction for MLP parameter sets and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from laser.core.autodiff import Var
from laser.core.mlp import MlpParams
from laser.errors import DimensionError, NumericError


def value_and_gradients(loss: Callable[..., Var], params: Sequence[MlpParams]) -> tuple[float, list[MlpParams]]:
    """Evaluate ``loss(*params)`` on differentiable copies and return its value and gradients.

    ``loss`` receives one :class:`MlpParams` per entry of ``params`` whose
    arrays are :class:`Var` leaves, and must return a scalar :class:`Var`.
    Parameters that do not influence the loss get zero gradients.
    """
    leaves = [p.map(Var) for p in params]
    out = loss(*leaves)
    if not isinstance(out, Var):
        out = Var(out)
    out.backward()
    grads = [
        p.map(lambda v: np.zeros_like(v.value) if v.grad is None else v.grad.reshape(v.value.shape))
        for p in leaves
    ]
    return float(out.value), grads


def gradients(loss: Callable[..., Var], params: Sequence[MlpParams]) -> list[MlpParams]:
    return value_and_gradients(loss, params)[1]


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    names: Sequence[str] | None = None,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified.

    Raises :class:`NumericError` naming the first non-finite gradient entry.
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("params, grads and Adam moments differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(state.first_moment[i]):
            raise DimensionError(f"parameter {i}: shape {np.shape(p)} vs gradient {np.shape(g)}")
        bad = ~np.isfinite(g)
        if bad.any():
            where = tuple(int(k) for k in np.argwhere(bad)[0])
            label = names[i] if names is not None else f"param[{i}]"
            raise NumericError(f"non-finite gradient at {label}{list(where)}", location=f"{label}{list(where)}")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, m_new, v_new = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon))
        m_new.append(m)
        v_new.append(v)
    return new_params, replace(state, first_moment=m_new, second_moment=v_new, step_count=t)
