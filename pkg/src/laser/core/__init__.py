"""Numeric substrate: differentiation, networks, Adam and seeded sampling."""

from laser.core.autodiff import Var, clip, concat, constant, exp, leaky_relu, log, sigmoid, square
from laser.core.mlp import DEFAULT_SLOPE, MlpParams, init_mlp, mlp_forward
from laser.core.optim import AdamState, adam_step, gradients, value_and_gradients
from laser.core.rng import SeededRng, sample_standard_normal

__all__ = [
    "AdamState",
    "DEFAULT_SLOPE",
    "MlpParams",
    "SeededRng",
    "Var",
    "adam_step",
    "clip",
    "concat",
    "constant",
    "exp",
    "gradients",
    "init_mlp",
    "leaky_relu",
    "log",
    "mlp_forward",
    "sample_standard_normal",
    "sigmoid",
    "square",
    "value_and_gradients",
]
