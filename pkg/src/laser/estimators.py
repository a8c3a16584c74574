"""Propensity scores, the IPW ATE estimator, and the LASER / surrogate-index / back-door pipelines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from laser.core import AdamState, MlpParams, SeededRng, adam_step, constant, init_mlp, mlp_forward, square, value_and_gradients
from laser.data import Dataset
from laser.errors import ConfigError, DegenerateError, DimensionError, PreconditionError
from laser.model import TrainConfig, predict_y, train

PROPENSITY_CLIP = (0.01, 0.99)


@dataclass
class PropensityModel:
    """Logistic model ``e(x) = clip(sigmoid(x @ weights + bias))`` in raw covariate units."""

    weights: np.ndarray
    bias: float
    clip_lo: float = PROPENSITY_CLIP[0]
    clip_hi: float = PROPENSITY_CLIP[1]

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_lo < self.clip_hi < 1.0:
            raise ConfigError("need 0 < clip_lo < clip_hi < 1")

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != len(self.weights):
            raise DimensionError(f"x has {x.shape[1]} columns, model expects {len(self.weights)}")
        z = x @ self.weights + self.bias
        return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), self.clip_lo, self.clip_hi)


def fit_propensity(x, t, *, l2: float = 1e-4, lr: float = 0.1, iterations: int = 500,
                   clip_lo: float = PROPENSITY_CLIP[0], clip_hi: float = PROPENSITY_CLIP[1]) -> PropensityModel:
    """L2-penalized logistic regression by full-batch gradient descent on z-scored covariates.

    Starts from zero weights (all predictions 0.5). The fitted coefficients
    are mapped back to raw covariate units.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).ravel()
    if len(x) != len(t):
        raise DimensionError("x and t differ in length")
    if len(t) == 0 or t.min() == t.max():
        raise DegenerateError("propensity fit needs both treated and control units")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    z = (x - mean) / sd
    n = len(t)
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(iterations):
        p = 0.5 * (1.0 + np.tanh(0.5 * (z @ w + b)))
        r = p - t
        w = w - lr * (z.T @ r / n + l2 * w)
        b = b - lr * r.mean()
    weights = w / sd
    return PropensityModel(weights, float(b - weights @ mean), clip_lo, clip_hi)


def ipw_ate(yhat, t, e) -> float:
    """Mean over units of ``yhat t / e - yhat (1 - t) / (1 - e)``."""
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    e = np.asarray(e, dtype=np.float64).ravel()
    if not (len(yhat) == len(t) == len(e)):
        raise DimensionError("yhat, t and e must have equal length")
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise PreconditionError("propensities must lie strictly inside (0, 1)")
    return float(np.mean(yhat * t / e - yhat * (1.0 - t) / (1.0 - e)))


# --------------------------------------------------------------------------
# regressors


@dataclass
class RegressorConfig:
    hidden_sizes: tuple[int, ...] = (64, 64)
    epochs: int = 1000
    lr: float = 3e-3
    seed: int = 0


@dataclass
class Regressor:
    kind: str
    input_schema: tuple[str, ...]
    coef: np.ndarray | None = None
    net: MlpParams | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float = 0.0
    y_std: float = 1.0

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.kind == "linear":
            if features.shape[1] + 1 != len(self.coef):
                raise DimensionError("feature width differs from the fitted schema")
            return features @ self.coef[1:] + self.coef[0]
        z = (features - self.x_mean) / self.x_std
        return mlp_forward(self.net, z)[:, 0] * self.y_std + self.y_mean


def fit_regressor(features, target, kind: str, input_schema: tuple[str, ...] = (),
                  cfg: RegressorConfig | None = None) -> Regressor:
    """Least squares with intercept (``linear``) or an Adam-trained MSE network (``mlp``)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).ravel()
    if len(features) != len(target):
        raise DimensionError("features and target differ in length")
    if len(target) == 0:
        raise DegenerateError("cannot fit a regressor on zero rows")
    if kind == "linear":
        design = np.hstack([np.ones((len(features), 1)), features])
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        return Regressor("linear", tuple(input_schema), coef=coef)
    if kind != "mlp":
        raise ConfigError(f"unknown regressor kind {kind!r}")

    cfg = cfg or RegressorConfig()
    mean, sd = features.mean(axis=0), features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    y_mean, y_sd = float(target.mean()), float(target.std()) or 1.0
    z = (features - mean) / sd
    yz = ((target - y_mean) / y_sd).reshape(-1, 1)
    net = init_mlp((features.shape[1], *cfg.hidden_sizes, 1), SeededRng(cfg.seed))
    state = AdamState.zeros_like(net.arrays(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        _, (g,) = value_and_gradients(lambda p: square(mlp_forward(p, constant(z)) - yz).mean(), [net])
        arrays, state = adam_step(net.arrays(), g.arrays(), state)
        net = net.with_arrays(arrays)
    return Regressor("mlp", tuple(input_schema), net=net, x_mean=mean, x_std=sd, y_mean=y_mean, y_std=y_sd)


# --------------------------------------------------------------------------
# pipelines


@dataclass
class EstimateReport:
    method: str
    tau_hat: float
    tau_true: float | None = None
    mape: float | None = None
    seed: int | None = None
    config_digest: str | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _report(method: str, tau_hat: float, d_exp: Dataset, seed, digest, **extras) -> EstimateReport:
    from laser.evaluation import mape  # local: evaluation imports this module

    tau_true = None
    err = None
    if d_exp.y0 is not None:
        tau_true = float(np.mean(d_exp.y1 - d_exp.y0))
        err = mape(tau_true, tau_hat) if tau_true != 0 else None
    return EstimateReport(method, float(tau_hat), tau_true, err, seed, digest, extras)


def _check_compatible(d_obs: Dataset, d_exp: Dataset) -> None:
    if d_obs.d_x != d_exp.d_x or d_obs.d_m != d_exp.d_m:
        raise DimensionError(f"D_obs (d_x={d_obs.d_x}, d_m={d_obs.d_m}) and D_exp (d_x={d_exp.d_x}, d_m={d_exp.d_m}) differ")


def estimate_laser(d_obs: Dataset, d_exp: Dataset, train_cfg: TrainConfig, *,
                   clip: tuple[float, float] = PROPENSITY_CLIP, config_digest: str | None = None) -> EstimateReport:
    """Train the latent-surrogate model, predict y on D_exp, and weight by fitted propensities."""
    _check_compatible(d_obs, d_exp)
    d_obs.require_y("estimate_laser")
    model, trace = train(d_obs, d_exp, train_cfg)
    yhat = predict_y(model, d_exp)
    e = fit_propensity(d_exp.x, d_exp.t, clip_lo=clip[0], clip_hi=clip[1]).predict(d_exp.x)
    return _report("laser", ipw_ate(yhat, d_exp.t, e), d_exp, train_cfg.seed, config_digest,
                   final_loss=trace[-1].total, epochs=len(trace))


def surrogate_index(d_obs: Dataset, kind: str, cfg: RegressorConfig | None = None) -> Regressor:
    """Regress y on ``[m, x]`` over all observational rows (treatment ignored)."""
    y = d_obs.require_y("surrogate index")
    return fit_regressor(np.hstack([d_obs.m, d_obs.x]), y, kind, ("m", "x"), cfg)


def estimate_sind(d_obs: Dataset, d_exp: Dataset, kind: str = "linear", *, cfg: RegressorConfig | None = None,
                  clip: tuple[float, float] = PROPENSITY_CLIP, seed: int | None = None,
                  config_digest: str | None = None) -> EstimateReport:
    _check_compatible(d_obs, d_exp)
    reg = surrogate_index(d_obs, kind, cfg)
    yhat = reg.predict(np.hstack([d_exp.m, d_exp.x]))
    e = fit_propensity(d_exp.x, d_exp.t, clip_lo=clip[0], clip_hi=clip[1]).predict(d_exp.x)
    return _report(f"sind-{kind}", ipw_ate(yhat, d_exp.t, e), d_exp, seed, config_digest)


def backdoor_ate(yhat, x, t, kind: str = "linear", cfg: RegressorConfig | None = None) -> float:
    """Mean of ``g1(x) - g0(x)`` with ``g_k`` regressing ``yhat`` on ``x`` within arm ``k``."""
    t = np.asarray(t).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if t.sum() == 0 or t.sum() == len(t):
        raise DegenerateError("back-door adjustment needs both treatment arms in D_exp")
    g1 = fit_regressor(x[t == 1], yhat[t == 1], kind, ("x",), cfg)
    g0 = fit_regressor(x[t == 0], yhat[t == 0], kind, ("x",), cfg)
    return float(np.mean(g1.predict(x) - g0.predict(x)))


def estimate_bd(d_obs: Dataset, d_exp: Dataset, kind: str = "linear", *, cfg: RegressorConfig | None = None,
                seed: int | None = None, config_digest: str | None = None) -> EstimateReport:
    _check_compatible(d_obs, d_exp)
    reg = surrogate_index(d_obs, kind, cfg)
    yhat = reg.predict(np.hstack([d_exp.m, d_exp.x]))
    return _report(f"bd-{kind}", backdoor_ate(yhat, d_exp.x, d_exp.t, kind, cfg), d_exp, seed, config_digest)


METHODS = ("laser", "sind-linear", "sind-mlp", "bd-linear", "bd-mlp")


def run_method(method: str, d_obs: Dataset, d_exp: Dataset, train_cfg: TrainConfig, *,
               clip: tuple[float, float] = PROPENSITY_CLIP, config_digest: str | None = None) -> EstimateReport:
    """Dispatch by method identifier (see :data:`METHODS`)."""
    if method == "laser":
        return estimate_laser(d_obs, d_exp, train_cfg, clip=clip, config_digest=config_digest)
    family, _, kind = method.partition("-")
    reg_cfg = RegressorConfig(hidden_sizes=train_cfg.hidden_sizes, seed=train_cfg.seed)
    if family == "sind":
        return estimate_sind(d_obs, d_exp, kind, cfg=reg_cfg, clip=clip, seed=train_cfg.seed, config_digest=config_digest)
    if family == "bd":
        return estimate_bd(d_obs, d_exp, kind, cfg=reg_cfg, seed=train_cfg.seed, config_digest=config_digest)
    raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


__all__ = [
    "EstimateReport", "METHODS", "PropensityModel", "Regressor", "RegressorConfig", "backdoor_ate",
    "estimate_bd", "estimate_laser", "estimate_sind", "fit_propensity", "fit_regressor", "ipw_ate",
    "run_method", "surrogate_index",
]
