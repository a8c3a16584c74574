"""Identifiable VAE over short-term outcomes with a long-term outcome head.

Inference network ``q(s | m, x, t)`` is a factorized Gaussian whose mean and
log-variance come from one MLP over ``[m, x, t]``. The generative side has a
fixed-variance Gaussian head for ``m`` given ``s`` and one for ``y`` given
``[s, x]``; the prior on ``s`` is standard normal. Training minimizes

    mean_{obs+exp} [ KL(q || N(0, I)) + E_q -log p(m | s) ]
  + mean_{obs}     [ E_q -log p(y | s, x) ]

with reparameterized Monte-Carlo draws ``s = mu + sigma * eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from laser.core import (
    AdamState,
    MlpParams,
    SeededRng,
    Var,
    adam_step,
    clip,
    concat,
    constant,
    exp,
    init_mlp,
    mlp_forward,
    sample_standard_normal,
    square,
    value_and_gradients,
)
from laser.data import Dataset, concat_datasets
from laser.errors import ConfigError, DataFormatError, DimensionError, NumericError

LOGVAR_BOUNDS = (-10.0, 10.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Standardizer:
    """Column means/standard deviations used to z-score inputs and y."""

    x_mean: np.ndarray
    x_std: np.ndarray
    m_mean: np.ndarray
    m_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def identity(cls, d_x: int, d_m: int) -> "Standardizer":
        return cls(np.zeros(d_x), np.ones(d_x), np.zeros(d_m), np.ones(d_m))

    @classmethod
    def fit(cls, union: Dataset, y: np.ndarray) -> "Standardizer":
        def safe(sd):
            return np.where(sd > 0, sd, 1.0)

        y_sd = float(np.std(y))
        return cls(
            union.x.mean(axis=0), safe(union.x.std(axis=0)),
            union.m.mean(axis=0), safe(union.m.std(axis=0)),
            float(np.mean(y)), y_sd if y_sd > 0 else 1.0,
        )

    def x(self, x):
        return (x - self.x_mean) / self.x_std

    def m(self, m):
        return (m - self.m_mean) / self.m_std

    def y(self, y):
        return (y - self.y_mean) / self.y_std

    def y_inverse(self, z):
        return z * self.y_std + self.y_mean


@dataclass
class IvaeModel:
    n: int
    encoder: MlpParams
    decoder_m: MlpParams
    decoder_y: MlpParams
    v_m2: float = 1.0
    v_y2: float = 1.0
    scaler: Standardizer | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("latent dimension n must be >= 1")
        if self.v_m2 <= 0 or self.v_y2 <= 0:
            raise ConfigError("decoder variances must be positive")
        if self.encoder.n_out != 2 * self.n:
            raise DimensionError(f"encoder emits {self.encoder.n_out} values, expected {2 * self.n}")
        if self.encoder.n_in != self.d_m + self.d_x + 1:
            raise DimensionError("encoder input width must equal d_m + d_x + 1")
        if self.decoder_m.n_in != self.n or self.decoder_y.n_in != self.n + self.d_x or self.decoder_y.n_out != 1:
            raise DimensionError("decoder shapes do not match the latent/covariate dimensions")
        if self.scaler is None:
            self.scaler = Standardizer.identity(self.d_x, self.d_m)

    @property
    def d_m(self) -> int:
        return self.decoder_m.n_out

    @property
    def d_x(self) -> int:
        return self.decoder_y.n_in - self.n

    def nets(self) -> list[MlpParams]:
        return [self.encoder, self.decoder_m, self.decoder_y]


@dataclass
class TrainConfig:
    """Optimizer and architecture settings. ``batch_size = 0`` means full batch.

    The defaults were tuned on the semi-synthetic worlds (747 units per
    sample): a single narrow hidden layer keeps the outcome decoder from
    memorising D_obs, and decoder variances well below 1 keep the posterior
    from collapsing onto the prior on standardized data.
    """

    latent_dim: int | None = None
    epochs: int = 120
    batch_size: int = 128
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    mc_samples: int = 1
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (32,)
    standardize: bool = True
    v_m2: float = 0.3
    v_y2: float = 1e-3

    def __post_init__(self) -> None:
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.v_m2 <= 0 or self.v_y2 <= 0:
            raise ConfigError("v_m2 and v_y2 must be positive")


@dataclass
class LossBreakdown:
    neg_elbo: float
    kl: float
    recon_m: float
    recon_y: float
    total: float


def init_model(d_m: int, d_x: int, n: int, hidden=(32,), rng: SeededRng | None = None,
               v_m2: float = 1.0, v_y2: float = 1.0) -> IvaeModel:
    rng = rng or SeededRng(0)
    hidden = tuple(hidden)
    return IvaeModel(
        n=n,
        encoder=init_mlp((d_m + d_x + 1, *hidden, 2 * n), rng),
        decoder_m=init_mlp((n, *hidden, d_m), rng),
        decoder_y=init_mlp((n + d_x, *hidden, 1), rng),
        v_m2=v_m2,
        v_y2=v_y2,
    )


# --------------------------------------------------------------------------
# closed-form pieces


def kl_std_normal(mu, logvar) -> float:
    """KL( N(mu, exp(logvar)) || N(0, I) ), summed over all components."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0))


def gaussian_nll(value, mean, variance) -> float:
    """Negative log density of ``value`` under N(mean, variance), summed over components."""
    if np.any(np.asarray(variance) <= 0):
        raise ConfigError("variance must be positive")
    value, mean = np.asarray(value, dtype=np.float64), np.asarray(mean, dtype=np.float64)
    diff = value - mean
    total = 0.5 * np.log(2.0 * np.pi * variance) + diff * diff / (2.0 * variance)
    return float(np.sum(np.broadcast_to(total, np.broadcast(value, mean).shape)))


# --------------------------------------------------------------------------
# encoding / prediction


def _encoder_input(model: IvaeModel, m, x, t) -> tuple[np.ndarray, np.ndarray]:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if m.shape[1] != model.d_m or x.shape[1] != model.d_x or not (len(m) == len(x) == len(t)):
        raise DimensionError(
            f"expected m with {model.d_m} and x with {model.d_x} columns and equal rows; "
            f"got m{m.shape}, x{x.shape}, t{t.shape}"
        )
    xs = model.scaler.x(x)
    return np.hstack([model.scaler.m(m), xs, t]), xs


def _split_posterior(h, n: int):
    mu = h[:, 0:n]
    logvar = h[:, n:2 * n]
    if isinstance(h, Var):
        return mu, clip(logvar, *LOGVAR_BOUNDS)
    return mu, np.clip(logvar, *LOGVAR_BOUNDS)


def encode(model: IvaeModel, m, x, t) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and clamped log-variance. Accepts one row or a batch.

    Inputs are in raw units; the model's standardizer is applied here.
    """
    single = np.ndim(m) == 1
    inp, _ = _encoder_input(model, m, x, t)
    mu, logvar = _split_posterior(mlp_forward(model.encoder, inp), model.n)
    return (mu[0], logvar[0]) if single else (mu, logvar)


def extract_latents(model: IvaeModel, d: Dataset) -> np.ndarray:
    mu, _ = encode(model, d.m, d.x, d.t)
    return mu


def predict_y(model: IvaeModel, d: Dataset) -> np.ndarray:
    """Long-term outcome from the posterior-mean latent; no sampling."""
    inp, xs = _encoder_input(model, d.m, d.x, d.t)
    mu, _ = _split_posterior(mlp_forward(model.encoder, inp), model.n)
    out = mlp_forward(model.decoder_y, np.hstack([mu, xs]))[:, 0]
    return model.scaler.y_inverse(out)


# --------------------------------------------------------------------------
# loss


@dataclass
class _Batch:
    inp: np.ndarray  # standardized [m, x, t]
    m: np.ndarray  # standardized m
    x: np.ndarray  # standardized x
    y: np.ndarray | None = None  # standardized y, column vector


def _prepare(model: IvaeModel, d: Dataset, with_y: bool) -> _Batch:
    inp, xs = _encoder_input(model, d.m, d.x, d.t)
    y = None
    if with_y:
        y = model.scaler.y(d.require_y("the long-term outcome loss")).reshape(-1, 1)
    return _Batch(inp, model.scaler.m(d.m), xs, y)


def _loss_nodes(enc: MlpParams, dec_m: MlpParams, dec_y: MlpParams, n: int, v_m2: float, v_y2: float,
                all_b: _Batch, obs_b: _Batch, eps_all: np.ndarray, eps_obs: np.ndarray,
                obs_rows: slice | None = None) -> dict[str, Var]:
    # obs_rows: obs_b is exactly these rows of all_b, so the encoder pass is shared
    mc = eps_all.shape[0]
    mu, logvar = _split_posterior(mlp_forward(enc, constant(all_b.inp)), n)
    kl = (0.5 * (square(mu) + exp(logvar) - logvar - 1.0)).sum(axis=1).mean()
    sd = exp(0.5 * logvar)
    d_m = all_b.m.shape[1]
    recon_m = 0.0
    for k in range(mc):
        m_hat = mlp_forward(dec_m, mu + sd * eps_all[k])
        recon_m = recon_m + square(m_hat - all_b.m).sum(axis=1).mean()
    recon_m = recon_m * (0.5 / (v_m2 * mc)) + 0.5 * d_m * math.log(2.0 * math.pi * v_m2)

    if obs_rows is None:
        mu_o, logvar_o = _split_posterior(mlp_forward(enc, constant(obs_b.inp)), n)
        sd_o = exp(0.5 * logvar_o)
    else:
        mu_o, sd_o = mu[obs_rows, :], sd[obs_rows, :]
    recon_y = 0.0
    for k in range(mc):
        y_hat = mlp_forward(dec_y, concat([mu_o + sd_o * eps_obs[k], obs_b.x]))
        recon_y = recon_y + square(y_hat - obs_b.y).mean()
    recon_y = recon_y * (0.5 / (v_y2 * mc)) + 0.5 * math.log(2.0 * math.pi * v_y2)

    neg_elbo = kl + recon_m
    return {"kl": kl, "recon_m": recon_m, "recon_y": recon_y, "neg_elbo": neg_elbo, "total": neg_elbo + recon_y}


def _breakdown(nodes: dict[str, Var]) -> LossBreakdown:
    return LossBreakdown(**{k: float(v.value) for k, v in nodes.items()})


def loss(model: IvaeModel, batch_all: Dataset, batch_obs: Dataset, rng: SeededRng, mc_samples: int = 1,
         eps: tuple[np.ndarray, np.ndarray] | None = None) -> LossBreakdown:
    """Monte-Carlo estimate of the training objective.

    ``batch_all`` contributes the ELBO terms (any y it carries is ignored);
    ``batch_obs`` contributes the outcome term and must carry y. Pass ``eps``
    (arrays of shape ``(mc_samples, rows, n)``) to fix the reparameterization
    noise instead of drawing it from ``rng``.
    """
    all_b = _prepare(model, batch_all, with_y=False)
    obs_b = _prepare(model, batch_obs, with_y=True)
    if eps is None:
        eps = (sample_standard_normal(rng, (mc_samples, len(batch_all), model.n)),
               sample_standard_normal(rng, (mc_samples, len(batch_obs), model.n)))
    nodes = _loss_nodes(*[p.map(Var) for p in model.nets()], model.n, model.v_m2, model.v_y2, all_b, obs_b, *eps)
    return _breakdown(nodes)


def loss_and_gradients(model: IvaeModel, batch_all: Dataset, batch_obs: Dataset,
                       eps: tuple[np.ndarray, np.ndarray]) -> tuple[LossBreakdown, list[MlpParams]]:
    """Objective with fixed noise ``eps`` and its gradients w.r.t. (encoder, decoder_m, decoder_y)."""
    all_b = _prepare(model, batch_all, with_y=False)
    obs_b = _prepare(model, batch_obs, with_y=True)
    return _value_and_grads(model, all_b, obs_b, eps)


def _value_and_grads(model: IvaeModel, all_b: _Batch, obs_b: _Batch, eps, obs_rows: slice | None = None):
    stash: dict[str, Var] = {}

    def objective(enc, dec_m, dec_y):
        stash.update(_loss_nodes(enc, dec_m, dec_y, model.n, model.v_m2, model.v_y2, all_b, obs_b, *eps, obs_rows))
        return stash["total"]

    _, grads = value_and_gradients(objective, model.nets())
    return _breakdown(stash), grads


# --------------------------------------------------------------------------
# training


def _minibatches(n_rows: int, n_batches: int, rng: SeededRng) -> list[np.ndarray]:
    return np.array_split(rng.permutation(n_rows), n_batches)


def train(d_obs: Dataset, d_exp: Dataset, cfg: TrainConfig) -> tuple[IvaeModel, list[LossBreakdown]]:
    """Fit the model by Adam; returns it with the per-epoch mean loss breakdown."""
    if cfg.latent_dim is None:
        raise ConfigError("latent_dim must be set (no default exists for the latent dimension)")
    d_obs.require_y("training")
    union = concat_datasets(d_obs, d_exp)
    root = SeededRng(cfg.seed)
    model = init_model(union.d_m, union.d_x, cfg.latent_dim, cfg.hidden_sizes, root.spawn(0), cfg.v_m2, cfg.v_y2)
    if cfg.standardize:
        model.scaler = Standardizer.fit(union, d_obs.y)
    noise = root.spawn(1)
    shuffle = root.spawn(2)

    all_full = _prepare(model, union, with_y=False)
    obs_full = _prepare(model, d_obs, with_y=True)
    n_batches = 1 if cfg.batch_size == 0 else max(1, math.ceil(len(union) / cfg.batch_size))

    arrays = [a for net in model.nets() for a in net.arrays()]
    names = [nm for label, net in zip(("encoder.", "decoder_m.", "decoder_y."), model.nets()) for nm in net.names(label)]
    state = AdamState.zeros_like(arrays, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    sizes = [len(net.arrays()) for net in model.nets()]

    trace: list[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        if n_batches == 1:
            batches = [(all_full, obs_full)]
        else:
            idx_all = _minibatches(len(union), n_batches, shuffle)
            idx_obs = _minibatches(len(d_obs), n_batches, shuffle)
            batches = [(_take(all_full, ia), _take(obs_full, io)) for ia, io in zip(idx_all, idx_obs)]
        parts = []
        for all_b, obs_b in batches:
            eps = (sample_standard_normal(noise, (cfg.mc_samples, len(all_b.inp), model.n)),
                   sample_standard_normal(noise, (cfg.mc_samples, len(obs_b.inp), model.n)))
            shared = slice(0, len(d_obs)) if n_batches == 1 else None
            breakdown, grads = _value_and_grads(model, all_b, obs_b, eps, shared)
            if not math.isfinite(breakdown.total):
                raise NumericError(f"non-finite loss at epoch {epoch}: {breakdown}", epoch=epoch, breakdown=breakdown)
            flat_grads = [g for net in grads for g in net.arrays()]
            try:
                arrays, state = adam_step(arrays, flat_grads, state, names)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}", location=exc.location, epoch=epoch, breakdown=breakdown) from None
            model = _with_arrays(model, arrays, sizes)
            parts.append(breakdown)
        trace.append(LossBreakdown(*np.mean([list(vars(p).values()) for p in parts], axis=0)))
    return model, trace


def _take(b: _Batch, idx: np.ndarray) -> _Batch:
    return _Batch(b.inp[idx], b.m[idx], b.x[idx], None if b.y is None else b.y[idx])


def _with_arrays(model: IvaeModel, arrays: list[np.ndarray], sizes: list[int]) -> IvaeModel:
    nets, start = [], 0
    for net, size in zip(model.nets(), sizes):
        nets.append(net.with_arrays(arrays[start:start + size]))
        start += size
    return IvaeModel(model.n, *nets, v_m2=model.v_m2, v_y2=model.v_y2, scaler=model.scaler)


# --------------------------------------------------------------------------
# persistence
#
# Text format, one item per line:
#   laser-ivae 1
#   n <int> / v_m2 <float> / v_y2 <float> / slope <float>
#   <net>_sizes <int> <int> ...        for encoder, decoder_m, decoder_y
#   array <name> <rows> <cols>         followed by <rows> lines of repr floats
# Scaler arrays use names scaler.x_mean etc. (vectors are stored as 1 x k);
# scaler.y holds (y_mean, y_std).

_MAGIC = "laser-ivae 1"


def save_model(model: IvaeModel, path) -> None:
    lines = [_MAGIC, f"n {model.n}", f"v_m2 {model.v_m2!r}", f"v_y2 {model.v_y2!r}",
             f"slope {model.encoder.activation_slope!r}"]
    nets = {"encoder": model.encoder, "decoder_m": model.decoder_m, "decoder_y": model.decoder_y}
    for name, net in nets.items():
        lines.append(f"{name}_sizes " + " ".join(str(s) for s in net.layer_sizes))
    arrays: list[tuple[str, np.ndarray]] = []
    for name, net in nets.items():
        arrays += [(f"{name}.{k}", a) for k, a in zip(net.names(), net.arrays())]
    sc = model.scaler
    arrays += [("scaler.x_mean", sc.x_mean), ("scaler.x_std", sc.x_std), ("scaler.m_mean", sc.m_mean),
               ("scaler.m_std", sc.m_std), ("scaler.y", np.array([sc.y_mean, sc.y_std]))]
    for name, a in arrays:
        a2 = np.atleast_2d(a)
        lines.append(f"array {name} {a2.shape[0]} {a2.shape[1]}")
        lines += [" ".join(repr(float(v)) for v in row) for row in a2]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> IvaeModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise DataFormatError(f"{path}: not a model file", row=0)
    meta: dict[str, list[str]] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    try:
        while i < len(lines):
            parts = lines[i].split()
            if parts[0] == "array":
                rows, cols = int(parts[2]), int(parts[3])
                body = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
                arrays[parts[1]] = np.array(body, dtype=np.float64).reshape(rows, cols)
                i += rows + 1
            else:
                meta[parts[0]] = parts[1:]
                i += 1
        slope = float(meta["slope"][0])

        def net(name):
            sizes = tuple(int(s) for s in meta[f"{name}_sizes"])
            k = len(sizes) - 1
            return MlpParams(sizes, [arrays[f"{name}.W{j}"] for j in range(k)],
                             [arrays[f"{name}.b{j}"][0] for j in range(k)], slope)

        y_mean, y_std = arrays["scaler.y"][0]
        scaler = Standardizer(arrays["scaler.x_mean"][0], arrays["scaler.x_std"][0], arrays["scaler.m_mean"][0],
                              arrays["scaler.m_std"][0], float(y_mean), float(y_std))
        return IvaeModel(int(meta["n"][0]), net("encoder"), net("decoder_m"), net("decoder_y"),
                         float(meta["v_m2"][0]), float(meta["v_y2"][0]), scaler)
    except (KeyError, IndexError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed model file near line {i + 1} ({exc})", row=i + 1) from None
