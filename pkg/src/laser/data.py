"""Datasets, CSV I/O and the semi-synthetic long-term-outcome generator.

The generator draws linear surrogate/outcome mechanisms on top of covariates:

    s_o(1) = x (W0 + 1) + e0        s_o(0) = x (W1 - 1) + e0
    s_l(1) = x (W2 + 1) + e1        s_l(0) = x (W3 - 1) + e1
    p      = s_l W4 + proxy_noise_scale * e2
    y      = s_l W5 + s_o W6 + x W7 + e3

Noise terms are shared between the two arms of a unit, so ``y1 - y0`` is a
deterministic function of ``x``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from laser import _kv
from laser.core.rng import SeededRng, sample_standard_normal
from laser.errors import CapabilityError, ConfigError, DataFormatError, DimensionError, IngestionError

GRAPH_VARIANTS = ("general", "all-observed", "proxies-only")
OBS_TREATMENTS = ("logistic", "bernoulli")


@dataclass
class Dataset:
    """Unit-level table. ``m`` holds the short-term outcomes ``[s_o, p]``."""

    x: np.ndarray
    t: np.ndarray
    m: np.ndarray
    y: np.ndarray | None = None
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    s_true: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.m = np.asarray(self.m, dtype=np.float64).reshape(len(self.x), -1)
        t = np.asarray(self.t)
        if not np.isin(t, (0, 1)).all():
            raise ValueError("treatment must be binary (0/1)")
        self.t = t.astype(np.int64).ravel()
        n = len(self.x)
        for name in ("y", "y0", "y1"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float64).ravel())
        if self.s_true is not None:
            self.s_true = np.asarray(self.s_true, dtype=np.float64).reshape(n, -1)
        for name in ("t", "m", "y", "y0", "y1", "s_true"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise DimensionError(f"{name} has {len(v)} rows, x has {n}")
        if (self.y0 is None) != (self.y1 is None):
            raise ValueError("y0 and y1 must be given together")
        if self.y0 is not None and self.y is not None:
            factual = np.where(self.t == 1, self.y1, self.y0)
            if not np.array_equal(factual, self.y):
                raise ValueError("y must equal t*y1 + (1-t)*y0")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_m(self) -> int:
        return self.m.shape[1]

    def require_y(self, who: str = "operation") -> np.ndarray:
        if self.y is None:
            raise CapabilityError(f"{who} needs the long-term outcome y, which this dataset lacks")
        return self.y

    def subset(self, idx) -> "Dataset":
        pick = lambda v: None if v is None else v[idx]  # noqa: E731
        return Dataset(self.x[idx], self.t[idx], self.m[idx], pick(self.y), pick(self.y0), pick(self.y1), pick(self.s_true))

    def without_outcomes(self) -> "Dataset":
        return Dataset(self.x, self.t, self.m)


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Stack rows of ``a`` and ``b``, keeping only x, t and m."""
    if a.d_x != b.d_x or a.d_m != b.d_m:
        raise DimensionError(f"incompatible datasets: d_x {a.d_x}/{b.d_x}, d_m {a.d_m}/{b.d_m}")
    return Dataset(np.vstack([a.x, b.x]), np.concatenate([a.t, b.t]), np.vstack([a.m, b.m]))


def true_ate(d: Dataset) -> float:
    if d.y0 is None or d.y1 is None:
        raise CapabilityError("true ATE needs potential outcomes y0 and y1")
    return float(np.mean(d.y1 - d.y0))


# --------------------------------------------------------------------------
# generator


@dataclass
class GenConfig:
    """Parameters of the semi-synthetic world.

    ``obs_treatment_param`` is the upper propensity bound for ``logistic``
    assignment (logits scaled so propensities lie in ``[1 - q, q]``) and the
    treatment probability for ``bernoulli``. ``covariate_source`` is
    ``simulated`` or a path to a CSV of covariates.
    """

    n_obs: int = 747
    n_exp: int = 747
    d_x: int = 25
    n_latent: int = 2
    n_obs_surr: int = 3
    n_proxies: int = 2
    proxy_noise_scale: float = 5.0
    covariate_source: str = "simulated"
    obs_treatment: str = "logistic"
    obs_treatment_param: float = 0.9
    exp_treatment_p: float = 0.5
    seed: int = 0
    graph_variant: str = "general"
    null_effect: bool = False

    def __post_init__(self) -> None:
        for name in ("n_obs", "n_exp", "d_x", "n_latent", "n_obs_surr", "n_proxies"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.graph_variant not in GRAPH_VARIANTS:
            raise ConfigError(f"graph_variant must be one of {GRAPH_VARIANTS}, got {self.graph_variant!r}")
        if self.graph_variant == "all-observed" and (self.n_latent or self.n_proxies):
            raise ConfigError("graph_variant=all-observed requires n_latent = n_proxies = 0")
        if self.graph_variant == "proxies-only" and self.n_obs_surr:
            raise ConfigError("graph_variant=proxies-only requires n_obs_surr = 0")
        if self.obs_treatment not in OBS_TREATMENTS:
            raise ConfigError(f"obs_treatment must be one of {OBS_TREATMENTS}")
        if not 0.0 < self.obs_treatment_param < 1.0:
            raise ConfigError("obs_treatment_param must lie in (0, 1)")
        if self.obs_treatment == "logistic" and self.obs_treatment_param <= 0.5:
            raise ConfigError("logistic obs_treatment_param is the upper propensity bound and must exceed 0.5")
        if not 0.0 < self.exp_treatment_p < 1.0:
            raise ConfigError("exp_treatment_p must lie in (0, 1)")
        if self.proxy_noise_scale < 0:
            raise ConfigError("proxy_noise_scale must be >= 0")

    @property
    def d_m(self) -> int:
        return self.n_obs_surr + self.n_proxies

    @property
    def n_surrogates(self) -> int:
        return self.n_obs_surr + self.n_latent

    def digest(self) -> str:
        return _kv.digest("\n".join(_kv.to_lines(self)))


def save_gen_config(cfg: GenConfig, path) -> None:
    _kv.save_flat(cfg, path)


def load_gen_config(path) -> GenConfig:
    return _kv.load_flat(GenConfig, path)


@dataclass
class DgpWeights:
    W0: np.ndarray  # d_x x b
    W1: np.ndarray  # d_x x b
    W2: np.ndarray  # d_x x a
    W3: np.ndarray  # d_x x a
    W4: np.ndarray  # a x c
    W5: np.ndarray  # a
    W6: np.ndarray  # b
    W7: np.ndarray  # d_x
    w_t: np.ndarray = field(default=None)  # observational treatment logits direction

    def effect_direction(self) -> np.ndarray:
        """Vector ``v`` with ``y1 - y0 = x @ v`` for every unit."""
        a = self.W2.shape[1]
        b = self.W0.shape[1]
        return (self.W2 - self.W3 + 2.0) @ self.W5.reshape(a) + (self.W0 - self.W1 + 2.0) @ self.W6.reshape(b)


def draw_weights(cfg: GenConfig, rng: SeededRng) -> DgpWeights:
    d, a, b, c = cfg.d_x, cfg.n_latent, cfg.n_obs_surr, cfg.n_proxies
    normal = lambda *shape: sample_standard_normal(rng, shape)  # noqa: E731
    w = DgpWeights(
        W0=normal(d, b), W1=normal(d, b), W2=normal(d, a), W3=normal(d, a),
        W4=normal(a, c), W5=normal(a), W6=normal(b), W7=normal(d), w_t=normal(d),
    )
    if cfg.null_effect:
        w = null_effect_weights(w)
    return w


def null_effect_weights(w: DgpWeights) -> DgpWeights:
    """Weights under which both treatment arms produce identical surrogates."""
    return replace(w, W0=w.W1 - 2.0, W2=w.W3 - 2.0)


def simulate_covariates(rng: SeededRng, n: int, d_x: int) -> np.ndarray:
    """Mixed-type covariates: the last ``round(6 d_x / 25)`` columns are Bernoulli(0.5), the rest N(0, 1)."""
    n_bin = int(round(6 * d_x / 25))
    cont = sample_standard_normal(rng, (n, d_x - n_bin))
    binary = (rng.uniform((n, n_bin)) < 0.5).astype(np.float64)
    return np.hstack([cont, binary])


def read_covariates(path, d_x: int) -> np.ndarray:
    """Covariates from a CSV file.

    A header row selects the columns whose names start with ``x``; without a
    header the last ``d_x`` columns are used (the common IHDP layout
    ``t, y_factual, y_cfactual, mu0, mu1, x1..x25``).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"covariate file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise IngestionError(f"covariate file is empty: {path}")
    header = rows[0]
    try:
        [float(v) for v in header]
        has_header = False
    except ValueError:
        has_header = True
    if has_header:
        cols = [i for i, name in enumerate(header) if name.strip().lower().startswith("x")]
        body = rows[1:]
    else:
        cols = list(range(len(header) - d_x, len(header)))
        body = rows
    if len(cols) < d_x or min(cols, default=0) < 0:
        raise IngestionError(f"{path}: need {d_x} covariate columns, found {max(len(cols), 0)}")
    cols = cols[:d_x]
    if not body:
        raise IngestionError(f"{path}: no data rows")
    try:
        return np.array([[float(r[i]) for i in cols] for r in body], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise IngestionError(f"{path}: unreadable covariate row ({exc})") from None


def _potential_outcomes(x: np.ndarray, w: DgpWeights, cfg: GenConfig, rng: SeededRng):
    n = len(x)
    a, b, c = cfg.n_latent, cfg.n_obs_surr, cfg.n_proxies
    e0 = sample_standard_normal(rng, (n, b))
    e1 = sample_standard_normal(rng, (n, a))
    e2 = sample_standard_normal(rng, (n, c))
    e3 = sample_standard_normal(rng, n)
    so = (x @ (w.W0 + 1.0) + e0, x @ (w.W1 - 1.0) + e0)
    sl = (x @ (w.W2 + 1.0) + e1, x @ (w.W3 - 1.0) + e1)
    # proxies of each arm share e2, like the surrogates share e0/e1
    p = tuple(s @ w.W4 + cfg.proxy_noise_scale * e2 for s in sl)
    y = tuple(sl[k] @ w.W5 + so[k] @ w.W6 + x @ w.W7 + e3 for k in (0, 1))
    return so, sl, p, y


def _units(x: np.ndarray, t: np.ndarray, w: DgpWeights, cfg: GenConfig, rng: SeededRng) -> Dataset:
    (so1, so0), (sl1, sl0), (p1, p0), (y1, y0) = _potential_outcomes(x, w, cfg, rng)
    pick = lambda one, zero: np.where(t[:, None] == 1, one, zero)  # noqa: E731
    so, sl, p = pick(so1, so0), pick(sl1, sl0), pick(p1, p0)
    y = np.where(t == 1, y1, y0)
    return Dataset(x=x, t=t, m=np.hstack([so, p]), y=y, y0=y0, y1=y1, s_true=np.hstack([so, sl]))


def _obs_treatment(x: np.ndarray, w: DgpWeights, cfg: GenConfig, rng: SeededRng) -> np.ndarray:
    if cfg.obs_treatment == "bernoulli":
        return rng.bernoulli(cfg.obs_treatment_param, len(x))
    logits = x @ w.w_t
    logits = logits - logits.mean()
    span = np.max(np.abs(logits)) if len(x) else 0.0
    q = cfg.obs_treatment_param
    if span > 0:
        logits = logits * (math.log(q / (1.0 - q)) / span)
    propensity = 1.0 / (1.0 + np.exp(-logits))
    return (rng.uniform(len(x)) < propensity).astype(np.int64)


def generate_world(cfg: GenConfig, weights: DgpWeights | None = None) -> tuple[Dataset, Dataset, float]:
    """Draw ``(D_obs, D_exp, tau_true)``; a pure function of ``cfg`` (and ``weights`` if given).

    ``tau_true`` is the sample ATE over the experimental units.
    """
    if cfg.n_latent + cfg.n_obs_surr + cfg.n_proxies == 0 or cfg.d_x == 0:
        raise ConfigError("degenerate configuration: no surrogates/proxies or no covariates")
    root = SeededRng(cfg.seed)
    w = weights if weights is not None else draw_weights(cfg, root.spawn(0))
    if cfg.covariate_source == "simulated":
        x_obs = simulate_covariates(root.spawn(1), cfg.n_obs, cfg.d_x)
        x_exp = simulate_covariates(root.spawn(2), cfg.n_exp, cfg.d_x)
    else:
        x_obs = x_exp = read_covariates(cfg.covariate_source, cfg.d_x)

    rng_obs, rng_exp = root.spawn(3), root.spawn(4)
    t_obs = _obs_treatment(x_obs, w, cfg, rng_obs)
    t_exp = rng_exp.bernoulli(cfg.exp_treatment_p, len(x_exp))
    d_obs = _units(x_obs, t_obs, w, cfg, rng_obs)
    d_exp = _units(x_exp, t_exp, w, cfg, rng_exp)
    return d_obs, d_exp, true_ate(d_exp)


# --------------------------------------------------------------------------
# CSV I/O


def _columns(d: Dataset) -> list[tuple[str, np.ndarray]]:
    cols = [(f"x{j}", d.x[:, j]) for j in range(d.d_x)]
    cols.append(("t", d.t))
    cols += [(f"m{j}", d.m[:, j]) for j in range(d.d_m)]
    for name in ("y", "y0", "y1"):
        v = getattr(d, name)
        if v is not None:
            cols.append((name, v))
    if d.s_true is not None:
        cols += [(f"s{j}", d.s_true[:, j]) for j in range(d.s_true.shape[1])]
    return cols


def save_dataset(d: Dataset, path) -> None:
    """Headered CSV; floats use the shortest round-trip decimal (``repr``)."""
    cols = _columns(d)
    tmp = Path(str(path) + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([name for name, _ in cols])
        for i in range(len(d)):
            writer.writerow([str(int(v[i])) if name == "t" else repr(float(v[i])) for name, v in cols])
    tmp.replace(path)


def _check_header(header: list[str], path) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {"x": [], "t": [], "m": [], "y": [], "y0": [], "y1": [], "s": []}
    order = ["x", "t", "m", "y", "y0", "y1", "s"]
    stage = 0
    for i, name in enumerate(header):
        key = name if name in ("t", "y", "y0", "y1") else name[:1]
        if key not in groups or (key in ("x", "m", "s") and name[1:] != str(len(groups[key]))):
            raise DataFormatError(f"{path}: malformed header column {i + 1} {name!r}", row=0, column=name)
        pos = order.index(key)
        if pos < stage or (key in ("t", "y", "y0", "y1") and groups[key]):
            raise DataFormatError(f"{path}: header column {name!r} out of order", row=0, column=name)
        stage = pos
        groups[key].append(i)
    if not groups["x"] or not groups["t"] or not groups["m"]:
        raise DataFormatError(f"{path}: header needs x*, t and m* columns", row=0)
    if bool(groups["y0"]) != bool(groups["y1"]):
        raise DataFormatError(f"{path}: y0 and y1 must appear together", row=0)
    return groups


def load_dataset(path) -> Dataset:
    """Parse a CSV written by :func:`save_dataset`.

    Rows are counted from 1 at the first data line (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file", row=0) from None
        groups = _check_header(header, path)
        values = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}", row=row_no)
            parsed = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"{path}: row {row_no}, column {name}: not a number: {cell!r}", row=row_no, column=name) from None
                if name == "t" and v not in (0.0, 1.0):
                    raise DataFormatError(f"{path}: row {row_no}, column t: treatment must be 0 or 1, got {cell!r}", row=row_no, column="t")
                parsed.append(v)
            values.append(parsed)
    arr = np.array(values, dtype=np.float64).reshape(len(values), len(header))
    col = lambda key: arr[:, groups[key]]  # noqa: E731
    opt = lambda key: col(key)[:, 0] if groups[key] else None  # noqa: E731
    try:
        return Dataset(
            x=col("x"), t=col("t")[:, 0], m=col("m"), y=opt("y"), y0=opt("y0"), y1=opt("y1"),
            s_true=col("s") if groups["s"] else None,
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# overlap


@dataclass
class OverlapCell:
    covariate: int
    bin: int
    lo: float
    hi: float
    n_treated: int
    n_control: int

    @property
    def flagged(self) -> bool:
        return self.n_treated == 0 or self.n_control == 0


@dataclass
class OverlapReport:
    cells: list[OverlapCell]

    @property
    def flagged(self) -> list[OverlapCell]:
        return [c for c in self.cells if c.flagged]

    @property
    def ok(self) -> bool:
        return not self.flagged


def check_overlap(d: Dataset, bins: int = 5) -> OverlapReport:
    """Treated/control counts per equal-frequency bin of each covariate.

    Duplicate quantile edges are merged, so binary covariates get two bins.
    A cell is flagged when either arm is empty in it.
    """
    cells = []
    for j in range(d.d_x):
        col = d.x[:, j]
        edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, bins + 1)))
        if len(edges) == 1:
            edges = np.array([edges[0], edges[0]])
        levels = np.unique(col)
        if len(levels) <= bins:
            # discrete covariate: one cell per observed level
            for k, level in enumerate(levels):
                mask = col == level
                cells.append(OverlapCell(j, k, float(level), float(level), int(d.t[mask].sum()), int((1 - d.t[mask]).sum())))
            continue
        idx = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, len(edges) - 2)
        for k in range(len(edges) - 1):
            mask = idx == k
            cells.append(OverlapCell(j, k, float(edges[k]), float(edges[k + 1]), int(d.t[mask].sum()), int((1 - d.t[mask]).sum())))
    return OverlapReport(cells)


__all__ = [
    "Dataset",
    "DgpWeights",
    "GenConfig",
    "OverlapReport",
    "check_overlap",
    "concat_datasets",
    "draw_weights",
    "generate_world",
    "load_dataset",
    "load_gen_config",
    "null_effect_weights",
    "read_covariates",
    "save_dataset",
    "save_gen_config",
    "simulate_covariates",
    "true_ate",
]
