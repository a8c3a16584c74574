"""Error metric, multi-seed sweeps and latent-recovery diagnostics.

A sweep is a grid of (axis value, seed) cells. Each cell builds its own
world from the base :class:`~laser.data.GenConfig`, runs every requested
method on it and records one MAPE per method. Cells are independent, so they
may run in a process pool, and each finished cell is written to disk at once;
an interrupted sweep resumes from the cells already on disk.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from laser import _kv
from laser.data import GenConfig, generate_world
from laser.errors import ConfigError, DimensionError, LaserError, UndefinedMetricError
from laser.estimators import METHODS, PROPENSITY_CLIP, run_method
from laser.model import TrainConfig

AXES = ("ratio", "proxy_count")
RATIO_VALUES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
PROXY_COUNTS = (10, 15, 20, 25, 30)
DEFAULT_SEEDS = tuple(range(10))


def mape(tau_true: float, tau_hat: float) -> float:
    """Absolute error of ``tau_hat`` relative to ``|tau_true|``.

    Raises
    ------
    UndefinedMetricError
        If ``tau_true`` is zero.
    """
    if tau_true == 0:
        raise UndefinedMetricError("MAPE is undefined when the true effect is 0")
    return abs(tau_true - tau_hat) / abs(tau_true)


# --------------------------------------------------------------------------
# sweep specification


@dataclass(frozen=True)
class SweepSpec:
    """A grid of worlds and the methods to run on each.

    Parameters
    ----------
    axis
        ``ratio``: value ``r`` gives ``r * total`` latent surrogates, the rest
        observed, and ``r * total`` proxies. ``proxy_count``: ``total`` latent
        surrogates, none observed, and ``value`` proxies.
    values
        Axis values, one table row per value and method.
    base
        World parameters not controlled by the axis (sizes, noise, seed is
        overridden per cell).
    train
        Model settings; ``latent_dim=None`` means "number of true surrogates".
    total
        Number of surrogates (latent plus observed) per world.
    """

    axis: str = "ratio"
    values: tuple = RATIO_VALUES
    base: GenConfig = field(default_factory=GenConfig)
    seeds: tuple = DEFAULT_SEEDS
    methods: tuple = METHODS
    train: TrainConfig = field(default_factory=TrainConfig)
    total: int = 5
    clip: tuple = PROPENSITY_CLIP

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("values must not be empty")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.total < 1:
            raise ConfigError("total must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        for v in self.values:
            if self.axis == "ratio":
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"ratio value {v} outside [0, 1]")
                if abs(v * self.total - round(v * self.total)) > 1e-9:
                    raise ConfigError(f"ratio value {v} times total={self.total} is not an integer")
            elif v != int(v) or v < 1:
                raise ConfigError(f"proxy count {v} must be a positive integer")

    def world(self, value, seed: int) -> GenConfig:
        """World parameters for one cell."""
        if self.axis == "ratio":
            a = int(round(value * self.total))
            counts = dict(n_latent=a, n_obs_surr=self.total - a, n_proxies=a)
        else:
            counts = dict(n_latent=self.total, n_obs_surr=0, n_proxies=int(value))
        variant = self.base.graph_variant
        if variant == "all-observed" and counts["n_latent"]:
            variant = "general"
        if variant == "proxies-only" and counts["n_obs_surr"]:
            variant = "general"
        return dataclasses.replace(self.base, seed=seed, graph_variant=variant, **counts)

    def train_config(self, world: GenConfig) -> TrainConfig:
        cfg = dataclasses.replace(self.train, seed=world.seed)
        if cfg.latent_dim is None:
            cfg = dataclasses.replace(cfg, latent_dim=world.n_surrogates)
        return cfg

    def digest(self) -> str:
        lines = [f"axis = {self.axis}", f"values = {_kv._format(self.values)}",
                 f"seeds = {_kv._format(self.seeds)}", f"methods = {_kv._format(self.methods)}",
                 f"total = {self.total}", f"clip = {_kv._format(self.clip)}"]
        lines += ["[gen]"] + _kv.to_lines(self.base) + ["[train]"] + _kv.to_lines(self.train)
        return _kv.digest("\n".join(lines))


# --------------------------------------------------------------------------
# cells


def _value_label(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _cell_name(spec: SweepSpec, value, seed: int) -> str:
    return f"{spec.axis}={_value_label(value)}_seed={seed}.json"


def run_cell(spec: SweepSpec, value, seed: int) -> dict:
    """Run every method on one world; failures are recorded per method."""
    world = spec.world(value, seed)
    tcfg = spec.train_config(world)
    cell = {"axis": spec.axis, "value": value, "seed": seed, "world_digest": world.digest(),
            "results": {}}
    try:
        d_obs, d_exp, tau = generate_world(world)
    except LaserError as exc:
        for m in spec.methods:
            cell["results"][m] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        return cell
    cell["tau_true"] = tau
    for m in spec.methods:
        try:
            rep = run_method(m, d_obs, d_exp, tcfg, clip=spec.clip, config_digest=world.digest())
            if rep.mape is None:
                raise UndefinedMetricError("true effect is 0")
            cell["results"][m] = {"status": "ok", "tau_hat": rep.tau_hat, "mape": rep.mape}
        except (LaserError, ArithmeticError, ValueError) as exc:
            cell["results"][m] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return cell


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_cell(path: Path, spec: SweepSpec, value, seed: int) -> dict | None:
    try:
        cell = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if cell.get("world_digest") != spec.world(value, seed).digest() or cell.get("sweep_digest") != spec.digest():
        return None
    if set(cell.get("results", {})) != set(spec.methods):
        return None
    return cell


def _run_and_store(args) -> dict:
    spec, value, seed, cell_dir = args
    cell = run_cell(spec, value, seed)
    cell["sweep_digest"] = spec.digest()
    if cell_dir is not None:
        _write_atomic(Path(cell_dir) / _cell_name(spec, value, seed), json.dumps(cell, sort_keys=True, indent=1))
    return cell


# --------------------------------------------------------------------------
# table


@dataclass(frozen=True)
class BenchmarkRow:
    """Aggregate for one (method, axis value).

    ``per_seed`` follows the sweep's seed order with ``None`` for failed
    cells. ``std`` is the sample standard deviation (``n - 1`` divisor) over
    the successful seeds, and ``0`` when only one seed succeeded.
    """

    method: str
    value: float
    per_seed: tuple
    mean: float
    std: float

    @property
    def n_ok(self) -> int:
        return sum(v is not None for v in self.per_seed)

    @property
    def partial(self) -> bool:
        return self.n_ok < len(self.per_seed)


def _aggregate(method: str, value, per_seed: Sequence) -> BenchmarkRow:
    ok = np.array([v for v in per_seed if v is not None], dtype=np.float64)
    if ok.size == 0:
        mean = std = float("nan")
    else:
        mean = float(ok.mean())
        std = float(ok.std(ddof=1)) if ok.size > 1 else 0.0
    return BenchmarkRow(method, value, tuple(per_seed), mean, std)


@dataclass(frozen=True)
class BenchmarkTable:
    axis: str
    seeds: tuple
    rows: tuple
    digest: str = ""

    def row(self, method: str, value) -> BenchmarkRow:
        for r in self.rows:
            if r.method == method and r.value == value:
                return r
        raise KeyError((method, value))

    def mean(self, method: str, value) -> float:
        return self.row(method, value).mean

    def to_csv(self, path) -> None:
        path = Path(path)
        header = ["method", "axis", "value", "mean", "std", "n_ok"] + [f"seed_{s}" for s in self.seeds]
        lines = [",".join(header)]
        for r in self.rows:
            cells = [r.method, self.axis, _value_label(r.value), repr(r.mean), repr(r.std), str(r.n_ok)]
            cells += ["failed" if v is None else repr(v) for v in r.per_seed]
            lines.append(",".join(cells))
        _write_atomic(path, "\n".join(lines) + "\n")

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "seeds": list(self.seeds),
            "config_digest": self.digest,
            "rows": [{"method": r.method, "value": r.value, "mean": r.mean, "std": r.std, "n_ok": r.n_ok,
                      "partial": r.partial, "per_seed": list(r.per_seed)} for r in self.rows],
        }

    def to_json(self, path) -> None:
        _write_atomic(Path(path), json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    def format(self) -> str:
        """Plain-text summary, one line per row."""
        out = []
        for r in self.rows:
            flag = f"  ({r.n_ok}/{len(r.per_seed)} seeds)" if r.partial else ""
            out.append(f"{r.method:<12} {self.axis}={_value_label(r.value):<6} "
                       f"MAPE {r.mean:.4f} +/- {r.std:.4f}{flag}")
        return "\n".join(out)


def table_from_cells(spec: SweepSpec, cells: dict) -> BenchmarkTable:
    """Reduce ``{(value, seed): cell}`` into a table in the sweep's order."""
    rows = []
    for m in spec.methods:
        for v in spec.values:
            per_seed = []
            for s in spec.seeds:
                res = cells[(v, s)]["results"][m]
                per_seed.append(res["mape"] if res["status"] == "ok" else None)
            rows.append(_aggregate(m, v, per_seed))
    return BenchmarkTable(spec.axis, spec.seeds, tuple(rows), spec.digest())


def run_sweep(spec: SweepSpec, *, cell_dir=None, jobs: int = 1, progress=None) -> BenchmarkTable:
    """Run (or resume) every cell of ``spec`` and aggregate.

    Parameters
    ----------
    cell_dir
        Directory for per-cell JSON files. Cells already present with a
        matching digest are reused, so an interrupted sweep picks up where it
        stopped.
    jobs
        Worker processes; ``1`` runs in-process.
    progress
        Optional callable receiving each finished cell dict.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cell_dir is not None:
        Path(cell_dir).mkdir(parents=True, exist_ok=True)
    cells: dict = {}
    todo = []
    for v in spec.values:
        for s in spec.seeds:
            cached = None
            if cell_dir is not None:
                cached = _load_cell(Path(cell_dir) / _cell_name(spec, v, s), spec, v, s)
            if cached is not None:
                cells[(v, s)] = cached
            else:
                todo.append((spec, v, s, None if cell_dir is None else str(cell_dir)))
    if jobs == 1 or len(todo) <= 1:
        results = map(_run_and_store, todo)
        for cell in results:
            cells[(cell["value"], cell["seed"])] = cell
            if progress:
                progress(cell)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell in pool.map(_run_and_store, todo):
                cells[(cell["value"], cell["seed"])] = cell
                if progress:
                    progress(cell)
    return table_from_cells(spec, cells)


# --------------------------------------------------------------------------
# latent recovery


class Alignment(NamedTuple):
    r2_per_dim: np.ndarray
    aligned: np.ndarray
    degenerate: bool
    coef: np.ndarray  # (n_hat + 1, n_true); last row is the intercept


def align_latents(s_true, s_hat) -> Alignment:
    """Least-squares affine map from ``s_hat`` onto each column of ``s_true``.

    Recovery up to an invertible affine map is all that can be asked of the
    latent model, so the fit absorbs scale, rotation and offset. ``r2_per_dim``
    is the coefficient of determination per true dimension. A rank-deficient
    ``s_hat`` still gets the minimum-norm solution, with ``degenerate`` set.
    """
    s_true = np.asarray(s_true, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s_true.ndim == 1:
        s_true = s_true[:, None]
    if s_hat.ndim == 1:
        s_hat = s_hat[:, None]
    if s_true.shape[0] != s_hat.shape[0]:
        raise DimensionError(f"row counts differ: {s_true.shape[0]} true vs {s_hat.shape[0]} estimated")
    design = np.hstack([s_hat, np.ones((s_hat.shape[0], 1))])
    coef, _, rank, _ = np.linalg.lstsq(design, s_true, rcond=None)
    aligned = design @ coef
    ss_res = ((s_true - aligned) ** 2).sum(axis=0)
    ss_tot = ((s_true - s_true.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)
    return Alignment(r2, aligned, bool(rank < design.shape[1]), coef)


def export_scatter(s_true, aligned, t, path) -> None:
    """Write paired true/aligned coordinates and treatment labels as CSV.

    Columns are ``true0..``, ``aligned0..`` and ``t``.
    """
    s_true = np.atleast_2d(np.asarray(s_true, dtype=np.float64))
    aligned = np.atleast_2d(np.asarray(aligned, dtype=np.float64))
    t = np.asarray(t).ravel()
    if s_true.shape != aligned.shape or s_true.shape[0] != t.shape[0]:
        raise DimensionError(f"shapes differ: true {s_true.shape}, aligned {aligned.shape}, t {t.shape}")
    k = s_true.shape[1]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"true{i}" for i in range(k)] + [f"aligned{i}" for i in range(k)] + ["t"])
        for a, b, ti in zip(s_true, aligned, t):
            w.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b] + [int(ti)])
    os.replace(tmp, path)


__all__ = [
    "AXES", "Alignment", "BenchmarkRow", "BenchmarkTable", "DEFAULT_SEEDS", "PROXY_COUNTS", "RATIO_VALUES",
    "SweepSpec", "align_latents", "export_scatter", "mape", "run_cell", "run_sweep", "table_from_cells",
]
