"""Command-line entry point: ``laser {generate,train,estimate,benchmark,diagnose}``.

Every command reads one INI file whose sections map onto the library's
config objects::

    [gen]       GenConfig keys
    [train]     TrainConfig keys
    [estimate]  methods, clip_lo, clip_hi
    [sweep]     axis, values, seeds, methods, total
    [diagnose]  r2_threshold
    [io]        out_dir, data_dir, model_path

Every key has a default, so an empty file (or no ``--config``) is valid.
Unknown sections and keys are rejected with a message naming them. Outputs
carry the digest of the effective configuration and contain no timestamps,
so reruns with the same config are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from laser import _kv
from laser.data import Dataset, GenConfig, generate_world, load_dataset, save_dataset
from laser.errors import ConfigError, LaserError
from laser.estimators import METHODS, run_method
from laser.evaluation import (
    DEFAULT_SEEDS,
    RATIO_VALUES,
    SweepSpec,
    align_latents,
    export_scatter,
    run_sweep,
)
from laser.model import TrainConfig, extract_latents, save_model, train


@dataclass(frozen=True)
class EstimateSection:
    methods: tuple[str, ...] = ("laser",)
    clip_lo: float = 0.01
    clip_hi: float = 0.99

    def __post_init__(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"[estimate] methods: unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not 0.0 < self.clip_lo < self.clip_hi < 1.0:
            raise ConfigError("[estimate] clip_lo/clip_hi must satisfy 0 < clip_lo < clip_hi < 1")


@dataclass(frozen=True)
class SweepSection:
    axis: str = "ratio"
    values: tuple[float, ...] = RATIO_VALUES
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    methods: tuple[str, ...] = METHODS
    total: int = 5


@dataclass(frozen=True)
class DiagnoseSection:
    r2_threshold: float = 0.8


@dataclass(frozen=True)
class IoSection:
    """``data_dir`` and ``model_path`` default to locations under ``out_dir``."""

    out_dir: str = "laser-out"
    data_dir: str = ""
    model_path: str = ""


_SECTIONS = {
    "gen": GenConfig,
    "train": TrainConfig,
    "estimate": EstimateSection,
    "sweep": SweepSection,
    "diagnose": DiagnoseSection,
    "io": IoSection,
}


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    estimate: EstimateSection = field(default_factory=EstimateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    io: IoSection = field(default_factory=IoSection)

    def text(self) -> str:
        """Canonical INI rendering; the digest is taken over this text."""
        blocks = []
        for name in _SECTIONS:
            blocks.append(f"[{name}]\n" + "\n".join(_kv.to_lines(getattr(self, name))))
        return "\n\n".join(blocks) + "\n"

    def digest(self) -> str:
        # io paths do not change any result, so they stay out of the digest
        return _kv.digest("\n".join(b for b in self.text().split("\n\n") if not b.startswith("[io]")))

    def train_config(self) -> TrainConfig:
        """TrainConfig with the seed and latent size filled in from [gen] where unset."""
        cfg = self.train
        if cfg.latent_dim is None:
            cfg = dataclasses.replace(cfg, latent_dim=max(1, self.gen.n_surrogates))
        return cfg

    def sweep_spec(self) -> SweepSpec:
        s = self.sweep
        values = tuple(int(v) for v in s.values) if s.axis == "proxy_count" else tuple(float(v) for v in s.values)
        return SweepSpec(axis=s.axis, values=values, base=self.gen, seeds=s.seeds, methods=s.methods,
                         train=self.train, total=s.total, clip=(self.estimate.clip_lo, self.estimate.clip_hi))

    @property
    def out_dir(self) -> Path:
        return Path(self.io.out_dir)

    @property
    def data_dir(self) -> Path:
        return Path(self.io.data_dir) if self.io.data_dir else self.out_dir

    @property
    def model_path(self) -> Path:
        return Path(self.io.model_path) if self.io.model_path else self.out_dir / "model.txt"


def load_run_config(path=None, *, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Parse an INI file into a :class:`RunConfig`; ``seed``/``out`` override the file."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]; valid sections: {', '.join(_SECTIONS)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        mapping = dict(parser[name]) if parser.has_section(name) else {}
        if name == "gen" and seed is not None:
            mapping["seed"] = str(seed)
        if name == "train" and seed is not None:
            mapping["seed"] = str(seed)
        if name == "io" and out is not None:
            mapping["out_dir"] = out
        parts[name] = _kv.from_mapping(cls, mapping, name)
    return RunConfig(**parts)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def _load_pair(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    return load_dataset(cfg.data_dir / "d_obs.csv"), load_dataset(cfg.data_dir / "d_exp.csv")


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> list[Path]:
    """Write ``d_obs.csv``, ``d_exp.csv`` and ``truth.json`` to the output directory."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    d_obs, d_exp, tau = generate_world(cfg.gen)
    paths = [out / "d_obs.csv", out / "d_exp.csv", out / "truth.json"]
    save_dataset(d_obs, paths[0])
    save_dataset(d_exp, paths[1])
    _write_json(paths[2], {"tau_true": tau, "seed": cfg.gen.seed, "config_digest": cfg.digest(),
                           "gen_digest": cfg.gen.digest(), "n_obs": len(d_obs), "n_exp": len(d_exp)})
    return paths


def cmd_train(cfg: RunConfig) -> list[Path]:
    """Fit the latent-surrogate model on the data directory; write the model and its loss summary."""
    d_obs, d_exp = _load_pair(cfg)
    tcfg = cfg.train_config()
    model, trace = train(d_obs, d_exp, tcfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    model_path = cfg.model_path
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    summary = cfg.out_dir / "train.json"
    _write_json(summary, {"config_digest": cfg.digest(), "epochs": len(trace), "latent_dim": tcfg.latent_dim,
                          "final_loss": dataclasses.asdict(trace[-1]), "seed": tcfg.seed})
    return [model_path, summary]


def cmd_estimate(cfg: RunConfig) -> list[Path]:
    """Run every method in ``[estimate] methods``; write ``estimates.json``."""
    d_obs, d_exp = _load_pair(cfg)
    tcfg = cfg.train_config()
    reports = []
    for m in cfg.estimate.methods:
        rep = run_method(m, d_obs, d_exp, tcfg, clip=(cfg.estimate.clip_lo, cfg.estimate.clip_hi),
                         config_digest=cfg.digest())
        reports.append(dataclasses.asdict(rep))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "estimates.json"
    _write_json(path, {"config_digest": cfg.digest(), "reports": reports})
    return [path]


def cmd_benchmark(cfg: RunConfig, jobs: int = 1, echo=None) -> list[Path]:
    """Run the configured sweep; cells persist under ``<out>/cells`` as they finish."""
    spec = cfg.sweep_spec()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    def progress(cell):
        if echo:
            status = " ".join(f"{m}={r['mape']:.3f}" if r["status"] == "ok" else f"{m}=failed"
                              for m, r in cell["results"].items())
            echo(f"{spec.axis}={cell['value']} seed={cell['seed']}: {status}")

    table = run_sweep(spec, cell_dir=out / "cells", jobs=jobs, progress=progress)
    paths = [out / "benchmark.csv", out / "benchmark.json"]
    table.to_csv(paths[0])
    doc = table.to_dict()
    doc["config_digest"] = cfg.digest()
    _write_json(paths[1], doc)
    if echo:
        echo(table.format())
    return paths


def cmd_diagnose(cfg: RunConfig) -> tuple[list[Path], np.ndarray]:
    """Train on a generated world and measure how well the latents are recovered.

    Writes ``scatter.csv`` (true vs aligned latents on the experimental
    units) and ``recovery.json`` (r² per true latent dimension).
    """
    if cfg.gen.n_latent == 0:
        raise ConfigError("[gen] n_latent must be >= 1 for latent-recovery diagnostics")
    d_obs, d_exp, tau = generate_world(cfg.gen)
    tcfg = cfg.train_config()
    model, trace = train(d_obs, d_exp, tcfg)
    s_hat = extract_latents(model, d_exp)
    # the latent block of s_true follows the observed-surrogate block
    s_true = d_exp.s_true[:, cfg.gen.n_obs_surr:]
    fit = align_latents(s_true, s_hat)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "scatter.csv", out / "recovery.json"]
    export_scatter(s_true, fit.aligned, d_exp.t, paths[0])
    _write_json(paths[1], {"config_digest": cfg.digest(), "r2_per_dim": [float(v) for v in fit.r2_per_dim],
                           "degenerate": fit.degenerate, "threshold": cfg.diagnose.r2_threshold,
                           "seed": tcfg.seed, "tau_true": tau})
    return paths, fit.r2_per_dim


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laser", description="Long-term effects from latent surrogates.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file ([gen], [train], [estimate], [sweep], [diagnose], [io])")
        p.add_argument("--out", help="output directory (overrides [io] out_dir)")
        p.add_argument("--seed", type=int, help="overrides [gen] seed and [train] seed")
        return p

    common(sub.add_parser("generate", help="write a semi-synthetic world"))
    common(sub.add_parser("train", help="fit the latent-surrogate model"))
    common(sub.add_parser("estimate", help="estimate the long-term effect"))
    bench = common(sub.add_parser("benchmark", help="run a multi-seed sweep"))
    bench.add_argument("--jobs", type=int, default=1, help="worker processes")
    diag = common(sub.add_parser("diagnose", help="latent-recovery diagnostic"))
    diag.add_argument("--assert", dest="check", action="store_true",
                      help="exit 1 when any r^2 falls below [diagnose] r2_threshold")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed=args.seed, out=args.out)
        if args.command == "generate":
            paths = cmd_generate(cfg)
        elif args.command == "train":
            paths = cmd_train(cfg)
        elif args.command == "estimate":
            paths = cmd_estimate(cfg)
        elif args.command == "benchmark":
            paths = cmd_benchmark(cfg, jobs=args.jobs, echo=print)
        else:
            paths, r2 = cmd_diagnose(cfg)
            print("r2 per latent dimension: " + ", ".join(f"{v:.4f}" for v in r2))
            if args.check and np.any(r2 < cfg.diagnose.r2_threshold):
                print(f"r2 below threshold {cfg.diagnose.r2_threshold}", file=sys.stderr)
                return 1
    except (LaserError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
