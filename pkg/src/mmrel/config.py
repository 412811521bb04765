"""Pipeline configuration: one JSON file plus command-line overrides.

Key schema (every key optional)::

    {
      "seed": 7, "lambda": 30.39, "mode": "te2ve", "workers": 1,
      "conflict_policy": "identical-wins", "multi_hop": false, "match": "overlap",
      "paths": {"corpus": "corpus.jsonl", ...},
      "encoder": {"dim": 32, "fps": 3.0, "mask_exponent": 1.0, "similarity_scale": 100.0},
      "merp": {"lr": 0.05, "batch_size": 64, ...},
      "cs": {"epochs": 200, "margin": 0.5, ...},
      "synthetic": {"n_docs": 200, "noise": 0.1, ...}
    }

Relative paths resolve against the config file's directory, or against the
working directory when there is no config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .embedding import EncoderConfig
from .errors import ConfigError, MissingInputError
from .merp import MerpConfig
from .pseudolabel import CONFLICT_POLICIES, DEFAULT_LAMBDA
from .synthetic import SyntheticSpec

MODES = ("te2ve", "iete2ve")

DEFAULT_PATHS = {
    "corpus": "corpus.jsonl",
    "gold": "gold.jsonl",
    "eval_corpus": "eval_corpus.jsonl",
    "eval_gold": "eval_gold.jsonl",
    "ie_corpus": "eval_corpus_ie.jsonl",
    "frames": "frames.bin",
    "encoder": "encoder.json",
    "kb": "kb.tsv",
    "pseudo_labels": "pseudo_labels.jsonl",
    "cs_checkpoint": "cs.bin",
    "model": "model.bin",
    "train_log": "train_log.csv",
    "predictions": "predictions.jsonl",
    "metrics": "metrics.csv",
    "report": "report.txt",
}

# Settings that train the desk-scale toy setup in a few seconds; the MERP
# dataclass defaults keep the full-scale values.
DEFAULT_MERP = {"dim": 32, "lr": 0.05, "batch_size": 64}
DEFAULT_ENCODER = {"dim": 32}


@dataclass(frozen=True)
class CsConfig:
    epochs: int = 200
    margin: float = 0.5
    lr: float = 0.1
    momentum: float = 0.9
    out_dim: int = 512
    depth: int = 1
    neg_ratio: float = 1.0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.epochs < 0 or self.depth < 1 or self.out_dim < 1:
            raise ConfigError("cs epochs must be >= 0, depth and out_dim >= 1")
        if self.neg_ratio <= 0:
            raise ConfigError("cs neg_ratio must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    lam: float = DEFAULT_LAMBDA
    mode: str = "te2ve"
    workers: int = 1
    conflict_policy: str = "identical-wins"
    multi_hop: bool = False
    match: str = "overlap"
    base_dir: Path = Path(".")
    paths: dict = field(default_factory=lambda: dict(DEFAULT_PATHS))
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(**DEFAULT_ENCODER))
    merp: MerpConfig = field(default_factory=lambda: MerpConfig(**DEFAULT_MERP))
    cs: CsConfig = field(default_factory=CsConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.conflict_policy not in CONFLICT_POLICIES:
            raise ConfigError(f"unknown conflict policy {self.conflict_policy!r}")
        if self.match not in ("overlap", "exact"):
            raise ConfigError(f"match must be 'overlap' or 'exact', got {self.match!r}")
        if self.encoder.dim != self.merp.dim:
            raise ConfigError(f"encoder dim {self.encoder.dim} != merp dim {self.merp.dim}")
        unknown = set(self.paths) - set(DEFAULT_PATHS)
        if unknown:
            raise ConfigError(f"unknown path keys: {sorted(unknown)}")

    def path(self, key: str) -> Path:
        p = Path(self.paths[key])
        return p if p.is_absolute() else self.base_dir / p

    def stage_seed(self, name: str) -> int:
        # small enough for every consumer, still a function of (seed, name)
        from ._random import stream_seed

        return stream_seed(self.seed, name) % (2 ** 31)


def _section(cls, raw, defaults: Optional[Mapping] = None):
    raw = dict(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{cls.__name__} section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**(defaults or {}), **raw}
    for k, v in merged.items():
        if isinstance(v, list):
            merged[k] = tuple(v)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__} value: {exc}") from None


TOP_KEYS = {"seed", "lambda", "mode", "workers", "conflict_policy", "multi_hop", "match",
            "paths", "encoder", "merp", "cs", "synthetic"}


def config_from_dict(raw: Mapping, base_dir=".") -> PipelineConfig:
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = raw.get("seed", 7)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    paths = dict(DEFAULT_PATHS)
    paths.update(raw.get("paths") or {})
    try:
        return PipelineConfig(
            seed=seed,
            lam=float(raw.get("lambda", DEFAULT_LAMBDA)),
            mode=str(raw.get("mode", "te2ve")).lower(),
            workers=int(raw.get("workers", 1)),
            conflict_policy=raw.get("conflict_policy", "identical-wins"),
            multi_hop=bool(raw.get("multi_hop", False)),
            match=raw.get("match", "overlap"),
            base_dir=Path(base_dir),
            paths=paths,
            encoder=_section(EncoderConfig, raw.get("encoder"), DEFAULT_ENCODER),
            merp=_section(MerpConfig, raw.get("merp"), DEFAULT_MERP),
            cs=_section(CsConfig, raw.get("cs")),
            synthetic=_section(SyntheticSpec, raw.get("synthetic"), {"seed": seed}),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def load_config(path=None, base_dir=None) -> PipelineConfig:
    if path is None:
        return config_from_dict({}, base_dir or ".")
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such config file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw, base_dir or path.parent)


def with_overrides(cfg: PipelineConfig, seed=None, workers=None, lam=None,
                   prune_threshold=None, mode=None) -> PipelineConfig:
    """Flags win over file values.  A new seed also reseeds the synthetic spec."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
        changes["synthetic"] = replace(cfg.synthetic, seed=seed)
    if workers is not None:
        changes["workers"] = workers
    if lam is not None:
        changes["lam"] = lam
    if mode is not None:
        changes["mode"] = mode
    if prune_threshold is not None:
        changes["merp"] = cfg.merp.variant(prune_threshold=prune_threshold)
    return replace(cfg, **changes) if changes else cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    syn = asdict(cfg.synthetic)
    syn = {k: list(v) if isinstance(v, tuple) else v for k, v in syn.items()}
    return {
        "seed": cfg.seed, "lambda": cfg.lam, "mode": cfg.mode, "workers": cfg.workers,
        "conflict_policy": cfg.conflict_policy, "multi_hop": cfg.multi_hop, "match": cfg.match,
        "paths": dict(cfg.paths), "encoder": asdict(cfg.encoder), "merp": asdict(cfg.merp),
        "cs": asdict(cfg.cs), "synthetic": syn,
    }
