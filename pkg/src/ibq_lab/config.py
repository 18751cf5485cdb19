"""
config.py
This module defines the RunConfig schema and loads, validates and echoes
experiment configurations.

A RunConfig is a tree of dataclasses made into an OmegaConf structured config.
YAML files are merged onto it, so unknown keys and wrongly typed values are
rejected before any work starts. Enum fields take member names in YAML
(e.g. `quantizer: IBQ`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import yaml
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .core.errors import ConfigError
from .data.dataset import DataSource
from .losses import LossWeights, ReconKind
from .quantizers.base import QuantizerKind
from .quantizers.codebook import MAX_LFQ_DIM, CodebookInit

log = logging.getLogger(__name__)

RESOLVED_NAME = "resolved_config.yaml"


@dataclass
class DataConfig:
    source: DataSource = DataSource.SYNTHETIC
    path: Optional[str] = None
    size: int = 32
    n: int = 2000
    num_classes: int = 8
    seed: int = 0
    held_out: float = 0.1


@dataclass
class TokenizerConfig:
    codebook_size: int = 256
    code_dim: int = 32
    downsample: int = 4
    channels: int = 64
    num_resblocks: int = 1
    quantizer: QuantizerKind = QuantizerKind.IBQ
    beta: float = 0.25
    logit_scale: float = 1.0
    recon: ReconKind = ReconKind.MSE
    codebook_init: CodebookInit = CodebookInit.UNIFORM
    tau_start: float = 0.9
    tau_end: float = 1e-6
    loss: LossWeights = field(default_factory=LossWeights)


@dataclass
class OptimConfig:
    lr: float = 1e-4
    betas: List[float] = field(default_factory=lambda: [0.5, 0.9])
    eps: float = 1e-8
    weight_decay: float = 0.0
    milestones: List[float] = field(default_factory=lambda: [0.8])
    decay: float = 0.01
    epochs: int = 20
    batch: int = 64


@dataclass
class ARSection:
    depth: int = 2
    width: Optional[int] = None
    heads: Optional[int] = None
    dropout: float = 0.1
    epochs: int = 20
    batch: int = 32
    lr: float = 3e-4
    scale_lr_with_batch: bool = False
    betas: List[float] = field(default_factory=lambda: [0.9, 0.95])
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    held_out: float = 0.1
    tokens: Optional[str] = None
    vocab_size: Optional[int] = None
    tokenizer_checkpoint: Optional[str] = None
    temperature: float = 1.0
    top_k: int = 0


@dataclass
class OutputConfig:
    dir: str = "${oc.env:IBQ_LAB_OUTPUT,runs}"


@dataclass
class RunConfig:
    """Everything one experiment needs, end to end."""
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ar: ARSection = field(default_factory=ARSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    deterministic: bool = True

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir)


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


def validate_config(cfg: RunConfig) -> RunConfig:
    """Semantic checks the schema cannot express.

    Raises:
        ConfigError: Naming the first offending key.
    """
    d, t, o, a = cfg.data, cfg.tokenizer, cfg.optim, cfg.ar
    checks = [
        (d.size >= 1, "data.size", "must be positive"),
        (d.n >= 2, "data.n", "needs at least two images"),
        (d.num_classes >= 1, "data.num_classes", "must be positive"),
        (0.0 < d.held_out < 1.0, "data.held_out", "must lie in (0, 1)"),
        (_is_power_of_two(t.downsample), "tokenizer.downsample", "must be a power of two"),
        (d.size % t.downsample == 0, "tokenizer.downsample", f"must divide data.size={d.size}"),
        (t.codebook_size >= 2, "tokenizer.codebook_size", "must be at least 2"),
        (t.code_dim >= 1, "tokenizer.code_dim", "must be at least 1"),
        (t.channels >= 1, "tokenizer.channels", "must be positive"),
        (t.num_resblocks >= 0, "tokenizer.num_resblocks", "must be non-negative"),
        (t.beta >= 0, "tokenizer.beta", "must be non-negative"),
        (t.logit_scale > 0, "tokenizer.logit_scale", "must be positive"),
        (t.tau_start > 0 and t.tau_end > 0, "tokenizer.tau_start", "temperatures must be positive"),
        (all(w >= 0 for w in vars(t.loss).values()), "tokenizer.loss", "weights must be non-negative"),
        (o.lr > 0, "optim.lr", "must be positive"),
        (len(o.betas) == 2 and all(0 <= b < 1 for b in o.betas), "optim.betas", "must be two values in [0, 1)"),
        (o.epochs >= 1, "optim.epochs", "must be at least 1"),
        (o.batch >= 1, "optim.batch", "must be at least 1"),
        (all(0 < m <= 1 for m in o.milestones), "optim.milestones", "must be fractions in (0, 1]"),
        (list(o.milestones) == sorted(o.milestones), "optim.milestones", "must be sorted ascending"),
        (0 < o.decay <= 1, "optim.decay", "must lie in (0, 1]"),
        (a.depth >= 1, "ar.depth", "must be at least 1"),
        (0 <= a.dropout < 1, "ar.dropout", "must lie in [0, 1)"),
        (a.epochs >= 1 and a.batch >= 1, "ar.epochs", "epochs and batch must be at least 1"),
        (a.lr > 0, "ar.lr", "must be positive"),
        (len(a.betas) == 2, "ar.betas", "must be two values"),
        (a.temperature > 0, "ar.temperature", "must be positive"),
        (a.top_k >= 0, "ar.top_k", "must be non-negative (0 means the full vocabulary)"),
        (0.0 < a.held_out < 1.0, "ar.held_out", "must lie in (0, 1)"),
    ]
    for ok, key, message in checks:
        if not ok:
            raise ConfigError(f"{key} {message}")
    if t.quantizer is QuantizerKind.LFQ:
        if t.code_dim > MAX_LFQ_DIM:
            raise ConfigError(f"tokenizer.code_dim must be at most {MAX_LFQ_DIM} for LFQ, got {t.code_dim}")
        if t.codebook_size != 1 << t.code_dim:
            raise ConfigError(f"tokenizer.codebook_size must equal 2**code_dim={1 << t.code_dim} for LFQ")
    if d.source is DataSource.FOLDER and (d.path is None or not Path(d.path).is_dir()):
        raise ConfigError(f"data.path {d.path!r} is not an existing folder")
    width = a.width if a.width is not None else 64 * a.depth
    heads = a.heads if a.heads is not None else a.depth
    if width % heads or (width // heads) % 2:
        raise ConfigError(f"ar.width={width} must split into {heads} heads of even size")
    return cfg


def _merge(sources: Sequence) -> RunConfig:
    try:
        merged = OmegaConf.merge(OmegaConf.structured(RunConfig), *sources)
        cfg = OmegaConf.to_object(merged)
    except OmegaConfBaseException as exc:
        key = getattr(exc, "full_key", None)
        where = f" at {key}" if key else ""
        raise ConfigError(f"invalid configuration{where}: {exc.msg if hasattr(exc, 'msg') else exc}") from None
    return validate_config(cfg)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Load a YAML file (or the defaults) plus dotlist overrides such as "optim.epochs=3".

    Raises:
        ConfigError: If the file is missing, malformed, has unknown keys or fails validation.
    """
    sources = []
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            sources.append(OmegaConf.load(path))
        except (yaml.YAMLError, OmegaConfBaseException) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    if overrides:
        sources.append(OmegaConf.from_dotlist(list(overrides)))
    cfg = _merge(sources)
    log.debug("loaded config from %s", path or "defaults")
    return cfg


def config_from_yaml(text: str) -> RunConfig:
    """Rebuild a RunConfig from resolved YAML, e.g. the copy embedded in a checkpoint."""
    try:
        source = OmegaConf.create(text)
    except (yaml.YAMLError, OmegaConfBaseException) as exc:
        raise ConfigError(f"embedded config is not valid YAML: {exc}") from None
    return _merge([source])


def config_to_yaml(cfg: RunConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(cfg), resolve=True)


def override(cfg: RunConfig, seed: Optional[int] = None, deterministic: Optional[bool] = None) -> RunConfig:
    """Apply the command-line --seed / --deterministic flags."""
    if seed is not None:
        cfg.seed = seed
        cfg.data.seed = seed
    if deterministic is not None:
        cfg.deterministic = deterministic
    return validate_config(cfg)


def save_resolved(cfg: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> Path:
    """Write the fully resolved config into the output folder; returns its path."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / RESOLVED_NAME
        path.write_text(config_to_yaml(cfg), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write resolved config to {out}: {exc}") from exc
    return path
