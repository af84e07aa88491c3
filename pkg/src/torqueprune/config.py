"""Flat key = value run configuration.

One assignment per line, ``#`` starts a comment, unknown keys are rejected
by name.  Every field has a default except ``arch`` and ``dataset``; the
resolved config hashes to a stable digest that output-file headers carry so
any artifact can be traced back to its exact configuration.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .optim import OPTIMIZER_KINDS, SCHEDULE_KINDS
from .regularizers import SCHEMES


class ConfigError(ValueError):
    """A run configuration is missing, malformed, or inconsistent."""


INDEXING_STRATEGIES = ("natural", "random")
PRUNE_MODES = ("threshold", "budget")
SCHEDULE_UNITS = ("epoch", "step")
TASK_KINDS = ("classification", "regression")


@dataclass
class TrainConfig:
    # what to train on
    arch: str = ""
    dataset: str = ""  # generator name or csv:<path>
    dataset_size: int = 1000
    noise: float | None = None  # generator default when unset
    data_seed: int | None = None  # defaults to seed
    classes: int = 4  # gaussian_blobs
    separation: float = 5.0  # gaussian_blobs
    task: str = "classification"  # csv datasets only; generators know their task
    # training loop
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "sgd_momentum"
    lr: float = 0.05
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    schedule: str = "constant"
    milestones: tuple = (60, 80)
    gamma: float = 0.1
    step_size: int = 30
    t_max: int = 0  # 0 means "use epochs"
    warmup_fraction: float = 0.1
    schedule_unit: str = "epoch"
    # regularizer
    scheme: str = "none"
    reg_coefficient: float = 0.0
    exp_base: float | None = None  # None = per-layer auto rule
    heaviside_threshold: float | None = None
    heaviside_force: float | None = None
    indexing: str = "natural"
    indexing_seed: int | None = None  # defaults to seed
    penalize_output: bool = False  # regularize the classifier/output layer too
    # pruning
    prune_mode: str = "threshold"
    prune_threshold: float = 1e-3
    prune_target: float = 2.0
    finetune_epochs: int = 0
    # bookkeeping
    seed: int = 0
    out_dir: str = "runs"
    log_norms_every: int = 1

    # -- derived accessors --

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def effective_indexing_seed(self) -> int:
        return self.seed if self.indexing_seed is None else self.indexing_seed

    @property
    def effective_t_max(self) -> int:
        return self.t_max if self.t_max > 0 else self.epochs


_INT_KEYS = {
    "dataset_size", "classes", "epochs", "batch_size", "step_size", "t_max",
    "finetune_epochs", "seed", "data_seed", "indexing_seed", "log_norms_every",
}
_FLOAT_KEYS = {
    "noise", "separation", "lr", "momentum", "weight_decay", "gamma",
    "warmup_fraction", "reg_coefficient", "heaviside_threshold",
    "heaviside_force", "prune_threshold", "prune_target",
}
_STR_KEYS = {
    "arch", "dataset", "task", "optimizer", "schedule", "schedule_unit",
    "scheme", "indexing", "prune_mode", "out_dir",
}


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "penalize_output":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if key == "exp_base":
            return None if raw == "auto" else float(raw)
        if key in ("milestones",):
            return tuple(int(p) for p in raw.split(",") if p.strip() != "")
        if key == "betas":
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated floats")
            return tuple(parts)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from None
    return raw  # string keys pass through


def parse_config(text: str) -> TrainConfig:
    """Parse flat key = value text into a validated TrainConfig."""
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = TrainConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return parse_config(text)


def validate_config(cfg: TrainConfig) -> None:
    if not cfg.arch:
        raise ConfigError("missing required config key 'arch'")
    if not cfg.dataset:
        raise ConfigError("missing required config key 'dataset'")
    if cfg.epochs < 1:
        raise ConfigError(f"config key 'epochs': must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ConfigError(f"config key 'batch_size': must be >= 1, got {cfg.batch_size}")
    if cfg.dataset_size < 1:
        raise ConfigError(f"config key 'dataset_size': must be >= 1, got {cfg.dataset_size}")
    if cfg.log_norms_every < 1:
        raise ConfigError(f"config key 'log_norms_every': must be >= 1, got {cfg.log_norms_every}")
    if cfg.finetune_epochs < 0:
        raise ConfigError(f"config key 'finetune_epochs': must be >= 0, got {cfg.finetune_epochs}")
    if cfg.optimizer not in OPTIMIZER_KINDS:
        raise ConfigError(f"config key 'optimizer': {cfg.optimizer!r} not in {OPTIMIZER_KINDS}")
    if cfg.schedule not in SCHEDULE_KINDS:
        raise ConfigError(f"config key 'schedule': {cfg.schedule!r} not in {SCHEDULE_KINDS}")
    if cfg.schedule_unit not in SCHEDULE_UNITS:
        raise ConfigError(f"config key 'schedule_unit': {cfg.schedule_unit!r} not in {SCHEDULE_UNITS}")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"config key 'scheme': {cfg.scheme!r} not in {SCHEMES}")
    if cfg.indexing not in INDEXING_STRATEGIES:
        raise ConfigError(f"config key 'indexing': {cfg.indexing!r} not in {INDEXING_STRATEGIES}")
    if cfg.prune_mode not in PRUNE_MODES:
        raise ConfigError(f"config key 'prune_mode': {cfg.prune_mode!r} not in {PRUNE_MODES}")
    if cfg.task not in TASK_KINDS:
        raise ConfigError(f"config key 'task': {cfg.task!r} not in {TASK_KINDS}")
    if cfg.scheme == "heaviside" and (cfg.heaviside_threshold is None or cfg.heaviside_force is None):
        raise ConfigError("heaviside scheme needs config keys 'heaviside_threshold' and 'heaviside_force'")
    if cfg.exp_base is not None and cfg.exp_base <= 1.0:
        raise ConfigError(f"config key 'exp_base': must exceed 1 (or be 'auto'), got {cfg.exp_base}")
    if cfg.reg_coefficient < 0:
        raise ConfigError(f"config key 'reg_coefficient': must be >= 0, got {cfg.reg_coefficient}")
    if cfg.prune_threshold < 0:
        raise ConfigError(f"config key 'prune_threshold': must be >= 0, got {cfg.prune_threshold}")
    if cfg.prune_target < 1.0:
        raise ConfigError(f"config key 'prune_target': must be >= 1, got {cfg.prune_target}")
    if cfg.lr < 0 or cfg.momentum < 0 or cfg.weight_decay < 0:
        raise ConfigError("config keys 'lr', 'momentum', 'weight_decay' must be >= 0")
    if not cfg.dataset.startswith("csv:"):
        # generator names are validated here; csv paths are checked at load time
        from .datasets import GENERATOR_NAMES

        if cfg.dataset not in GENERATOR_NAMES:
            raise ConfigError(
                f"config key 'dataset': {cfg.dataset!r} is neither csv:<path> nor one of {GENERATOR_NAMES}"
            )
    # fail fast on an unparseable architecture
    from .model import ConstructionError, parse_arch

    try:
        parse_arch(cfg.arch)
    except ConstructionError as exc:
        raise ConfigError(f"config key 'arch': {exc}") from None


def config_hash(cfg: TrainConfig) -> str:
    """Stable digest of the fully-resolved configuration.

    ``out_dir`` is excluded: it names where results land, not what the
    experiment is, so relocated reruns stay byte-identical.
    """
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        if f.name == "out_dir":
            continue
        lines.append(f"{f.name}={getattr(cfg, f.name)!r}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def with_overrides(cfg: TrainConfig, **overrides) -> TrainConfig:
    """Copy the config with some fields replaced (CLI flags, sweeps)."""
    out = replace(cfg, **overrides)
    validate_config(out)
    return out
