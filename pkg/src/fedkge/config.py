"""Training configuration, mode resolution and the flat ``key=value`` file format."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError
from .kge import SCORERS, LocalTraining
from .relation_graph import STRATEGIES

MODES = ("personalized-ratio", "personalized-embedding", "fedavg", "single", "collective")
ABLATIONS = ("full", "reg_only", "init_only")

_MODE_ALIASES = {
    "pfedegstar": "personalized-ratio",
    "pfedeg*": "personalized-ratio",
    "pfedegplus": "personalized-embedding",
    "pfedeg+": "personalized-embedding",
    "fedeavg": "fedavg",
    "fede": "fedavg",
}

_DEFAULT_STRATEGY = {"personalized-ratio": "ratio", "personalized-embedding": "embedding", "fedavg": "uniform"}


def canonical_mode(name: str) -> str:
    key = name.strip().lower()
    key = _MODE_ALIASES.get(key, key)
    if key not in MODES:
        raise ConfigError(f"unknown mode {name!r}; choose from {', '.join(MODES)}")
    return key


@dataclass
class TrainingConfig:
    mode: str = "personalized-embedding"
    ablation: str = "full"
    scorer: str = "TransE"
    strategy: str | None = None
    fraction: float = 1.0
    local_epochs: int = 3
    batch_size: int = 512
    lr: float = 1e-3
    reg_coef: float = 3e-3
    mix_coef: float = 0.7
    margin: float = 10.0
    adv_temperature: float = 1.0
    num_negatives: int = 256
    dim: int = 128
    max_rounds: int = 100
    patience: int = 5
    eval_every: int | None = None
    seed: int = 0
    corrupt_head: bool = False
    detach_weights: bool = False
    weight_reduce: str = "sum"
    reg_per_epoch: bool = False
    raw_eval: bool = False

    def __post_init__(self):
        self.mode = canonical_mode(self.mode)
        self.validate()

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.strategy is not None and self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must lie in (0, 1]")
        if not 0.0 <= self.mix_coef <= 1.0:
            raise ConfigError("mix_coef must lie in [0, 1]")
        if self.reg_coef < 0:
            raise ConfigError("reg_coef must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        for name in ("batch_size", "num_negatives", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.local_epochs < 0 or self.max_rounds < 0:
            raise ConfigError("local_epochs and max_rounds must be >= 0")
        if self.scorer in ("RotatE", "ComplEx") and self.dim % 2:
            raise ConfigError(f"{self.scorer} needs an even dim")
        if self.weight_reduce not in ("sum", "mean"):
            raise ConfigError("weight_reduce must be 'sum' or 'mean'")

    @property
    def federated(self) -> bool:
        return self.mode in _DEFAULT_STRATEGY

    def resolved(self) -> "TrainingConfig":
        """Copy with mode-implied settings filled in and forced."""
        cfg = dataclasses.replace(self)
        if cfg.eval_every is None:
            cfg.eval_every = 5 if cfg.federated else 10
        if cfg.mode == "fedavg":
            cfg.strategy, cfg.mix_coef, cfg.reg_coef, cfg.ablation = "uniform", 1.0, 0.0, "init_only"
        elif cfg.federated and cfg.strategy is None:
            cfg.strategy = _DEFAULT_STRATEGY[cfg.mode]
        return cfg

    def local_training(self) -> LocalTraining:
        return LocalTraining(
            epochs=self.local_epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            reg_coef=self.reg_coef,
            margin=self.margin,
            adv_temperature=self.adv_temperature,
            num_negatives=self.num_negatives,
            corrupt_head=self.corrupt_head,
            detach_weights=self.detach_weights,
            init_from_supplement=self.ablation in ("full", "init_only"),
            regularize=self.ablation in ("full", "reg_only"),
            reg_per_epoch=self.reg_per_epoch,
        )


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    out: str | None = None
    dump_weights: bool = False
    log_wallclock: bool = False
    training: TrainingConfig = field(default_factory=TrainingConfig)


_EXPERIMENT_KEYS = ("dataset", "out", "dump_weights", "log_wallclock")


def _coerce(name, typ, raw: str):
    text = raw.strip()
    optional = "None" in str(typ)
    if optional and text.lower() in ("", "auto", "none"):
        return None
    base = str(typ).replace(" | None", "")
    try:
        if "bool" in base:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in base:
            return int(text)
        if "float" in base:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def parse_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply string ``key=value`` pairs on top of ``base``; unknown keys are rejected."""
    base = base or ExperimentConfig()
    hints = get_type_hints(TrainingConfig)
    exp_hints = get_type_hints(ExperimentConfig)
    train_vals = dataclasses.asdict(base.training)
    exp_vals = {k: getattr(base, k) for k in _EXPERIMENT_KEYS}
    for key, raw in pairs.items():
        if key in hints:
            train_vals[key] = _coerce(key, hints[key], raw)
        elif key in _EXPERIMENT_KEYS:
            exp_vals[key] = _coerce(key, exp_hints[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ExperimentConfig(**exp_vals, training=TrainingConfig(**train_vals))


def read_pairs(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    pairs = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def training_lines(cfg: TrainingConfig) -> list[str]:
    return [f"{f.name}={_fmt(getattr(cfg, f.name))}" for f in fields(cfg)]


def config_hash(cfg: TrainingConfig) -> str:
    return hashlib.sha256("\n".join(training_lines(cfg)).encode()).hexdigest()[:16]


def format_experiment(exp: ExperimentConfig) -> str:
    lines = [f"{k}={_fmt(getattr(exp, k))}" for k in _EXPERIMENT_KEYS]
    lines += training_lines(exp.training)
    return "\n".join(lines) + "\n"
