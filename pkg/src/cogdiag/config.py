"""Flat ``key = value`` run configuration files.

The format is deliberately dumb: one assignment per line, ``#`` starts
a comment, blank lines ignored.  Parsing collects every problem before
reporting, so a bad file surfaces all its errors at once instead of one
per run attempt.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .diagnostics import VARIANTS
from .latent import DropoutConfig
from .training import SIGN_MODES, TrainConfig


class ConfigError(ValueError):
    """One or more invalid configuration entries; message lists them all."""


@dataclass
class RunConfig:
    """Everything a training run needs, as read from one config file."""

    logs: str = ""
    qmatrix: str = ""
    variant: str = "ncd"
    output_dir: str = "run"
    min_logs: int = 15
    bins: int = 10
    irt_scale: float = 1.702
    mlp_hidden1: int = 512
    mlp_hidden2: int = 256
    gamma: float = 1e-4
    beta: float = 0.1
    learning_rate: float = 0.002
    batch_size: int = 32
    max_epochs: int = 100
    pretrain_epochs: int = -1  # -1 means "same as max_epochs"
    patience: int = 10
    seed: int = 0
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    preserve_order: bool = False
    pair_count: int = -1  # -1 means "same as batch_size"
    calibration_sign: str = "consistent"
    dropout_alpha: float = 0.5
    dropout_keep: float = 0.5
    dropout_enabled: bool = True
    kl_dedup: bool = False
    lazy_adam: bool = True


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


_PARSERS = {int: int, float: float, str: str, bool: _parse_bool}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    errors: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        parser = _PARSERS[type(getattr(defaults, key))]
        try:
            values[key] = parser(raw)
        except ValueError:
            errors.append(
                f"line {lineno}: cannot parse {key!r} value {raw!r} as "
                f"{type(getattr(defaults, key)).__name__}"
            )

    cfg = RunConfig(**values) if not errors else defaults
    errors.extend(validate_run_config(cfg, values_known=not errors))
    if errors:
        raise ConfigError(f"{source}: " + "; ".join(errors))
    return cfg


def validate_run_config(cfg: RunConfig, values_known: bool = True) -> list[str]:
    if not values_known:
        return []
    errors = []
    if not cfg.logs:
        errors.append("'logs' (response log CSV path) is required")
    elif not Path(cfg.logs).exists():
        errors.append(f"logs file {cfg.logs!r} does not exist")
    if not cfg.qmatrix:
        errors.append("'qmatrix' (Q-matrix CSV path) is required")
    elif not Path(cfg.qmatrix).exists():
        errors.append(f"qmatrix file {cfg.qmatrix!r} does not exist")
    if cfg.variant not in VARIANTS:
        errors.append(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.min_logs < 1:
        errors.append(f"min_logs must be at least 1, got {cfg.min_logs}")
    if cfg.bins < 1:
        errors.append(f"bins must be at least 1, got {cfg.bins}")
    if cfg.calibration_sign not in SIGN_MODES:
        errors.append(f"calibration_sign must be one of {SIGN_MODES}")
    for name, lo in (("gamma", 0.0), ("beta", 0.0)):
        if getattr(cfg, name) < lo:
            errors.append(f"{name} must be >= {lo}")
    if cfg.learning_rate <= 0:
        errors.append("learning_rate must be positive")
    if cfg.batch_size < 1:
        errors.append("batch_size must be positive")
    if cfg.max_epochs < 0:
        errors.append("max_epochs must be nonnegative")
    if cfg.patience < 1:
        errors.append("patience must be at least 1")
    if cfg.seed < 0:
        errors.append("seed must be nonnegative")
    if not (0 < cfg.train_fraction < 1) or not (0 < cfg.val_fraction < 1):
        errors.append("train_fraction and val_fraction must be in (0, 1)")
    elif cfg.train_fraction + cfg.val_fraction >= 1:
        errors.append("train_fraction + val_fraction must leave a test share")
    if not (cfg.dropout_alpha > 0):
        errors.append("dropout_alpha must be positive")
    if not (0 < cfg.dropout_keep <= 1):
        errors.append("dropout_keep must be in (0, 1]")
    if cfg.mlp_hidden1 < 1 or cfg.mlp_hidden2 < 1:
        errors.append("mlp hidden sizes must be positive")
    if cfg.irt_scale <= 0:
        errors.append("irt_scale must be positive")
    return errors


def parse_config_file(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def train_config_of(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        gamma=cfg.gamma,
        beta=cfg.beta,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        pretrain_epochs=None if cfg.pretrain_epochs < 0 else cfg.pretrain_epochs,
        patience=cfg.patience,
        seed=cfg.seed,
        train_fraction=cfg.train_fraction,
        val_fraction=cfg.val_fraction,
        preserve_order=cfg.preserve_order,
        pair_count=None if cfg.pair_count < 0 else cfg.pair_count,
        calibration_sign=cfg.calibration_sign,
        dropout=DropoutConfig(
            alpha=cfg.dropout_alpha,
            keep_probability=cfg.dropout_keep,
            enabled=cfg.dropout_enabled,
        ),
        kl_dedup=cfg.kl_dedup,
        lazy_adam=cfg.lazy_adam,
    )


def format_config(cfg: RunConfig) -> str:
    """Render a RunConfig back to the flat file format (resolved values)."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
