"""Flat ``key=value`` run configuration with dotted keys for nested groups.

Example::

    channels = 16
    epochs = 25
    hfl.beta = 0.7
    dataset = data/bsds
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .losses import HflConfig
from .model import BackboneConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


# key -> (group, attribute, parser)
_SCHEMA: dict[str, tuple[str, str, object]] = {
    "channels": ("model", "base_channels", int),
    "blocks_per_stage": ("model", "blocks_per_stage", int),
    "se_reduction": ("model", "se_reduction", int),
    "lr0": ("train", "lr0", float),
    "epochs": ("train", "epochs", int),
    "lr_decay_factor": ("train", "lr_decay_factor", float),
    "lr_decay_every": ("train", "lr_decay_every", int),
    "weight_decay": ("train", "weight_decay", float),
    "batch": ("train", "batch", int),
    "patch": ("train", "patch", int),
    "seed": ("train", "seed", int),
    "loss": ("train", "loss", str),
    "steps_per_epoch": ("train", "steps_per_epoch", _parse_optional_int),
    "decoupled_weight_decay": ("train", "decoupled_weight_decay", _parse_bool),
    "probe_images": ("train", "probe_images", int),
    "probe_tolerance": ("train", "probe_tolerance", float),
    "divergence_threshold": ("train", "divergence_threshold", float),
    "hfl.lambda": ("hfl", "lam", float),
    "hfl.beta": ("hfl", "beta", float),
    "hfl.gamma": ("hfl", "gamma", float),
    "hfl.omega": ("hfl", "omega", float),
    "hfl.delta": ("hfl", "delta", float),
    "hfl.c_stab": ("hfl", "c_stab", float),
    "hfl.square_of_sum": ("hfl", "square_of_sum", _parse_bool),
    "dataset": ("run", "dataset", str),
    "output": ("run", "output", str),
    "soft_labels": ("run", "soft_labels", _parse_bool),
    "augment": ("run", "augment", _parse_bool),
    "augment.fine_step": ("run", "fine_step", float),
    "augment.max_per_base": ("run", "max_per_base", _parse_optional_int),
}

KNOWN_KEYS = tuple(_SCHEMA)


@dataclass
class RunConfig:
    model: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    output: str | None = None
    soft_labels: bool = False
    augment: bool = False
    fine_step: float = 15.0
    max_per_base: int | None = None


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text, str(path))


def build_config(values: dict[str, str]) -> RunConfig:
    """Validate raw key=value strings into a :class:`RunConfig`."""
    groups: dict[str, dict] = {"model": {}, "train": {}, "hfl": {}, "run": {}}
    for key, raw in values.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        group, attr, parser = _SCHEMA[key]
        try:
            groups[group][attr] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: invalid value {raw!r} ({exc})") from None
    try:
        hfl = HflConfig(**groups["hfl"])
        model = BackboneConfig(**groups["model"])
        train = TrainConfig(hfl=hfl, **groups["train"])
        run = RunConfig(model=model, train=train, **groups["run"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if run.fine_step <= 0 or run.fine_step > 360:
        raise ConfigError(f"augment.fine_step must lie in (0, 360], got {run.fine_step}")
    if run.max_per_base is not None and run.max_per_base < 1:
        raise ConfigError("augment.max_per_base must be >= 1")
    return run


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (command-line flags) on top."""
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = value
    return build_config(values)


def to_text(cfg: RunConfig) -> str:
    """Serialize back to key=value lines (round-trips through :func:`load_config`)."""
    lines = []
    for key, (group, attr, _) in _SCHEMA.items():
        obj = {"model": cfg.model, "train": cfg.train, "hfl": cfg.train.hfl, "run": cfg}[group]
        value = getattr(obj, attr)
        if value is None:
            if group == "run" and attr in ("dataset", "output"):
                continue
            value = "none"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "KNOWN_KEYS", "RunConfig", "build_config", "load_config", "parse_text", "to_text"]
