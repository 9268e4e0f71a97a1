"""Flat key=value config files for the command-line tools.

One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
skipped.  List-valued fields use commas (``widths = 16,32,64,128,256``) and
optional string fields accept ``none``.  Keys map onto NetworkConfig and
TrainConfig fields; anything else is rejected.
"""

from __future__ import annotations

from dataclasses import replace

from .errors import ConfigError, FileFormatError
from .network import NetworkConfig
from .train import TrainConfig

__all__ = ["parse_kv_file", "configs_from_mapping", "load_configs"]


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok.strip()) for tok in text.split(","))


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok.strip()) for tok in text.split(","))


def _parse_opt_str(text: str) -> str | None:
    return None if text.lower() == "none" else text


_NETWORK_FIELDS = {
    "stages": int,
    "widths": _parse_ints,
    "in_channels": int,
    "patch_sizes": _parse_ints,
    "dilations": _parse_ints,
    "dropout": float,
    "use_ppa": _parse_bool,
    "use_dasi": _parse_bool,
    "use_mdcr": _parse_bool,
    "loss_weights": _parse_floats,
}

_TRAIN_FIELDS = {
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "seed": int,
    "data_dir": _parse_opt_str,
    "synthetic_n": int,
    "synthetic_seed": int,
    "image_size": int,
    "threshold": float,
    "checkpoint_path": _parse_opt_str,
    "resume_from": _parse_opt_str,
}


def parse_kv_file(path: str) -> dict[str, str]:
    """Read raw key -> value strings, rejecting malformed or duplicate keys."""
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise FileFormatError(f"{path}:{lineno}: empty key or value")
            if key in pairs:
                raise FileFormatError(f"{path}:{lineno}: duplicate key '{key}'")
            pairs[key] = value
    return pairs


def configs_from_mapping(pairs: dict[str, str]) -> tuple[NetworkConfig, TrainConfig]:
    """Convert raw string pairs into validated network and train configs."""
    net_kwargs: dict = {}
    train_kwargs: dict = {}
    for key, value in pairs.items():
        if key in _NETWORK_FIELDS:
            parser, sink = _NETWORK_FIELDS[key], net_kwargs
        elif key in _TRAIN_FIELDS:
            parser, sink = _TRAIN_FIELDS[key], train_kwargs
        else:
            raise ConfigError(f"unknown config key '{key}'")
        try:
            sink[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': {exc}") from exc
    net_config = NetworkConfig(**net_kwargs)
    train_config = TrainConfig(**train_kwargs)
    net_config.validate()
    train_config.validate()
    return net_config, train_config


def load_configs(path: str, seed: int | None = None) -> tuple[NetworkConfig, TrainConfig]:
    """Parse a config file, optionally overriding the training seed."""
    net_config, train_config = configs_from_mapping(parse_kv_file(path))
    if seed is not None:
        train_config = replace(train_config, seed=seed)
    return net_config, train_config
