"""Run configuration: an INI-style ``key = value`` file with sections.

Every key has a typed default, so an empty file (or none at all) is valid.
Command-line flags override file values; the effective configuration is
hashed so that every CSV can carry a ``# config-hash=...`` provenance line.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable

from .dufnet import NetConfig
from .spadsim import OpticalParams
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file or value."""


def _opt(cast: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else cast(text)
    return parse


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "scene": {
        "n_scenes": (int, 8),
        "n_frames": (int, 30),
        "fps": (float, 100.0),
        "shift_min": (float, 0.1),
        "shift_max": (float, 1.0),
        "seed": (int, 0),
    },
    "optics": {
        "signal_scale": (float, 1000.0),
        "n_bins": (int, 16),
        "d_max": (float, 35.0),
        "pulse_sigma": (float, 0.5),
        "snr": (float, 1.3),
        "seed": (int, 0),
    },
    "dataset": {
        "snr_min": (float, 0.5),
        "snr_max": (float, 8.0),
        "n_val": (int, 1),
        "n_test": (int, 1),
        "seed": (int, 0),
    },
    "network": {
        "temporal_radius": (int, 2),
        "upscale": (int, 4),
        "base_channels": (int, 16),
        "filter_size": (int, 5),
        "n_blocks": (_opt(int), None),
        "seed": (int, 1),
    },
    "training": {
        "epochs": (int, 30),
        "batch_size": (int, 4),
        "lr": (float, 1e-3),
        "lr_decay_factor": (float, 0.1),
        "lr_decay_every": (int, 10),
        "patience": (int, 5),
        "huber_delta": (float, 0.01),
        "patch_size": (_opt(int), 16),
        "steps_per_epoch": (_opt(int), None),
        "seed": (int, 0),
    },
    "metrics": {
        "tau": (float, 1e-6),
    },
    "study": {
        "n_train": (int, 24),
        "n_val": (int, 2),
        "n_test": (int, 3),
        "n_frames": (int, 30),
        "radii": (_ints, (0, 1, 2, 3, 4)),
        "strides": (_ints, (1, 2, 4, 5, 10, 20, 40, 100)),
        "fps_frames": (int, 9),
        "snrs": (_floats, (0.25, 0.34, 0.5, 0.75, 1.0, 10.0)),
        "seed": (int, 0),
    },
    "output": {
        "pgm": (_bool, False),
    },
}


@dataclass
class Config:
    values: dict[str, dict[str, Any]] = field(default_factory=lambda: {
        s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def set(self, section: str, key: str, value: Any) -> None:
        """Set a key; strings are parsed with the key's type."""
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        if isinstance(value, str):
            try:
                value = SCHEMA[section][key][0](value)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
        self.values[section][key] = value

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, default=list)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def provenance(self) -> str:
        return f"config-hash={self.hash()}"

    # -- typed views ---------------------------------------------------------

    def optical_params(self) -> OpticalParams:
        o = self["optics"]
        try:
            return OpticalParams(o["signal_scale"], 0.0, o["n_bins"], o["d_max"],
                                 o["pulse_sigma"], o["seed"])
        except ValueError as exc:
            raise ConfigError(f"optics: {exc}") from None

    def net_config(self) -> NetConfig:
        n = self["network"]
        try:
            return NetConfig(n["temporal_radius"], n["upscale"], n["base_channels"],
                             n["filter_size"], n["n_blocks"])
        except ValueError as exc:
            raise ConfigError(f"network: {exc}") from None

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self["training"])
        except ValueError as exc:
            raise ConfigError(f"training: {exc}") from None


def parse_config(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = Config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            cfg.set(section, key, value)
    return cfg


def load_config(path=None, overrides: dict[str, Any] | None = None) -> Config:
    """Read ``path`` (if given) and apply ``{"section.key": value}`` overrides.

    A missing file raises :class:`OSError`, not :class:`ConfigError`.
    """
    if path is None:
        cfg = Config()
    else:
        with open(path) as fh:
            cfg = parse_config(fh.read())
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        cfg.set(section, key, value)
    return cfg


def format_config(cfg: Config) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in cfg.values.items():
        parser[section] = {k: ("none" if v is None else
                               ",".join(map(str, v)) if isinstance(v, tuple) else str(v))
                           for k, v in keys.items()}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    return "\n".join(lines)
