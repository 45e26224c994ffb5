"""Plain-text ``key=value`` configuration files.

Keys are ``model.<field>`` or ``train.<field>``; tuples are comma separated.
Blank lines and ``#`` comments are ignored; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Union

from ..config import Config, ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {"model": ModelConfig, "train": TrainConfig}


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, tp, key: str):
    try:
        origin = typing.get_origin(tp)
        if origin is tuple:
            inner = typing.get_args(tp)[0]
            return tuple(_parse(t.strip(), inner, key) for t in text.split(",") if t.strip())
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def serialize_config(config: Config) -> str:
    lines = []
    for section, obj in (("model", config.model), ("train", config.train)):
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: Config = None) -> Config:
    config = base or Config()
    values = {"model": {}, "train": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in _field_types(_SECTIONS[section]):
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[section][name] = _parse(value, _field_types(_SECTIONS[section])[name], key)
    model = dataclasses.replace(config.model, **values["model"])
    train = dataclasses.replace(config.train, **values["train"])
    return Config(model, train)


def load_config(path: Union[str, Path]) -> Config:
    return parse_config(Path(path).read_text())


def save_config(config: Config, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize_config(config))
