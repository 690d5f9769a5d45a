"""Plain-text key=value run configuration.

One flat namespace covering every architecture (FusionConfig) and
training (TrainConfig) field; unknown keys are rejected, absent keys take
their defaults, and serialization round-trips.
"""

from __future__ import annotations

from dataclasses import fields

from .errors import InputError
from .generator import FusionConfig
from .training import TrainConfig

_BOOL_TRUE = ("true", "1", "yes", "on")
_BOOL_FALSE = ("false", "0", "no", "off")


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


_FUSION_FIELDS = _field_types(FusionConfig)
_TRAIN_FIELDS = _field_types(TrainConfig)


def _convert(key: str, raw: str, type_name: str):
    raw = raw.strip()
    if type_name == "bool":
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise InputError(f"config key {key!r}: expected a boolean, got {raw!r}")
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError:
        raise InputError(f"config key {key!r}: expected {type_name}, got {raw!r}") from None
    return raw


def parse_run_config(text: str) -> tuple[FusionConfig, TrainConfig]:
    fusion_kwargs, train_kwargs = {}, {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise InputError(f"config line {ln} is not key=value: {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in _FUSION_FIELDS:
            fusion_kwargs[key] = _convert(key, raw, _FUSION_FIELDS[key])
        elif key in _TRAIN_FIELDS:
            train_kwargs[key] = _convert(key, raw, _TRAIN_FIELDS[key])
        else:
            raise InputError(f"unknown config key {key!r} on line {ln}")
    fusion = FusionConfig(**fusion_kwargs)
    # use_gan lives in both configs; keep them consistent
    if "use_gan" in fusion_kwargs and "use_gan" not in train_kwargs:
        train_kwargs["use_gan"] = fusion_kwargs["use_gan"]
    train = TrainConfig(**train_kwargs)
    return fusion, train


def serialize_run_config(fusion: FusionConfig, train: TrainConfig) -> str:
    lines = []
    for f in fields(FusionConfig):
        lines.append(f"{f.name}={getattr(fusion, f.name)}")
    for f in fields(TrainConfig):
        if f.name == "use_gan":
            continue  # already serialized from FusionConfig
        lines.append(f"{f.name}={getattr(train, f.name)}")
    return "\n".join(lines) + "\n"


def load_run_config(path: str) -> tuple[FusionConfig, TrainConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())
