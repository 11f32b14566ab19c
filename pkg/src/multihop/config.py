"""Run configuration: YAML file sections mirroring the dataclasses, plus
``--dotted.key=value`` overrides applied on top."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .networks import DiscriminatorSpec, GeneratorSpec
from .training import TrainingConfig

SECTIONS = ("training", "generator", "discriminator", "data")
ALIASES = {"hops": "training.h"}


@dataclass
class DataConfig:
    x_dir: str | None = None
    y_dir: str | None = None


@dataclass
class RunConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, doc):
        doc = doc or {}
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                training=TrainingConfig.from_dict(doc.get("training") or {}),
                generator=GeneratorSpec(**(doc.get("generator") or {})),
                discriminator=DiscriminatorSpec(**(doc.get("discriminator") or {})),
                data=DataConfig(**(doc.get("data") or {})),
            )
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from exc


def parse_override(text):
    """``--a.b=value`` or ``a.b=value`` -> (["a", "b"], parsed value)."""
    body = text[2:] if text.startswith("--") else text
    if "=" not in body:
        raise ConfigurationError(f"override {text!r} is not of the form --dotted.key=value")
    key, raw = body.split("=", 1)
    key = ALIASES.get(key, key)
    parts = key.split(".")
    if parts[0] not in SECTIONS:
        if parts[0] in {f.name for f in dataclasses.fields(TrainingConfig)}:
            parts = ["training", *parts]
        else:
            raise ConfigurationError(f"override key {key!r} does not name a config field")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse override value {raw!r}") from exc
    return parts, value


def apply_overrides(doc, overrides):
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in (doc or {}).items()}
    for text in overrides:
        parts, value = parse_override(text)
        node = doc
        for p in parts[:-1]:
            nxt = node.get(p) or {}
            if not isinstance(nxt, dict):
                raise ConfigurationError(f"override {text!r} descends into a scalar")
            node[p] = dict(nxt)
            node = node[p]
        node[parts[-1]] = value
    return doc


def load_run_config(path=None, overrides=()):
    doc = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(apply_overrides(doc, overrides))


def dump_run_config(config: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
