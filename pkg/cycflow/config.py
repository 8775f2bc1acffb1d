"""Run configuration: config.toml sections, overrides and the resolved record."""
from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from cycflow.errors import ConfigError, StorageError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SECTIONS = ("data", "model", "train", "eval", "sample")
RESOLVED_NAME = "resolved_config.json"


def section_from_dict(cls, values: dict, section: str):
    """Build a config dataclass, rejecting unknown keys and turning lists into tuples where defaults are tuples."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")
    cleaned = {}
    for key, value in values.items():
        default = known[key].default
        if default is MISSING and known[key].default_factory is not MISSING:
            default = known[key].default_factory()
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        cleaned[key] = value
    try:
        return cls(**cleaned)
    except TypeError as exc:
        raise ConfigError(f"invalid [{section}] values: {exc}") from None


def section_to_dict(obj) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return {k: plain(v) for k, v in asdict(obj).items()}


def parse_override(text: str) -> tuple[str, str, object]:
    """`section.key=value` with the value read as a TOML literal, falling back to a bare string."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    lhs, raw = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"override {text!r} names unknown section {section!r}; expected one of {SECTIONS}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key.strip(), value


def _section_classes() -> dict:
    from cycflow.data import DataConfig
    from cycflow.evaluate import EvalConfig
    from cycflow.inference import SampleConfig
    from cycflow.model import ModelConfig
    from cycflow.train import TrainConfig

    return {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "eval": EvalConfig, "sample": SampleConfig}


@dataclass(frozen=True)
class RunConfig:
    data: object
    model: object
    train: object
    eval: object
    sample: object
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {name: section_to_dict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def with_section(self, section: str, **changes) -> "RunConfig":
        return replace(self, **{section: replace(getattr(self, section), **changes)})


def load_run_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    classes = _section_classes()
    raw: dict = {name: {} for name in SECTIONS}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise StorageError("config file not found", path)
        try:
            with path.open("rb") as f:
                loaded = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        extra = sorted(set(loaded) - set(SECTIONS))
        if extra:
            raise ConfigError(f"unknown sections in {path}: {extra}")
        for name in SECTIONS:
            raw[name].update(loaded.get(name, {}))

    for text in overrides:
        section, key, value = parse_override(text)
        raw[section][key] = value

    built = {}
    for name in SECTIONS:
        cls = classes[name]
        if name == "model":
            try:
                built[name] = cls.from_dict(dict(raw[name]))
            except Exception as exc:
                raise ConfigError(f"invalid [model]: {exc}") from None
        else:
            built[name] = section_from_dict(cls, raw[name], name)
    return RunConfig(**built, source=str(path) if path is not None else None)


def write_resolved(config: RunConfig, out_dir: str | Path, extra: dict | None = None) -> Path:
    from utils.io import write_json

    out = Path(out_dir) / RESOLVED_NAME
    payload = config.to_dict()
    if extra:
        payload["run"] = extra
    write_json(out, payload)
    logger.debug("resolved config %s written to %s", config.config_hash()[:12], out)
    return out
