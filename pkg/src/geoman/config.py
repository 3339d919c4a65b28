"""Run configuration: one JSON document with data / codec / i2g / v2g / pipeline / eval sections."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .codec import CodecConfig
from .data import DataConfig
from .errors import ConfigError, GeomanError
from .evalsuite.report import ARMS, EvalProtocol
from .i2g import I2GConfig
from .latents import ScheduleConfig
from .pipeline import PipelineConfig
from .v2g import V2GConfig

SEED_ENV = "GEOMAN_SEED"


@dataclass
class EvalConfig:
    arms: tuple = ARMS
    # the CLI refuses to score the absolute arm silently without ground-truth roots
    require_roots: bool = True
    plots: bool = True
    # also score independent per-frame I2G and the naive baseline in run-all
    baselines: bool = True

    def __post_init__(self):
        self.arms = tuple(self.arms)
        EvalProtocol(self.arms, self.require_roots)

    def protocol(self) -> EvalProtocol:
        return EvalProtocol(self.arms, self.require_roots)


# schema: section -> (dataclass, field names excluded from the document)
SECTIONS = {
    "data": (DataConfig, ()),
    "codec": (CodecConfig, ()),
    "i2g": (I2GConfig, ("modality",)),
    "v2g": (V2GConfig, ()),
    "pipeline": (PipelineConfig, ()),
    "eval": (EvalConfig, ()),
}
NESTED = {"schedule": ScheduleConfig}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    i2g: I2GConfig = field(default_factory=I2GConfig)
    v2g: V2GConfig = field(default_factory=V2GConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        out = {}
        for name, (cls, skip) in SECTIONS.items():
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items() if k not in skip}
        return out

    def i2g_for(self, modality: str) -> I2GConfig:
        return dataclasses.replace(self.i2g, modality=modality)


def _check_type(path: str, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")


def _build(cls, doc, path: str, skip=()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    template = cls()
    names = [f.name for f in dataclasses.fields(cls) if f.name not in skip]
    for key in doc:
        if key not in names:
            raise ConfigError(f"unknown key {path}.{key}")
    kwargs = {}
    for key, value in doc.items():
        default = getattr(template, key)
        if key in NESTED:
            value = _build(NESTED[key], value, f"{path}.{key}")
        else:
            _check_type(f"{path}.{key}", default, value)
            if isinstance(default, float):
                value = float(value)
        kwargs[key] = value
    try:
        return dataclasses.replace(template, **kwargs)
    except GeomanError as e:
        raise ConfigError(f"{path}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def from_dict(doc: dict, env: dict | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(f"unknown key {key}")
    cfg = RunConfig(**{name: _build(cls, doc.get(name, {}), name, skip) for name, (cls, skip) in SECTIONS.items()})
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        cfg = apply_seed(cfg, seed)
    return cfg


def apply_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Override every seed in the document with ``seed``."""
    return RunConfig(
        dataclasses.replace(cfg.data, seed=seed),
        dataclasses.replace(cfg.codec, seed=seed),
        dataclasses.replace(cfg.i2g, seed=seed),
        dataclasses.replace(cfg.v2g, seed=seed),
        dataclasses.replace(cfg.pipeline, seed=seed),
        cfg.eval,
    )


def load_config(path=None) -> RunConfig:
    if path is None:
        return from_dict({})
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(doc)


def dump_config(cfg: RunConfig, path) -> None:
    """Echo the resolved config (defaults applied)."""
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
