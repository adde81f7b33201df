"""Experiment configuration: YAML file < PEGRL_* environment variables < CLI flags."""
from __future__ import annotations

import dataclasses
import os
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..control import ParamRanges
from ..env import EpisodeConfig
from ..nn.nets import NetConfig
from ..sac.agent import SacConfig
from ..sim import PegHoleScene, RandomizationRanges, SimConfig, scene_from_dict, scene_to_dict

ENV_PREFIX = "PEGRL_"
VARIANTS = ("full", "mlp-policy", "no-prev-action", "no-Fg-input")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 20_000
    eval_every: int = 2_000
    eval_episodes: int = 20
    update_every: int = 1
    workers: int = 1
    stop_at_success: Optional[float] = None
    eval_at_start: bool = False
    eval_seed: int = 12_345
    variant: str = "full"
    seeds: tuple = (0,)
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.eval_every <= 0 or self.eval_episodes <= 0:
            raise ConfigError("eval cadence and episode count must be positive")
        if self.update_every <= 0 or self.workers <= 0:
            raise ConfigError("update_every and workers must be positive")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads 1e3 and 1.5e-4 as floats (YAML 1.1 wants 1.0e+3)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


def read_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def default_scene() -> dict:
    return scene_to_dict(PegHoleScene(planar=True))


@dataclass
class ExperimentConfig:
    scene_file: Optional[str] = None
    scene: dict = field(default_factory=dict)  # overrides on top of scene_file
    ranges: RandomizationRanges = field(default_factory=RandomizationRanges)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    params: ParamRanges = field(default_factory=ParamRanges)
    net: NetConfig = field(default_factory=NetConfig)
    sim: Optional[SimConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        base = default_scene()
        if self.scene_file is not None:
            path = Path(self.scene_file)
            if not path.is_file():
                raise ConfigError(f"scene file not found: {path}")
            base.update(read_yaml(path.read_text()) or {})
        base.update(self.scene)
        self.scene = base
        try:
            scene = scene_from_dict(self.scene)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad scene: {exc}") from exc
        self.scene = scene_to_dict(scene)
        if self.sim is None:
            self.sim = SimConfig.planar() if scene.planar else SimConfig()

    def build_scene(self) -> PegHoleScene:
        return scene_from_dict(self.scene)


# -- dict <-> dataclass ------------------------------------------------------

def to_dict(obj) -> dict:
    """Plain-data view with every default materialized."""
    out = {}
    for f in dataclasses.fields(obj):
        if not f.init:
            continue
        v = getattr(obj, f.name)
        out[f.name] = _plain(v)
    return out


def _plain(v):
    if dataclasses.is_dataclass(v):
        return to_dict(v)
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if hasattr(v, "item"):
        return v.item()
    return v


def _dataclass_type(tp):
    if dataclasses.is_dataclass(tp):
        return tp
    for arg in typing.get_args(tp):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def from_dict(cls, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _dataclass_type(hints[name])
        path = f"{where}.{name}" if where else name
        if sub is not None and value is not None:
            kwargs[name] = from_dict(sub, value, path)
        else:
            kwargs[name] = _coerce(value, known[name], hints[name])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


def _coerce(value, f, tp):
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if value is not None and (tp is float or typing.Optional[float] == tp) and isinstance(value, int):
        return float(value)
    return value


def _set_path(d: dict, path: list, value):
    for key in path[:-1]:
        d = d.setdefault(key, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {key} is not a section")
    d[path[-1]] = value


def env_overrides(environ=None) -> dict:
    """PEGRL_SAC__BATCH_SIZE=128 -> {'sac': {'batch_size': 128}}; values parsed as YAML.
    Variables without a SECTION__KEY part are not config overrides and are skipped."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX) or "__" not in key:
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        _set_path(out, path, read_yaml(raw))
    return out


def parse_assignments(items) -> dict:
    """CLI --set section.key=value pairs."""
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(out, key.strip().split("."), read_yaml(raw))
    return out


def deep_merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "scene":
            out[k] = deep_merge(out[k], v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: Optional[dict] = None, environ=None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        data = read_yaml(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        scene_file = data.get("scene_file")
        if scene_file is not None and not Path(scene_file).is_absolute():
            data["scene_file"] = str((path.parent / scene_file).resolve())
    data = deep_merge(data, env_overrides(environ))
    data = deep_merge(data, overrides or {})
    return from_dict(ExperimentConfig, data)


def dump_config(cfg: ExperimentConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))


def replace_section(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Copy with whole sections or nested fields swapped, re-validated."""
    return from_dict(ExperimentConfig, deep_merge(to_dict(cfg), _plain(sections)))
