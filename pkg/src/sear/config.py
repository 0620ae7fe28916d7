"""Run configuration: JSON files, dotted-path overrides, strict validation.

Defaults are the full-scale settings: 1M steps, UTD 1, batch 256, discount
0.99, Polyak rate 0.05, AdamW lr 3e-4 / decay 1e-4 / betas 0.9, 0.999, and
512-wide networks. Desk-scale runs shrink the networks and
budgets through ``configs/*.json`` or overrides.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class EnvConfig:
    name: str = "point_mass"
    params: dict = field(default_factory=dict)


@dataclass
class NetworkConfig:
    actor_hidden: int = 512
    actor_blocks: int = 1
    critic_width: int = 512
    critic_heads: int = 16
    critic_blocks: int = 2
    critic_ffn: int = 1024
    mlp_critic_hidden: int = 512
    mlp_critic_blocks: int = 2
    log_std_init: float = 0.0
    # Distributional-head settings are kept for the record; the critic head is scalar.
    num_bins: int = 101
    value_range: list = field(default_factory=lambda: [0.0, 1000.0])


@dataclass
class SwitchConfig:
    multi_horizon: bool = True
    random_replanning: bool = True
    transformer_critic: bool = True


@dataclass
class RunConfig:
    name: str = "sear"
    env: EnvConfig = field(default_factory=EnvConfig)
    chunk_size: int = 10
    receding_horizon: int = 5
    switches: SwitchConfig = field(default_factory=SwitchConfig)
    seeds: list = field(default_factory=lambda: [0])
    total_timesteps: int = 1_000_000
    seed_timesteps: int = 0
    utd: int = 1
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.05
    lr: float = 3e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    target_entropy: typing.Optional[float] = None
    init_alpha: float = 0.1
    buffer_capacity: int = 1_000_000
    network: NetworkConfig = field(default_factory=NetworkConfig)
    eval_every: int = 10_000
    eval_episodes: int = 20
    eval_seed: int = 1_000_000
    # Stop once an evaluation reaches this success rate (None trains the full budget).
    stop_success: typing.Optional[float] = None
    log_wallclock: bool = False
    output_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if self.chunk_size < 1:
            raise ConfigError("chunk_size", "must be >= 1")
        if not 1 <= self.receding_horizon <= self.chunk_size:
            raise ConfigError("receding_horizon", f"must be in [1, chunk_size={self.chunk_size}]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma", "must be in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau", "must be in [0, 1]")
        for name in ("total_timesteps", "batch_size", "buffer_capacity", "eval_every", "eval_episodes", "utd"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.seed_timesteps < 0:
            raise ConfigError("seed_timesteps", "must be >= 0")
        if self.init_alpha <= 0.0:
            raise ConfigError("init_alpha", "must be > 0")
        if not self.seeds:
            raise ConfigError("seeds", "needs at least one seed")
        if self.network.critic_width % self.network.critic_heads:
            raise ConfigError("network.critic_width", "must be divisible by network.critic_heads")
        if self.env.name not in ("point_mass", "chain"):
            raise ConfigError("env.name", f"unknown env {self.env.name!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if tp is typing.Any:
        return value
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {type(value).__name__}")
        return _from_dict(tp, value, path + ".")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return list(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        return dict(value)
    raise ConfigError(path, f"unsupported field type {tp}")


def _from_dict(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{prefix}{f.name}")
    return cls(**kwargs)


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(text, "override must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        keys, value = _parse_override(item) if isinstance(item, str) else item
        node = data
        for depth, key in enumerate(keys[:-1]):
            child = node.get(key)
            if child is None:
                child = node[key] = {}
            if not isinstance(child, dict):
                raise ConfigError(".".join(keys[: depth + 1]), "is not an object")
            node = child
        node[keys[-1]] = value
    return data


def config_from_dict(data: dict, overrides=None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config root must be a JSON object")
    return _from_dict(RunConfig, apply_overrides(data, overrides)).validate()


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, overrides)


def save_config(config: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
