"""Run configuration: one nested structure, strict about what it accepts.

Files and --set overrides may only touch fields that already exist; unknown
keys are an error rather than a silent no-op, since a typo in an experiment
config otherwise costs a training run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class EnvCfg:
    reset_mode: str = "neutral"      # default reset used by serve


@dataclass
class OracleCfg:
    noise_sigma: float = 0.005
    wander_ticks_min: int = 20
    wander_ticks_max: int = 60


@dataclass
class DataCfg:
    w_low: int = 16
    w_high: int = 32
    lang_pairs: int = 1000
    batch_size: int = 32
    motion_fraction: float = 0.15


@dataclass
class ModelCfg:
    hidden: int = 128
    z_dim: int = 16
    plan_dim: int = 8
    emb_dim: int = 8
    beta: float = 0.01
    lr: float = 2e-4
    head: str = "lmp"                # lmp | gcbc
    language: str = "scratch"        # scratch | transfer
    replan_every: int = 16


@dataclass
class TrainCfg:
    steps: int = 4000
    seed: int = 0
    log_every: int = 50


@dataclass
class EvalCfg:
    timeout_ticks: int = 240
    advance_delay: int = 15
    seeds: list = field(default_factory=lambda: [0, 1, 2])


@dataclass
class ServeCfg:
    host: str = "127.0.0.1"
    port: int = 8732
    frame_hz: int = 20


@dataclass
class Config:
    env: EnvCfg = field(default_factory=EnvCfg)
    oracle: OracleCfg = field(default_factory=OracleCfg)
    data: DataCfg = field(default_factory=DataCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    serve: ServeCfg = field(default_factory=ServeCfg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "Config":
        if self.env.reset_mode not in ("neutral", "correlated"):
            raise ConfigError(f"env.reset_mode {self.env.reset_mode!r}")
        if self.oracle.noise_sigma < 0:
            raise ConfigError("oracle.noise_sigma must be >= 0")
        if not 0 < self.oracle.wander_ticks_min <= self.oracle.wander_ticks_max:
            raise ConfigError("oracle wander tick bounds out of order")
        if not 2 <= self.data.w_low <= self.data.w_high:
            raise ConfigError("data window bounds out of order")
        if self.data.batch_size < 1 or self.data.lang_pairs < 0:
            raise ConfigError("data.batch_size/lang_pairs out of range")
        if not 0 <= self.data.motion_fraction <= 1:
            raise ConfigError("data.motion_fraction outside [0, 1]")
        if self.model.head not in ("lmp", "gcbc"):
            raise ConfigError(f"model.head {self.model.head!r}")
        if self.model.language not in ("scratch", "transfer"):
            raise ConfigError(f"model.language {self.model.language!r}")
        if min(self.model.hidden, self.model.z_dim, self.model.plan_dim,
               self.model.emb_dim, self.model.replan_every) < 1:
            raise ConfigError("model widths must be positive")
        if self.model.lr <= 0 or self.model.beta < 0:
            raise ConfigError("model.lr/beta out of range")
        if self.train.steps < 1 or self.train.log_every < 1:
            raise ConfigError("train.steps/log_every must be positive")
        if self.eval.timeout_ticks < 1 or self.eval.advance_delay < 0:
            raise ConfigError("eval timing out of range")
        if not self.eval.seeds:
            raise ConfigError("eval.seeds is empty")
        if not 0 < self.serve.port < 65536 or self.serve.frame_hz < 1:
            raise ConfigError("serve.port/frame_hz out of range")
        return self


def _merge(cfg, data: dict, prefix: str):
    known = {f.name: f for f in fields(cfg)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}{key!r}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{key} must be a mapping")
            _merge(current, value, f"{prefix}{key}.")
        else:
            setattr(cfg, key, _coerce(f"{prefix}{key}", current, value))


def _coerce(path: str, current, value):
    want = type(current)
    if want is list:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v != ""]
        if not isinstance(value, list):
            raise ConfigError(f"{path} expects a list")
        return [int(v) for v in value]
    if want is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1"):
            return True
        if str(value).lower() in ("false", "0"):
            return False
        raise ConfigError(f"{path} expects a bool")
    try:
        if want is int:
            out = int(str(value))
        elif want is float:
            out = float(str(value))
        elif want is str:
            if not isinstance(value, str):
                raise ValueError
            out = value
        else:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{path} expects {want.__name__}, "
                          f"got {value!r}") from None
    return out


def _set_override(cfg: Config, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    dotted, value = assignment.split("=", 1)
    node = {}
    leaf = node
    parts = dotted.split(".")
    for p in parts[:-1]:
        leaf[p] = {}
        leaf = leaf[p]
    leaf[parts[-1]] = value
    _merge(cfg, node, "")


def load_config(path=None, overrides=()) -> Config:
    cfg = Config()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge(cfg, data, "")
    for assignment in overrides:
        _set_override(cfg, assignment)
    return cfg.validate()
