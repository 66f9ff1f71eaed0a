"""Experiment configuration: nested dataclasses, strict JSON loading, dot-path overrides."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import EncodingKind
from .environment import TASKS, TaskConfig
from .errors import ConfigError
from .llm_client import LlmConfig
from .rl import PPOConfig

PROVIDERS = ("none", "neutral", "oracle", "noisy", "replay", "llm")
EVAL_SEED_BASE_MIN = 2 ** 30  # training instance seeds are drawn below this


@dataclass
class TaskSettings:
    kind: str = "GoToObj"
    room_size: int = 6
    max_steps: int | None = None
    reward_decay: float = 0.9
    opendoor_success: str = "open"

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ConfigError(f"unknown task {self.kind!r}; expected one of {TASKS}", "task.kind")
        self.env_config()

    def env_config(self) -> TaskConfig:
        return TaskConfig(room_size=self.room_size, max_steps=self.max_steps,
                          reward_decay=self.reward_decay, opendoor_success=self.opendoor_success)


@dataclass
class HintSettings:
    provider: str = "none"
    k: int = 5
    p: int = 5
    epsilon: float = 0.0
    encoding: str = "ascii_grid"
    replay_path: str | None = None
    llm: LlmConfig = field(default_factory=LlmConfig)

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise ConfigError(f"unknown provider {self.provider!r}; expected one of {PROVIDERS}",
                              "hints.provider")
        if self.k < 1:
            raise ConfigError("k must be >= 1", "hints.k")
        if self.p < 0:
            raise ConfigError("p must be >= 0", "hints.p")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]", "hints.epsilon")
        try:
            EncodingKind(self.encoding)
        except ValueError:
            raise ConfigError(f"unknown encoding {self.encoding!r}", "hints.encoding") from None
        if self.provider == "replay" and not self.replay_path:
            raise ConfigError("replay provider needs replay_path", "hints.replay_path")


@dataclass
class ExperimentConfig:
    name: str = "run"
    task: TaskSettings = field(default_factory=TaskSettings)
    hints: HintSettings = field(default_factory=HintSettings)
    text: bool = False
    ppo: PPOConfig = field(default_factory=PPOConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    eval_episodes: int = 200
    eval_seed_base: int = 2 ** 31
    out_dir: str = "runs"
    metric_interval: int = 10_000
    win_window: int = 100
    stop_win_rate: float | None = None
    record_trace: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty", "seeds")
        if self.eval_seed_base < EVAL_SEED_BASE_MIN:
            raise ConfigError(f"evaluation seeds must start at or above {EVAL_SEED_BASE_MIN} "
                              "to stay disjoint from training seeds", "eval_seed_base")
        if self.eval_episodes < 0:
            raise ConfigError("eval_episodes must be >= 0", "eval_episodes")
        if self.metric_interval < 1:
            raise ConfigError("metric_interval must be >= 1", "metric_interval")
        if self.win_window < 1:
            raise ConfigError("win_window must be >= 1", "win_window")
        if self.stop_win_rate is not None and not 0.0 < self.stop_win_rate <= 1.0:
            raise ConfigError("stop_win_rate must lie in (0, 1]", "stop_win_rate")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path or None)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError("unknown key", key_path)
        ftype = hints[key]
        if dataclasses.is_dataclass(ftype):
            value = _build(ftype, value, key_path)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.path is None or not exc.path.startswith(path):
            raise ConfigError(str(exc), path or None) from exc
        raise
    except TypeError as exc:
        raise ConfigError(str(exc), path or None) from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_override(data: dict, dotted: str, value) -> None:
    """Set `a.b.c = value` in a nested dict, rejecting keys the schema lacks."""
    schema = ExperimentConfig().to_dict()
    keys = dotted.split(".")
    node, spec = data, schema
    for i, key in enumerate(keys):
        if not isinstance(spec, dict) or key not in spec:
            raise ConfigError("unknown key", ".".join(keys[: i + 1]))
        if i == len(keys) - 1:
            node[key] = value
        else:
            node = node.setdefault(key, {})
            spec = spec[key]


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}", "config") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "set")
        key, raw = item.split("=", 1)
        apply_override(data, key.strip(), parse_value(raw))
    return config_from_dict(data)
