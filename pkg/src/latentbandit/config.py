"""Run configuration: one TOML file defines one reproducible run.

Flat typed sections mirror the experiment stages. Unknown sections or keys
are rejected so typos fail fast. Serialization round-trips losslessly
(ints stay ints, floats use shortest-repr).
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from latentbandit.errors import ConfigError


@dataclass
class WorldConfig:
    dim: int = 5
    layers: int = 2
    sigma: float = 0.3
    reward_sigma: float = 0.1
    arms: int = 10
    seed: int = 20240601
    alpha: float = 0.2
    max_layer_cond: float = 15.0  # mixing-layer condition cap (0 disables)


@dataclass
class DatasetConfig:
    patients: int = 100
    steps: int = 200


@dataclass
class TrainingConfig:
    epochs: int = 3000
    stage1_frac: float = 0.2
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2: float = 1e-4
    decay: float = 0.1
    hidden_layers: int = -1  # -1: match the mixing net depth
    width: int = 0  # 0: 3x the data dimension
    pieces: int = 2
    holdout_frac: float = 0.1
    patience: int = 100
    early_stop: bool = True
    standardize: bool = True
    restarts: int = 3
    ridge: float = 1e-6


@dataclass
class BanditConfig:
    horizon: int = 500
    instances: int = 500
    algorithms: list = field(
        default_factory=lambda: [
            "greedy1",
            "greedy2",
            "oracle-greedy1",
            "oracle-greedy2",
            "thompson",
        ]
    )
    lambda_g: float = 1.0
    prior_var: float = 1.0


@dataclass
class EvalConfig:
    test_patients: int = 50
    test_steps: int = 0  # 0: use the dataset's step count
    accuracy_draws: int = 20


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    bandit: BanditConfig = field(default_factory=BanditConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seed(self):
        return self.world.seed


_SECTIONS = {
    "world": WorldConfig,
    "dataset": DatasetConfig,
    "training": TrainingConfig,
    "bandit": BanditConfig,
    "eval": EvalConfig,
}


def config_from_dict(data):
    cfg = ExperimentConfig()
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        known = {f.name: f.type for f in fields(cls)}
        target = getattr(cfg, section)
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            current = getattr(target, key)
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"[{section}] {key} must be a boolean")
            elif isinstance(current, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"[{section}] {key} must be an integer")
            elif isinstance(current, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"[{section}] {key} must be a number")
                value = float(value)
            elif isinstance(current, list):
                if not isinstance(value, list) or not all(
                    isinstance(v, str) for v in value
                ):
                    raise ConfigError(f"[{section}] {key} must be a list of strings")
            setattr(target, key, value)
    return cfg


def config_to_dict(cfg):
    return {name: asdict(getattr(cfg, name)) for name in _SECTIONS}


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def dump_config(cfg, path):
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def config_hash(cfg):
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
