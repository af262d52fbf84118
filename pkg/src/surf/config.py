"""JSON run configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from surf import seeding
from surf.errors import ConfigError
from surf.train import TrainConfig

SCHEMA_VERSION = 1


def _build(cls, obj, where):
    if obj is None:
        return cls()
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class DataConfig:
    n: int = 20
    p: int = 16
    C: int = 5
    m_train: int = 20
    m_test: int = 10
    Q_train: int = 50
    Q_test: int = 10
    alpha_train: float = 1.0
    alpha_test: float = 1.0
    class_sep: float = 2.0

    def __post_init__(self):
        if min(self.n, self.p, self.C, self.m_train, self.m_test, self.Q_train, self.Q_test) < 1:
            raise ConfigError("data counts must be positive")
        if self.alpha_train <= 0 or self.alpha_test <= 0:
            raise ConfigError("Dirichlet concentrations must be positive")


@dataclass
class GraphConfig:
    kind: str = "regular"
    degree: int = 3
    p: float = 0.1

    def __post_init__(self):
        if self.kind not in ("regular", "erdos-renyi", "star"):
            raise ConfigError(f"unknown graph kind {self.kind!r}")


@dataclass
class EvalConfig:
    epsilon: float = 0.05
    n_asyn: list[int] = field(default_factory=lambda: [0, 2, 5, 10])


@dataclass
class BaselineConfig:
    T: int = 200
    beta: float = 0.1
    batch_count: int | None = 10
    momentum: float = 0.9
    local_steps: int = 6
    participants_per_round: int = 10

    def __post_init__(self):
        if self.T < 0:
            raise ConfigError("T must be nonnegative")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    @classmethod
    def from_dict(cls, obj: dict) -> RunConfig:
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {obj.get('schema_version')!r}")
        allowed = {"schema_version", "seed", "data", "graph", "train", "eval", "baseline"}
        unknown = sorted(set(obj) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        seed = obj.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        train_obj = obj.get("train") or {}
        if not isinstance(train_obj, dict):
            raise ConfigError("train: expected an object")
        train_obj = {"seed": seeding.derive(seed, seeding.INIT), **train_obj}
        try:
            train_cfg = TrainConfig.from_dict(train_obj)
        except ConfigError as exc:
            raise ConfigError(f"train: {exc}") from None
        return cls(
            seed=seed,
            data=_build(DataConfig, obj.get("data"), "data"),
            graph=_build(GraphConfig, obj.get("graph"), "graph"),
            train=train_cfg,
            eval=_build(EvalConfig, obj.get("eval"), "eval"),
            baseline=_build(BaselineConfig, obj.get("baseline"), "baseline"),
        )

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "seed": self.seed}
        for name in ("data", "graph", "eval", "baseline"):
            out[name] = asdict(getattr(self, name))
        out["train"] = self.train.to_dict()
        return out


def load_config(path, seed: int | None = None) -> RunConfig:
    """Read a config file; ``seed`` overrides the master seed."""
    if path is None:
        obj = {"schema_version": SCHEMA_VERSION}
    else:
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if seed is not None and isinstance(obj, dict):
        obj = {**obj, "seed": seed}
    return RunConfig.from_dict(obj)
