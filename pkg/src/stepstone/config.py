"""Run configuration: nested dataclasses mirrored 1:1 by the JSON config file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from stepstone.env import EnvProfile
from stepstone.errors import ConfigurationError
from stepstone.inner import InnerLoopConfig
from stepstone.outer import OuterLoopConfig
from stepstone.records import config_hash

MIXING_STRATEGIES = ("curriculum", "mixed")
DATASET_SOURCES = ("pq", "sampled", "none")
PROFILES = ("desk", "paper")
BACKENDS = ("toy", "bridge")


@dataclass(frozen=True)
class EvalConfig:
    """Fresh-student evaluation protocol."""

    strategy: str = "mixed"
    synthetic_warmup_steps: int = 64
    max_steps: int = 1500
    pass_k_samples: int = 32
    k_list: tuple[int, ...] = (1, 4, 8, 16, 32)
    cadence: int = 10
    filter_k: int = 128
    batch_size: int = 8
    group_size: int = 32
    learning_rate: float = 0.55
    warmup_steps: int = 0
    kl_coeff: float = 0.001
    early_stop_window: int = 25
    early_stop_fraction: float = 0.15
    report_window: int = 200

    def __post_init__(self):
        if self.strategy not in MIXING_STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {MIXING_STRATEGIES}")
        if (
            self.synthetic_warmup_steps < 0
            or self.max_steps <= 0
            or self.pass_k_samples <= 0
            or self.cadence <= 0
            or self.filter_k <= 0
        ):
            raise ConfigurationError("evaluation counts must be positive")
        if any(k < 1 or k > self.pass_k_samples for k in self.k_list):
            raise ConfigurationError("each k must satisfy 1 <= k <= sample count")


@dataclass(frozen=True)
class SeedRoster:
    """Nested seed grid: student seeds repeat under every teacher seed."""

    teacher: tuple[int, ...] = (0, 1, 2, 3, 4)
    student: tuple[int, ...] = (0, 1)
    split: int = 7

    def __post_init__(self):
        if not self.teacher or not self.student:
            raise ConfigurationError("seed roster must be nonempty")


@dataclass(frozen=True)
class RunConfig:
    env: EnvProfile = field(default_factory=EnvProfile.default)
    outer: OuterLoopConfig = field(default_factory=OuterLoopConfig)
    inner: InnerLoopConfig = field(default_factory=InnerLoopConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seeds: SeedRoster = field(default_factory=SeedRoster)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        def convert(value):
            if isinstance(value, np.ndarray):
                return [float(x) for x in value]
            if isinstance(value, tuple):
                return list(value)
            if isinstance(value, dict):
                return {k: convert(v) for k, v in value.items()}
            return value

        raw = asdict(self)
        return {k: {kk: convert(vv) for kk, vv in v.items()} if isinstance(v, dict) else convert(v) for k, v in raw.items()}

    def hash(self) -> str:
        # output_dir is a location, not part of the experiment identity
        identity = self.to_dict()
        identity.pop("output_dir", None)
        return config_hash(identity)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known_sections = {"env", "outer", "inner", "evaluation", "seeds", "output_dir"}
        unknown_sections = set(data) - known_sections
        if unknown_sections:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown_sections)}")

        def build(dc_type, payload, default):
            known = {f.name for f in fields(dc_type)}
            unknown = set(payload) - known
            if unknown:
                raise ConfigurationError(
                    f"unknown {dc_type.__name__} fields: {sorted(unknown)}"
                )
            kwargs = {}
            for f in fields(dc_type):
                if f.name in payload:
                    value = payload[f.name]
                    if isinstance(value, list):
                        value = (
                            np.array(value, dtype=np.float64)
                            if f.name in _ARRAY_FIELDS
                            else tuple(value)
                        )
                    kwargs[f.name] = value
                elif default is not None:
                    kwargs[f.name] = getattr(default, f.name)
            return dc_type(**kwargs)

        cfg = cls(
            env=build(EnvProfile, data.get("env", {}), EnvProfile.default()),
            outer=build(OuterLoopConfig, data.get("outer", {}), None),
            inner=build(InnerLoopConfig, data.get("inner", {}), None),
            evaluation=build(EvalConfig, data.get("evaluation", {}), None),
            seeds=build(SeedRoster, data.get("seeds", {}), None),
            output_dir=data.get("output_dir", "runs/default"),
        )
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_ARRAY_FIELDS = {"offsets", "generator_competence", "format_failure"}


def apply_profile(config: RunConfig, profile: str) -> RunConfig:
    """Budget presets: the desk profile shrinks budgets for laptop runs."""
    if profile not in PROFILES:
        raise ConfigurationError(f"profile must be one of {PROFILES}")
    if profile == "paper":
        return replace(
            config,
            outer=replace(config.outer, max_steps=200),
            evaluation=replace(config.evaluation, max_steps=1500),
        )
    return replace(
        config,
        outer=replace(config.outer, max_steps=40),
        evaluation=replace(config.evaluation, max_steps=600),
    )
