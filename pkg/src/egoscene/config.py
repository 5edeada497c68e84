"""Runtime configuration: dataclass defaults, TOML loading, env overrides.

A run is fully described by a checked-in config file: flags override file
values, and environment variables override only the backend secrets
(GEN_BACKEND_URL, GEN_BACKEND_KEY).  Unknown keys are rejected so typos
fail loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .cot import CotMarkers
from .rewards import DEFAULT_MRA_THRESHOLDS

DEFAULT_CATEGORY_POOL = (
    "table",
    "chair",
    "lamp",
    "sofa",
    "bed",
    "cabinet",
    "plant",
    "tv",
    "desk",
    "shelf",
    "rug",
    "box",
)

COLORS = ("red", "blue", "green", "white", "black", "brown")
MATERIALS = ("wooden", "metal", "plastic", "fabric")


@dataclass(frozen=True)
class SimulatorConfig:
    step: float = 0.5
    turn_quantum: float = math.pi / 2
    fov: float = math.pi / 2
    view_range: float = 4.0
    near_threshold: float = 1.0
    frames: int = 16
    n_objects_min: int = 8
    n_objects_max: int = 12
    room_min: float = 6.0
    room_max: float = 9.0
    wall_height: float = 2.8
    grid_cell: float = 0.5
    category_pool: tuple[str, ...] = DEFAULT_CATEGORY_POOL

    def validate(self):
        if self.step <= 0:
            raise ValueError("simulator.step must be positive")
        if not (0 < self.fov < math.pi):
            raise ValueError("simulator.fov must lie in (0, pi)")
        if self.view_range <= 0 or self.near_threshold <= 0:
            raise ValueError("simulator ranges must be positive")
        if self.frames < 1:
            raise ValueError("simulator.frames must be >= 1")
        if not (1 <= self.n_objects_min <= self.n_objects_max):
            raise ValueError("simulator object count bounds are inconsistent")
        if not (0 < self.room_min <= self.room_max):
            raise ValueError("simulator room bounds are inconsistent")
        if self.grid_cell <= 0:
            raise ValueError("simulator.grid_cell must be positive")


@dataclass(frozen=True)
class PsaConfig:
    rounds: int = 2
    max_len: int = 4

    def validate(self):
        if self.rounds < 0:
            raise ValueError("psa.rounds must be >= 0")
        if self.max_len < 1:
            raise ValueError("psa.max_len must be >= 1")


@dataclass(frozen=True)
class RewardConfig:
    w_format: float = 0.2
    w_accuracy: float = 0.8
    epsilon: float = 0.2
    beta: float = 1e-4
    group_size: int = 8
    kl_reduction: str = "mean"
    mra_thresholds: tuple[float, ...] = DEFAULT_MRA_THRESHOLDS

    def validate(self):
        if self.w_format < 0 or self.w_accuracy < 0:
            raise ValueError("reward weights must be non-negative")
        if not (0 < self.epsilon < 1):
            raise ValueError("reward.epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("reward.beta must be >= 0")
        if self.group_size < 2:
            raise ValueError("reward.group_size must be >= 2")
        if self.kl_reduction not in ("mean", "sum"):
            raise ValueError("reward.kl_reduction must be 'mean' or 'sum'")
        if not self.mra_thresholds or any(
            not (0 < t < 1) for t in self.mra_thresholds
        ):
            raise ValueError("reward.mra_thresholds must be non-empty within (0, 1)")


@dataclass(frozen=True)
class BackendConfig:
    url: str = ""
    api_key: str = ""
    temperature: float = 0.2
    max_output_tokens: int = 2048
    model_hints: dict = field(
        default_factory=lambda: {
            "caption_frames": "gpt-4o",
            "infer_transitions": "gpt-4o",
            "synthesize_rpc": "qwen2.5-72b",
            "extract_context": "gpt-4o",
            "merge_cot": "gpt-4o",
            "quality_check": "judge",
        }
    )

    def validate(self):
        if self.temperature < 0:
            raise ValueError("backend.temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("backend.max_output_tokens must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    template_dir: str = ""  # empty = packaged defaults
    retry_limit: int = 3
    backoff_seconds: float = 0.05
    parallelism: int = 1
    token_budget: int = 0  # 0 = unlimited

    def validate(self):
        if self.retry_limit < 0:
            raise ValueError("pipeline.retry_limit must be >= 0")
        if self.backoff_seconds < 0:
            raise ValueError("pipeline.backoff_seconds must be >= 0")
        if self.parallelism < 1:
            raise ValueError("pipeline.parallelism must be >= 1")
        if self.token_budget < 0:
            raise ValueError("pipeline.token_budget must be >= 0")


@dataclass(frozen=True)
class PathsConfig:
    dataset: str = "dataset.jsonl"
    report_prefix: str = "report"
    gen_dir: str = "gen_out"


@dataclass(frozen=True)
class Config:
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    psa: PsaConfig = field(default_factory=PsaConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    cot: CotMarkers = field(default_factory=CotMarkers)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        for section in (
            self.simulator,
            self.psa,
            self.reward,
            self.backend,
            self.pipeline,
        ):
            section.validate()


_SECTIONS = {
    "simulator": SimulatorConfig,
    "psa": PsaConfig,
    "reward": RewardConfig,
    "backend": BackendConfig,
    "pipeline": PipelineConfig,
    "cot": CotMarkers,
    "paths": PathsConfig,
}


def _coerce(value, target_type):
    if isinstance(value, list):
        return tuple(value)
    if target_type is float and isinstance(value, int):
        return float(value)
    return value


def _build_section(cls, data: dict, section_name: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {section_name}.{key}")
        kwargs[key] = _coerce(value, known[key].type)
    return cls(**kwargs)


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Load a TOML config file on top of the defaults and validate it."""
    sections = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for name, data in raw.items():
            if name not in _SECTIONS:
                raise ValueError(f"unknown config section [{name}]")
            if not isinstance(data, dict):
                raise ValueError(f"config section [{name}] must be a table")
            sections[name] = _build_section(_SECTIONS[name], data, name)

    cfg = Config(**sections)

    url = os.environ.get("GEN_BACKEND_URL")
    key = os.environ.get("GEN_BACKEND_KEY")
    if url or key:
        backend = dataclasses.replace(
            cfg.backend,
            url=url or cfg.backend.url,
            api_key=key or cfg.backend.api_key,
        )
        cfg = dataclasses.replace(cfg, backend=backend)

    cfg.validate()
    return cfg
