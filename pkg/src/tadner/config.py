"""Run configuration: JSON file with strict key validation; CLI flags override."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .corpus import TaggingScheme, TypeNameMap, builtin_name_map
from .errors import ConfigError
from .optim import OptimizerConfig
from .pipeline import PipelineAblations, PipelineConfig
from .span_detector import FinetuneConfig


@dataclass
class EncoderSettings:
    dim: int = 24
    context_window: int = 1
    layers: int = 1


@dataclass
class OptimizerSettings:
    learning_rate: float = 3e-5
    warmup_fraction: float = 0.01
    batch_size: int = 64
    weight_decay: float = 0.0
    span_steps: int = 1000
    type_steps: int = 1000


@dataclass
class FinetuneSettings:
    # beta=None picks the 1-shot default (2) or the general default (6)
    # from the inferred shot count of each episode.
    beta: int | None = None
    learning_rate: float | None = None
    max_steps: int = 100
    stop_on_equal: bool = False


@dataclass
class AblationSettings:
    no_filter: bool = False
    no_type_names: bool = False
    no_span_finetune: bool = False
    no_type_finetune: bool = False


@dataclass
class RunConfig:
    scheme: str = "IO"
    seed: int = 0
    temperature: float = 0.05
    dropout: float = 0.2
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    finetune: FinetuneSettings = field(default_factory=FinetuneSettings)
    ablations: AblationSettings = field(default_factory=AblationSettings)
    zero_shot: bool = False
    literal_adaptation_loss: bool = False
    protocol: str = "episode_level"
    name_map: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.scheme not in {s.value for s in TaggingScheme}:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.protocol not in ("episode_level", "dataset_level"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if not 0 < self.temperature:
            raise ConfigError("temperature must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def tagging_scheme(self) -> TaggingScheme:
        return TaggingScheme(self.scheme)

    def optimizer_config(self, max_steps: int) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.optimizer.learning_rate,
            warmup_fraction=self.optimizer.warmup_fraction,
            weight_decay=self.optimizer.weight_decay,
            batch_size=self.optimizer.batch_size,
            max_steps=max_steps,
        )

    def finetune_config(self, k_shot: int) -> FinetuneConfig:
        beta = self.finetune.beta
        if beta is None:
            beta = 2 if k_shot <= 1 else 6
        lr = self.finetune.learning_rate
        if lr is None:
            lr = self.optimizer.learning_rate
        return FinetuneConfig(
            beta=beta,
            learning_rate=lr,
            max_steps=self.finetune.max_steps,
            stop_on_equal=self.finetune.stop_on_equal,
        )

    def pipeline_config(self, k_shot: int) -> PipelineConfig:
        ft = self.finetune_config(k_shot)
        return PipelineConfig(
            span_finetune=ft,
            type_finetune=ft,
            ablations=PipelineAblations(**asdict(self.ablations)),
            zero_shot=self.zero_shot,
            literal_adaptation_loss=self.literal_adaptation_loss,
            name_vector_seed=self.seed,
        )

    def load_name_map(self) -> TypeNameMap | None:
        if self.name_map is None:
            return None
        if self.name_map.startswith("builtin:"):
            return builtin_name_map(self.name_map.split(":", 1)[1])
        return TypeNameMap.from_json(self.name_map)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "encoder": EncoderSettings,
    "optimizer": OptimizerSettings,
    "finetune": FinetuneSettings,
    "ablations": AblationSettings,
}


def _build_section(name: str, cls, obj: dict):
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = set(cls.__dataclass_fields__)
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from None


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    allowed = set(RunConfig.__dataclass_fields__)
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    kwargs = dict(obj)
    for name, cls in _SECTIONS.items():
        if name in kwargs:
            kwargs[name] = _build_section(name, cls, kwargs[name])
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    return config_from_dict(obj)
