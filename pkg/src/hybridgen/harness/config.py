"""Experiment configuration: one YAML document per experiment, strictly
validated.  Unknown keys anywhere, including decision-entry names, are
errors reported with their field path."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..generator.decision import CSG_LAYOUT, DecisionLayout
from ..generator.toy import TOY_LAYOUT


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PipelineSection(_Strict):
    kind: Literal["csg", "toy"] = "csg"
    resolution: tuple[int, int] = (16, 16)
    task: Literal["normal", "depth"] = "normal"
    depth_cap: int = Field(6, ge=0, le=62)
    frame_scale: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if min(self.resolution) < 1:
            raise ValueError("resolution entries must be positive")
        if self.kind == "toy" and self.task != "normal":
            raise ValueError("the toy pipeline only supports the normal task")
        return self

    @property
    def layout(self) -> DecisionLayout:
        return CSG_LAYOUT if self.kind == "csg" else TOY_LAYOUT


class ModelSection(_Strict):
    hidden: int = Field(64, ge=1)
    init_scale: float = Field(0.1, gt=0)


class TrainSection(_Strict):
    lr: float = Field(0.05, ge=0)


class HybridSection(_Strict):
    n: int = Field(4, ge=1)
    gamma: float = Field(0.01, ge=0)
    rho: float = Field(0.99, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    steps: int = Field(100, ge=1)
    jacobian: Literal["fd", "analytic"] = "fd"
    fresh_seeds: bool = True


class ProbeSection(_Strict):
    m: int = Field(8, ge=1)
    sigma: float = Field(0.02, gt=0)
    share_probes: bool = True


class BrsSection(_Strict):
    m: int = Field(8, ge=1)
    sigma: float = Field(0.02, gt=0)
    gamma: float = Field(0.01, gt=0)
    rho: float = Field(0.99, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    n: int = Field(4, ge=1)
    steps: int = Field(100, ge=1)
    carry_weights: bool = True
    fresh_seeds: bool = True


class FixedBetaSection(_Strict):
    draws: int = Field(10, ge=1)
    dataset_size: int = Field(32, ge=1)
    sgd_steps: int = Field(400, ge=1)
    snapshot_every: int = Field(20, ge=1)


class BetaSpec(_Strict):
    """A decision vector: ``base`` (layout defaults or the target vector)
    with named overrides, then additive offsets."""

    base: Literal["default", "target"] = "default"
    values: dict[str, float] = Field(default_factory=dict)
    offsets: dict[str, float] = Field(default_factory=dict)


class TargetSection(_Strict):
    beta: BetaSpec = Field(default_factory=BetaSpec)
    validation_size: int = Field(32, ge=1)
    validation_seed: int = 12345


class ExperimentConfig(_Strict):
    name: str = "experiment"
    method: Literal["hybrid", "brs", "fixed_beta"] = "hybrid"
    seed: int = 0
    out_dir: str | None = None
    pipeline: PipelineSection = Field(default_factory=PipelineSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    hybrid: HybridSection = Field(default_factory=HybridSection)
    probe: ProbeSection = Field(default_factory=ProbeSection)
    brs: BrsSection = Field(default_factory=BrsSection)
    fixed_beta: FixedBetaSection = Field(default_factory=FixedBetaSection)
    target: TargetSection = Field(default_factory=TargetSection)
    start: BetaSpec = Field(default_factory=BetaSpec)

    @model_validator(mode="after")
    def _check_names(self):
        names = set(self.pipeline.layout.names)
        for where, spec in (("target.beta", self.target.beta), ("start", self.start)):
            for kind in ("values", "offsets"):
                for key in getattr(spec, kind):
                    if key not in names:
                        raise ValueError(f"{where}.{kind}: unknown decision entry {key!r}")
        return self

    def with_seed(self, seed: int) -> ExperimentConfig:
        return self.model_copy(update={"seed": int(seed)})

    def updated(self, **sections) -> ExperimentConfig:
        """Copy with whole sections or nested fields replaced, revalidated."""
        data = self.model_dump()
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return ExperimentConfig.model_validate(data)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse YAML: {exc}") from None
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)
