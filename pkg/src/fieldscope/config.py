"""JSON scenario configuration.

Every key is optional; omitted keys take the reference-scenario values
(two attractors followed by a repeller on a 40 x 40 environment). Unknown
keys are rejected. See ``docs/config.md`` for the full schema.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import fields as F
from .core import Grid, SystemMatrices, make_grid
from .kalman import CONTROL_MEASURED, FILTERED, KalmanModel, default_noise
from .learn import Normalizer, TrainConfig
from .sim import DEST_ALTERNATE, DEST_NEW, Limits, NoiseParams, ScenarioStage


class ConfigError(ValueError):
    """Invalid scenario document; ``errors`` holds path-qualified messages."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvironmentConfig(_Strict):
    x_min: float = -20.0
    x_max: float = 20.0
    y_min: float = -20.0
    y_max: float = 20.0

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("bounds must satisfy x_min < x_max and y_min < y_max")
        return self


class NoiseConfig(_Strict):
    sigma_process: float = Field(0.1, ge=0)
    sigma_meas: float = Field(0.1, ge=0)


class GridConfig(_Strict):
    step: float = Field(0.3, gt=0)


class SimConfig(_Strict):
    arrival_radius: float = Field(0.5, gt=0)
    max_steps: int = Field(500, ge=1)
    stall_window: int = Field(10, ge=0)


class FilterConfig(_Strict):
    mode: Literal["filtered", "open-loop"] = FILTERED
    control_point: Literal["measured", "posterior"] = CONTROL_MEASURED
    q_field: float = Field(1.0, ge=0)
    q_v: float = Field(1e-2, ge=0)
    r: Optional[float] = Field(None, ge=0, description="measurement variance; defaults to sigma_meas**2")


class MaskConfig(_Strict):
    enabled: bool = True
    radius: float = Field(5.0, gt=0)


class TrainSection(_Strict):
    lambda0: float = Field(1e-3, gt=0)
    lambda_up: float = Field(10.0, gt=1)
    lambda_down: float = Field(0.1, gt=0, lt=1)
    max_epochs: int = Field(200, ge=0)
    grad_tol: float = Field(1e-7, ge=0)
    lambda_max: float = Field(1e10, gt=0)
    init: Literal["uniform", "nguyen-widrow"] = "uniform"
    val_fraction: float = Field(0.0, ge=0, lt=1)
    max_fail: int = Field(6, ge=1)
    restarts: int = Field(5, ge=1)


class ObjectConfig(_Strict):
    kind: Literal["attractor-sqrt", "attractor-gauss", "repeller-exp"]
    center: tuple[float, float]
    params: dict[str, float] = {}
    growing: bool = False

    @model_validator(mode="after")
    def _valid_spec(self):
        self.to_spec()
        return self

    def to_spec(self) -> F.CentralFieldSpec:
        return F.CentralFieldSpec(self.kind, self.center, dict(self.params), self.growing)


class StageConfig(_Strict):
    object: ObjectConfig
    n_trajectories: int = Field(100, ge=1)
    destinations: Literal["new", "alternate"] = DEST_NEW

    @model_validator(mode="after")
    def _rule(self):
        if self.destinations == DEST_NEW and self.object.kind == F.REPELLER_EXP:
            raise ValueError("destinations 'new' needs an attractor; use 'alternate'")
        return self


def _default_stages() -> list[StageConfig]:
    a1, a2, rep = F.default_specs()
    return [
        StageConfig(object=ObjectConfig(kind=a1.kind, center=a1.center)),
        StageConfig(object=ObjectConfig(kind=a2.kind, center=a2.center)),
        StageConfig(object=ObjectConfig(kind=rep.kind, center=rep.center), destinations=DEST_ALTERNATE),
    ]


class ScenarioConfig(_Strict):
    environment: EnvironmentConfig = EnvironmentConfig()
    dk: float = Field(1.0, gt=0)
    noise: NoiseConfig = NoiseConfig()
    grid: GridConfig = GridConfig()
    sim: SimConfig = SimConfig()
    filter: FilterConfig = FilterConfig()
    mask: MaskConfig = MaskConfig()
    train: TrainSection = TrainSection()
    stages: list[StageConfig] = Field(default_factory=_default_stages, min_length=1)
    seed: int = Field(42, ge=0, lt=2**64)
    out: str = "out"

    @model_validator(mode="after")
    def _first_stage_has_destination(self):
        if self.stages[0].object.kind == F.REPELLER_EXP:
            raise ValueError("the first stage must introduce an attractor")
        return self

    # derived runtime objects

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        e = self.environment
        return e.x_min, e.x_max, e.y_min, e.y_max

    def make_grid(self) -> Grid:
        return make_grid(*self.bounds, self.grid.step)

    def specs(self) -> list[F.CentralFieldSpec]:
        return [s.object.to_spec() for s in self.stages]

    def scenario_stages(self, specs=None) -> list[ScenarioStage]:
        specs = specs or self.specs()
        return [
            ScenarioStage(i + 1, spec, s.n_trajectories, s.destinations)
            for i, (s, spec) in enumerate(zip(self.stages, specs))
        ]

    def noise_params(self) -> NoiseParams:
        return NoiseParams(self.noise.sigma_process, self.noise.sigma_meas)

    def limits(self) -> Limits:
        return Limits(self.sim.arrival_radius, self.sim.max_steps, self.sim.stall_window)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train.model_dump())

    def normalizer(self) -> Normalizer:
        return Normalizer.from_bounds(*self.bounds)

    def kalman_model(self, learned=()) -> KalmanModel:
        Q, R, P0 = default_noise(self.noise.sigma_process, self.noise.sigma_meas, self.filter.q_field, self.filter.q_v)
        if self.filter.r is not None:
            R = self.filter.r * np.eye(2)
            P0 = np.diag([self.filter.r, self.filter.r, 1.0, 1.0])
        return KalmanModel(tuple(learned), Q, R, P0, SystemMatrices(self.dk))


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        out.append(f"{path}: {msg}")
    return out


def parse_config(text) -> ScenarioConfig:
    """Parse and validate a scenario from JSON text or an already-decoded dict."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<root>: invalid JSON ({exc})"]) from exc
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def default_config(**overrides) -> ScenarioConfig:
    return parse_config(overrides)
