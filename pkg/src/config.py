"""
Run configuration
A single JSON document validated by RunConfig. CLI flags override the file,
the file overrides the environment (src/settings.py).
"""
import json
import os
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src import settings
from src.errors import ConfigError
from src.hal import LearnerConfig, Scenario, ThetaConfig
from src.hamiltonian import j_to_lambda
from src.models import JParams, LambdaParams
from src.noise import NoiseModel, SingleParamDecoherence, TwoParamDecoherence
from src.presets import DECOHERENCE_VARIANTS, get_preset
from src.query_space import (
    DEFAULT_INCREMENT,
    DEFAULT_N_TIMES,
    DEFAULT_T_MAX,
    DEFAULT_T_MIN,
    GrowthPolicy,
    QuerySpace,
)


class SpaceConfig(BaseModel):
    """Initial evolution-time grid"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_min: float = Field(DEFAULT_T_MIN, gt=0, description="first evolution time (s)")
    t_max: float = Field(DEFAULT_T_MAX, gt=0, description="last evolution time (s)")
    n_times: int = Field(DEFAULT_N_TIMES, ge=2, description="grid points")
    increment: float = Field(DEFAULT_INCREMENT, gt=0, description="LinearT growth step (s)")

    @model_validator(mode="after")
    def _ordered(self):
        if self.t_max <= self.t_min:
            raise ValueError("t_max must exceed t_min")
        return self

    def build(self, growth: GrowthPolicy = GrowthPolicy.FIXED) -> QuerySpace:
        return QuerySpace.uniform(self.t_min, self.t_max, self.n_times, growth=growth, increment=self.increment)


class LearnerSection(LearnerConfig):
    """LearnerConfig fields shared by every scenario of a sweep"""

    initial_weights_path: Optional[str] = Field(None, description="JSON list of round-0 weights")

    def for_scenario(self, scenario: Scenario) -> LearnerConfig:
        fields = self.model_dump(exclude={"initial_weights_path", "scenario", "p_test"})
        fields["scenario"] = scenario
        if self.p_test is not None:
            fields["p_test"] = self.p_test
        if self.initial_weights_path:
            fields["initial_weights"] = _read_weights(self.initial_weights_path)
        return LearnerConfig(**fields)


class DatasetConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shots_per_query: int = Field(100, ge=1, description="shots per query written by generate")
    path: Optional[str] = Field(None, description="recorded dataset replayed by run")


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    windows: List[Tuple[float, float]] = Field(default_factory=list, description="N ranges for slope fits")
    epsilons: Optional[List[float]] = Field(None, description="target errors for the query advantage")
    n_epsilons: int = Field(8, ge=1, description="size of the automatic ε grid")


class RunConfig(BaseModel):
    """Everything a generate / run / analyze invocation needs"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    preset: Optional[str] = Field("D-config2", description="named device preset")
    j_star: Optional[JParams] = Field(None, description="explicit θ* as J, overrides the preset")
    lambda_star: Optional[LambdaParams] = Field(None, description="explicit θ* as Λ, overrides the preset")
    prior: Optional[LambdaParams] = Field(None, description="previous calibration for recalibration runs")
    noise: Optional[NoiseModel] = Field(None, description="explicit noise model, overrides the preset")
    decoherence: Optional[str] = Field(None, description="swap in a named decoherence variant")
    space: SpaceConfig = Field(default_factory=SpaceConfig)
    scenarios: List[Scenario] = Field(default_factory=lambda: [Scenario.PASSIVE])
    learner: LearnerSection = Field(default_factory=LearnerSection)
    n_runs: int = Field(1, ge=1)
    test_size: int = Field(1000, ge=0, description="held-out shots for the testing error; 0 disables it")
    rmse_coords: str = Field("j", pattern="^(j|lambda)$")
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    jobs: Optional[int] = Field(None, ge=1)
    out: Optional[str] = None
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)

    @model_validator(mode="after")
    def _consistent(self):
        if self.j_star is not None and self.lambda_star is not None:
            raise ValueError("give at most one of j_star and lambda_star")
        if self.decoherence is not None and self.decoherence not in DECOHERENCE_VARIANTS:
            raise ValueError(f"unknown decoherence variant '{self.decoherence}'")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        return self


class Experiment(NamedTuple):
    """Runtime objects resolved from a RunConfig"""
    theta_star: Optional[LambdaParams]
    noise: NoiseModel
    space: QuerySpace
    theta_config: ThetaConfig


def _read_weights(path: str) -> List[float]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            weights = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read initial weights {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"initial weights {path}: invalid JSON at line {e.lineno}")
    if not isinstance(weights, list) or not all(isinstance(w, (int, float)) for w in weights):
        raise ConfigError(f"initial weights {path} must be a JSON list of numbers")
    return [float(w) for w in weights]


def format_validation_error(e: ValidationError) -> str:
    """One 'field.path: message' per problem"""
    lines = []
    for err in e.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e))


def load_config(
    path: Optional[str] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """Read and validate a config file; flags take precedence over its seed / jobs / out"""
    data: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    return with_defaults(parse_config(data), seed=seed, jobs=jobs, out=out)


def with_defaults(cfg: RunConfig, seed: Optional[int] = None, jobs: Optional[int] = None,
                  out: Optional[str] = None) -> RunConfig:
    """Fill seed / jobs / out with the flag value, else the file value, else the environment"""
    resolved = {
        "seed": seed if seed is not None else (cfg.seed if cfg.seed is not None else settings.default_seed()),
        "jobs": jobs if jobs is not None else (cfg.jobs if cfg.jobs is not None else settings.default_jobs()),
        "out": out if out is not None else (cfg.out if cfg.out is not None else settings.default_out_dir()),
    }
    if resolved["seed"] < 0 or resolved["seed"] >= 2 ** 64:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {resolved['seed']}")
    if resolved["jobs"] < 1:
        raise ConfigError(f"jobs: must be at least 1, got {resolved['jobs']}")
    return cfg.model_copy(update=resolved)


def resolve(cfg: RunConfig, require_truth: bool = True) -> Experiment:
    """θ*, noise model, initial space and ThetaConfig for a config"""
    space = cfg.space.build()
    preset = get_preset(cfg.preset) if cfg.preset else None

    if cfg.lambda_star is not None:
        theta_star = cfg.lambda_star
    elif cfg.j_star is not None:
        theta_star = j_to_lambda(cfg.j_star)
    elif preset is not None:
        theta_star = preset.theta_star()
    else:
        theta_star = None
    if theta_star is None and require_truth:
        raise ConfigError("no θ*: set preset, j_star or lambda_star")

    if cfg.noise is not None:
        noise = cfg.noise
    elif preset is not None:
        noise = preset.noise
    else:
        noise = NoiseModel()
    if cfg.decoherence is not None:
        model = DECOHERENCE_VARIANTS[cfg.decoherence]
        if isinstance(model, (SingleParamDecoherence, TwoParamDecoherence)):
            model = model.model_copy(update={"t0": space.t_min})
        noise = noise.model_copy(update={"decoherence": model})

    if theta_star is not None:
        theta_star.check_nyquist(space.nyquist_omega)
    theta_config = ThetaConfig(truth=theta_star, prior=cfg.prior)
    return Experiment(theta_star, noise, space, theta_config)


def config_digest(cfg: RunConfig) -> str:
    """Compact JSON of the fully resolved config, for provenance headers"""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

