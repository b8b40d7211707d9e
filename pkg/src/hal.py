"""
Hamiltonian active learning loop
Round 0 samples n0 shots, every later round selects a query distribution
according to the learning scenario, samples n_b shots and re-estimates θ̂.
"""
import time
from enum import Enum
from typing import List, Literal, Optional, Protocol, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src import console
from src.dataset import Dataset
from src.errors import (
    BudgetExhaustedError,
    ConfigError,
    DomainError,
    MissingDataError,
    ModelKindError,
    WeakSignalError,
)
from src.estimate import EstimatorConfig, baseline_estimate, mle, negative_log_likelihood
from src.fisher import XI, ParamMask, coordinate_scale
from src.models import LAMBDA_NAMES, LambdaParams
from src.noise import NoiseModel
from src.oracle import readout_kind
from src.qopt import entropy_filter, grow_space, mix_uniform, optimize_fi, optimize_fir, sample_batch
from src.query_space import GrowthPolicy, QueryDistribution, QuerySpace, QuerySubset
from src.rng import RngStream
from src.run_log import RunLogTracker


class Scenario(str, Enum):
    BASELINE = "baseline"
    PASSIVE = "passive"
    HAL_FI_FIXED = "hal_fi_fixed"
    HAL_FI_LINEAR_T = "hal_fi_linear_t"
    HAL_FI_EXP_T = "hal_fi_exp_t"
    HAL_FIR = "hal_fir"

    @property
    def active(self) -> bool:
        return self not in (Scenario.BASELINE, Scenario.PASSIVE)

    @property
    def growth(self) -> GrowthPolicy:
        return {
            Scenario.HAL_FI_LINEAR_T: GrowthPolicy.LINEAR_T,
            Scenario.HAL_FI_EXP_T: GrowthPolicy.EXPONENTIAL_T,
        }.get(self, GrowthPolicy.FIXED)


class LearnerConfig(BaseModel):
    """Inputs of one learner trajectory"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Scenario = Field(Scenario.PASSIVE, description="learning scenario")
    n0: int = Field(2430, ge=1, description="shots in round 0")
    n_b: int = Field(486, ge=1, description="shots per later round")
    i_max: int = Field(10, ge=1, description="rounds after round 0")
    param_mask: Optional[List[str]] = Field(None, description="Λ components to learn; the rest stay at the prior")
    p_test: Optional[Union[Literal["uniform"], List[float]]] = Field(
        None, description="testing distribution of HAL-FIR; uniform over the space by default"
    )
    tau: float = Field(0.95, gt=0, le=1, description="entropy filter threshold")
    stop_tolerance: Optional[float] = Field(None, gt=0, description="stop once ‖Δθ̂/ξ‖ falls below this")
    initial_weights: Optional[List[float]] = Field(None, description="round-0 query distribution over the initial space")
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)

    @field_validator("param_mask")
    @classmethod
    def _known_names(cls, names):
        if names is not None:
            try:
                ParamMask.from_names(names)
            except DomainError as e:
                raise ValueError(e.message)
        return names

    @field_validator("initial_weights")
    @classmethod
    def _normalized(cls, weights):
        if weights is None:
            return None
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("initial weights must be finite, nonnegative and not all zero")
        return [float(v) for v in w / w.sum()]

    @model_validator(mode="before")
    @classmethod
    def _fir_needs_test(cls, data):
        if isinstance(data, dict) and data.get("scenario") in (Scenario.HAL_FIR, Scenario.HAL_FIR.value):
            data = {**data, "p_test": data.get("p_test") or "uniform"}
        return data

    def mask(self) -> Optional[ParamMask]:
        return ParamMask.from_names(self.param_mask) if self.param_mask else None


class ThetaConfig(BaseModel):
    """θ* when known, and the prior calibration that frozen components are held at"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    truth: Optional[LambdaParams] = None
    prior: Optional[LambdaParams] = None
    xi: float = Field(XI, gt=0)

    def reference(self) -> LambdaParams:
        ref = self.prior if self.prior is not None else self.truth
        if ref is None:
            raise ConfigError("a parameter mask needs a prior calibration or θ*")
        return ref


class RoundRecord(BaseModel):
    round: int
    n_tot: int
    theta_hat: List[float]
    q: List[float]
    space_id: str
    t_max: float
    wall_ms: float


class RunRecord(BaseModel):
    scenario: Scenario
    run_id: int
    rounds: List[RoundRecord] = Field(default_factory=list)
    partial: bool = False

    @property
    def final_theta(self) -> Optional[LambdaParams]:
        if not self.rounds:
            return None
        return LambdaParams(**dict(zip(LAMBDA_NAMES, self.rounds[-1].theta_hat)))

    def thetas(self) -> List[LambdaParams]:
        return [LambdaParams(**dict(zip(LAMBDA_NAMES, r.theta_hat))) for r in self.rounds]


class Oracle(Protocol):
    readout_kind: str

    def remaining(self, space: QuerySpace) -> np.ndarray: ...

    def query(self, space: QuerySpace, indices: np.ndarray) -> np.ndarray: ...


def _with_frozen(theta: LambdaParams, prior: LambdaParams, mask: ParamMask) -> LambdaParams:
    values = prior.to_array()
    values[list(mask.indices)] = theta.to_array()[list(mask.indices)]
    return LambdaParams(**dict(zip(LAMBDA_NAMES, values)))


def _initial_distribution(space: QuerySpace, cfg: LearnerConfig) -> QueryDistribution:
    if cfg.initial_weights is None:
        return QueryDistribution.uniform(space)
    if len(cfg.initial_weights) != space.size:
        raise ConfigError(f"initial weights cover {len(cfg.initial_weights)} queries, space has {space.size}")
    return QueryDistribution.from_unnormalized(space, cfg.initial_weights)


def _test_distribution(space: QuerySpace, cfg: LearnerConfig) -> QueryDistribution:
    if cfg.p_test == "uniform":
        return QueryDistribution.uniform(space)
    weights = np.zeros(space.size)
    given = np.asarray(cfg.p_test, dtype=float)
    if given.size > space.size:
        raise ConfigError(f"p_test covers {given.size} queries, space has {space.size}")
    weights[:given.size] = given
    return QueryDistribution.from_unnormalized(space, weights)


def _select(theta: LambdaParams, noise: NoiseModel, space: QuerySpace, available: np.ndarray,
            n_tot: int, cfg: LearnerConfig, mask: Optional[ParamMask], xi: float) -> QueryDistribution:
    """Optimized, uniform-mixed query distribution over the entropy-filtered open queries"""
    open_queries = QuerySubset(space, np.flatnonzero(available > 0))
    upper = available / cfg.n_b
    subset = entropy_filter(theta, noise, space, cfg.tau, within=open_queries)
    if upper[subset.indices].sum() < 1.0:
        console.debug("entropy filter leaves too few shots, optimizing over all open queries")
        subset = open_queries
    if cfg.scenario == Scenario.HAL_FIR:
        q = optimize_fir(theta, noise, space, _test_distribution(space, cfg), upper, subset, mask, xi)
    else:
        q = optimize_fi(theta, noise, space, upper, subset, mask, xi)
    return mix_uniform(q, n_tot, subset)


def _estimate(d: Dataset, noise: NoiseModel, previous: Optional[LambdaParams], cfg: LearnerConfig,
              mask: Optional[ParamMask], prior: Optional[LambdaParams], rng: RngStream) -> LambdaParams:
    try:
        fresh = baseline_estimate(d, noise=noise, allow_missing=True)
    except (WeakSignalError, MissingDataError) as e:
        if previous is None and prior is None:
            raise
        console.debug(f"regression initialization skipped: {e.message}")
        fresh = None
    if fresh is not None and mask is not None:
        fresh = _with_frozen(fresh, prior, mask)
    if cfg.scenario == Scenario.BASELINE:
        return next(c for c in (fresh, previous, prior) if c is not None)

    candidates = [c for c in (fresh, previous if previous is not None else prior) if c is not None]
    init = min(candidates, key=lambda c: negative_log_likelihood(c, d, noise))
    return mle(d, noise, init, cfg.estimator, rng=rng, mask=mask, omega_max=d.space.nyquist_omega)


def run_learner(
    oracle: Oracle,
    theta_config: ThetaConfig,
    noise: NoiseModel,
    space: QuerySpace,
    cfg: LearnerConfig,
    rng: RngStream,
    run_id: int = 0,
    tracker: Optional[RunLogTracker] = None,
) -> RunRecord:
    """One learner trajectory: i_max + 1 rounds of sampling and estimation

    Raises BudgetExhaustedError carrying the rounds completed so far when the
    oracle runs out of shots.
    """
    if oracle.readout_kind != readout_kind(noise):
        raise ModelKindError(f"oracle answers {oracle.readout_kind} shots, noise model expects {readout_kind(noise)}")
    mask = cfg.mask()
    prior = theta_config.reference() if mask is not None else None
    if cfg.scenario.growth != space.growth:
        space = QuerySpace(space.times, growth=cfg.scenario.growth, increment=space.increment, spacing=space.spacing)
    sampler = rng.child("learner")
    fitter = rng.child("minibatch")
    scale = coordinate_scale(xi=theta_config.xi)

    record = RunRecord(scenario=cfg.scenario, run_id=run_id)
    d = Dataset(space, oracle.readout_kind)
    theta: Optional[LambdaParams] = None
    n_tot = 0
    try:
        for i in range(cfg.i_max + 1):
            start = time.perf_counter()
            if i == 0:
                batch = cfg.n0
                q = _initial_distribution(space, cfg)
            else:
                batch = cfg.n_b
                if space.growth != GrowthPolicy.FIXED:
                    space = grow_space(space)
                    d = d.regrid(space)
                if cfg.scenario.active:
                    q = _select(theta, noise, space, oracle.remaining(space), n_tot, cfg, mask, theta_config.xi)
                else:
                    q = QueryDistribution.uniform(space)
            indices = sample_batch(q, batch, oracle.remaining(space), sampler)
            d.add_batch(indices, oracle.query(space, indices))
            n_tot += batch

            previous = theta
            theta = _estimate(d, noise, previous, cfg, mask, prior, fitter)
            entry = RoundRecord(
                round=i,
                n_tot=n_tot,
                theta_hat=[float(v) for v in theta.to_array()],
                q=[float(v) for v in q.weights],
                space_id=space.snapshot_id,
                t_max=space.t_max,
                wall_ms=round((time.perf_counter() - start) * 1000, 3),
            )
            record.rounds.append(entry)
            if tracker is not None:
                tracker.log_round({"run_id": run_id, "scenario": cfg.scenario.value, **entry.model_dump()})
            console.debug(f"{cfg.scenario.value} run {run_id} round {i}: N_tot={n_tot}, t_max={space.t_max:.3g}")

            if cfg.stop_tolerance is not None and previous is not None:
                change = float(np.linalg.norm((theta.to_array() - previous.to_array()) / scale))
                if change < cfg.stop_tolerance:
                    console.debug(f"stopping after round {i}: ‖Δθ̂/ξ‖ = {change:.3g}")
                    break
    except BudgetExhaustedError as e:
        record.partial = True
        console.warn(f"{cfg.scenario.value} run {run_id}: oracle exhausted after {len(record.rounds)} rounds")
        raise BudgetExhaustedError(e.message, record) from e
    return record
