"""
Noise models: readout, imperfect pulse shaping and decoherence
Composes them into the noisy single-shot likelihood and its Λ-gradient.
"""
import math
from typing import Annotated, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, stats

from src.errors import ConfigError, DomainError, ModelKindError
from src.hamiltonian import rabi_terms
from src.models import LambdaParams, Prep, Query

_MIN_FLIP = 1e-12


# ---------------------------------------------------------------- readout

class BitFlipReadout(BaseModel):
    """Binary classifier readout: r0 = p(ỹ=1|y=0), r1 = p(ỹ=0|y=1)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["bit_flip"] = "bit_flip"
    r0: float = Field(0.0, description="p(read 1 | true 0)")
    r1: float = Field(0.0, description="p(read 0 | true 1)")

    @model_validator(mode="after")
    def _check_rates(self):
        if self.r0 < 0 or self.r1 < 0 or self.r0 + self.r1 >= 1:
            raise ConfigError(f"readout rates need 0 ≤ r0, r1 and r0 + r1 < 1 (got {self.r0}, {self.r1})")
        return self

    def flip_rates(self) -> Tuple[float, float]:
        return self.r0, self.r1


class GaussianReadout(BaseModel):
    """Complex readout signal, one bivariate normal per hidden outcome"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["gaussian"] = "gaussian"
    mean0: Tuple[float, float]
    mean1: Tuple[float, float]
    cov0: Tuple[Tuple[float, float], Tuple[float, float]]
    cov1: Tuple[Tuple[float, float], Tuple[float, float]]

    @model_validator(mode="after")
    def _check_covariances(self):
        for name in ("cov0", "cov1"):
            cov = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ConfigError(f"{name} must be symmetric positive definite")
        if np.allclose(self.mean0, self.mean1):
            raise ConfigError("readout class means must differ")
        return self

    @classmethod
    def from_flip_rates(cls, r0: float, r1: float) -> "GaussianReadout":
        """Means at ±1+0i with isotropic spreads reproducing (r0, r1) under the midpoint classifier"""
        sigmas = [1.0 / stats.norm.ppf(1.0 - max(r, _MIN_FLIP)) for r in (r0, r1)]
        return cls(
            mean0=(1.0, 0.0),
            mean1=(-1.0, 0.0),
            cov0=((sigmas[0] ** 2, 0.0), (0.0, sigmas[0] ** 2)),
            cov1=((sigmas[1] ** 2, 0.0), (0.0, sigmas[1] ** 2)),
        )

    def _axis(self) -> Tuple[np.ndarray, np.ndarray]:
        mu0, mu1 = np.asarray(self.mean0), np.asarray(self.mean1)
        return mu1 - mu0, 0.5 * (mu0 + mu1)

    def flip_rates(self) -> Tuple[float, float]:
        """Misclassification rates of the midpoint linear classifier"""
        w, _ = self._axis()
        half_gap = 0.5 * float(w @ w)
        rates = []
        for cov in (self.cov0, self.cov1):
            spread = math.sqrt(float(w @ np.asarray(cov) @ w))
            rates.append(float(stats.norm.cdf(-half_gap / spread)))
        return rates[0], rates[1]

    def classify(self, signals: np.ndarray) -> np.ndarray:
        """Bits assigned by the midpoint classifier"""
        w, mid = self._axis()
        signals = np.asarray(signals, dtype=complex)
        points = np.stack([signals.real, signals.imag], axis=-1)
        return ((points - mid) @ w > 0).astype(np.int8)

    def densities(self, signals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        signals = np.atleast_1d(np.asarray(signals, dtype=complex))
        points = np.stack([signals.real, signals.imag], axis=-1)
        f0 = stats.multivariate_normal(self.mean0, self.cov0).pdf(points)
        f1 = stats.multivariate_normal(self.mean1, self.cov1).pdf(points)
        return np.atleast_1d(f0), np.atleast_1d(f1)


ReadoutModel = Annotated[Union[BitFlipReadout, GaussianReadout], Field(discriminator="kind")]


def fit_gaussian_readout(signals0: Sequence[complex], signals1: Sequence[complex]) -> GaussianReadout:
    """Fit class-conditional normals to labelled calibration signals"""
    params = {}
    for label, signals in (("0", signals0), ("1", signals1)):
        signals = np.asarray(signals, dtype=complex)
        if signals.size < 3:
            raise DomainError(f"need at least 3 calibration signals for class {label}")
        points = np.stack([signals.real, signals.imag], axis=-1)
        params[f"mean{label}"] = tuple(points.mean(axis=0))
        params[f"cov{label}"] = tuple(map(tuple, np.cov(points, rowvar=False)))
    return GaussianReadout(**params)


# ---------------------------------------------------------------- pulse shape

class PulseShapeModel(BaseModel):
    """Effective time offset Δt_eff(ω) = a / (ω + bω²)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float = Field(0.0, ge=0, description="dimensionless numerator")
    b: float = Field(0.0, ge=0, description="seconds")


def delta_t_eff(p: PulseShapeModel, omega_j: float) -> float:
    if not omega_j > 0:
        raise DomainError(f"Δt_eff needs ω > 0, got {omega_j}")
    return p.a / (omega_j + p.b * omega_j ** 2)


def pulse_phase(p: PulseShapeModel, omega: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2ω(t + Δt_eff(ω)) and its ω-derivative

    Written as 2ωt + 2a/(1 + bω), which stays finite as ω → 0.
    """
    omega = np.asarray(omega, dtype=float)
    t = np.asarray(t, dtype=float)
    denom = 1.0 + p.b * omega
    # ω = 0 is an undriven block: no offset, although 2a/(1 + bω) → 2a as ω → 0⁺
    moving = omega > 0
    phase = 2.0 * omega * t + np.where(moving, 2.0 * p.a / denom, 0.0)
    d_phase = 2.0 * t - np.where(moving, 2.0 * p.a * p.b / denom ** 2, 0.0)
    return phase, d_phase


def fit_pulse_model(omegas: Sequence[float], offsets: Sequence[float]) -> PulseShapeModel:
    """Least-squares (a, b) from per-block offset estimates

    Fitted as ω·Δt_eff = a / (1 + bω), which keeps residuals of order one.
    """
    omegas = np.asarray(omegas, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if omegas.size < 2 or np.any(omegas <= 0):
        raise DomainError("need at least two positive frequencies to fit the pulse model")
    scale = float(np.median(omegas))
    phases = omegas * offsets
    a0 = float(np.max(phases))

    def model(w, a, b_scaled):
        return a / (1.0 + b_scaled * w / scale)

    (a, b_scaled), _ = optimize.curve_fit(
        model, omegas, phases, p0=(max(a0, 1e-9), 0.1), bounds=([0.0, 0.0], [np.inf, np.inf])
    )
    return PulseShapeModel(a=float(a), b=float(b_scaled / scale))


# ---------------------------------------------------------------- decoherence

class NoDecoherence(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["none"] = "none"


class SingleParamDecoherence(BaseModel):
    """1 − p_d = exp(−(t − t0)/μ)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["single_param"] = "single_param"
    mu: float
    t0: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not self.mu > 0 or self.t0 < 0:
            raise ConfigError("single_param decoherence needs mu > 0 and t0 ≥ 0")
        return self


class TwoParamDecoherence(BaseModel):
    """Exponential decay with a separate μ per preparation operator"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["two_param"] = "two_param"
    mu_u0: float
    mu_u1: float
    t0: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not (self.mu_u0 > 0 and self.mu_u1 > 0) or self.t0 < 0:
            raise ConfigError("two_param decoherence needs positive mu_u0, mu_u1 and t0 ≥ 0")
        return self


def _check_t_times(pairs):
    for label, t1, t2 in pairs:
        if not (t1 > 0 and t2 > 0):
            raise ConfigError(f"{label}: T1 and T2 must be positive")
        if t2 > 2 * t1:
            raise ConfigError(f"{label}: T2 = {t2} exceeds 2·T1 = {2 * t1}")


class TwoQubitDecoherence(BaseModel):
    """Amplitude + phase damping on both qubits, reduced to a depolarizing probability via unitarity"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["two_qubit"] = "two_qubit"
    t1_ctrl: float
    t2_ctrl: float
    t1_tgt: float
    t2_tgt: float

    @model_validator(mode="after")
    def _check(self):
        _check_t_times([("control", self.t1_ctrl, self.t2_ctrl), ("target", self.t1_tgt, self.t2_tgt)])
        return self

    @property
    def min_coherence_time(self) -> float:
        return min(self.t1_ctrl, self.t2_ctrl, self.t1_tgt, self.t2_tgt)


class OneQubitDecoherence(BaseModel):
    """Amplitude + phase damping on the target qubit only"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["one_qubit"] = "one_qubit"
    t1: float
    t2: float

    @model_validator(mode="after")
    def _check(self):
        _check_t_times([("target", self.t1, self.t2)])
        return self


DecoherenceModel = Annotated[
    Union[NoDecoherence, SingleParamDecoherence, TwoParamDecoherence, TwoQubitDecoherence, OneQubitDecoherence],
    Field(discriminator="kind"),
]


def damping_factors(t1: float, t2: float, t) -> Tuple[np.ndarray, np.ndarray]:
    """(‖R‖_F², ‖R[:, 0]‖²) of one qubit's amplitude∘phase damping transfer matrix"""
    t = np.asarray(t, dtype=float)
    gamma_a = -np.expm1(-t / (2.0 * t1))
    gamma_p = -np.expm1(-t * (1.0 / t2 - 1.0 / (2.0 * t1)))
    coherence = (1.0 - gamma_a) * (1.0 - gamma_p)
    full = 1.0 + 2.0 * coherence + (1.0 - gamma_a) ** 2 + gamma_a ** 2
    first_col = 1.0 + gamma_a ** 2
    return full, first_col


def depolarization_prob(d: DecoherenceModel, t, prep: Union[Prep, int, np.ndarray] = Prep.U0):
    """Depolarizing probability p_d(t); vectorized over t (and prep for TwoParam)"""
    t_arr = np.asarray(t, dtype=float)
    if isinstance(d, NoDecoherence):
        p = np.zeros_like(t_arr)
    elif isinstance(d, SingleParamDecoherence):
        p = -np.expm1(-np.clip(t_arr - d.t0, 0.0, None) / d.mu)
    elif isinstance(d, TwoParamDecoherence):
        mu = np.where(np.asarray(prep) == int(Prep.U1), d.mu_u1, d.mu_u0)
        p = -np.expm1(-np.clip(t_arr - d.t0, 0.0, None) / mu)
    elif isinstance(d, TwoQubitDecoherence):
        a1, b1 = damping_factors(d.t1_ctrl, d.t2_ctrl, t_arr)
        a2, b2 = damping_factors(d.t1_tgt, d.t2_tgt, t_arr)
        p = 1.0 - (a1 * a2 - b1 * b2) / 15.0
    elif isinstance(d, OneQubitDecoherence):
        a, b = damping_factors(d.t1, d.t2, t_arr)
        p = 1.0 - (a - b) / 3.0
    else:
        raise ModelKindError(f"unknown decoherence model {type(d).__name__}")
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


# ---------------------------------------------------------------- composite

class NoiseModel(BaseModel):
    """Readout, pulse-shape and decoherence sub-models"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    readout: ReadoutModel = Field(default_factory=BitFlipReadout)
    pulse: PulseShapeModel = Field(default_factory=PulseShapeModel)
    decoherence: DecoherenceModel = Field(default_factory=NoDecoherence)

    def flip_rates(self) -> Tuple[float, float]:
        return self.readout.flip_rates()

    def without_readout(self) -> "NoiseModel":
        return self.model_copy(update={"readout": BitFlipReadout()})


def noisy_probability(
    theta: np.ndarray,
    noise: NoiseModel,
    meas_idx,
    prep_idx,
    t,
    apply_readout: bool = True,
    gradient: bool = False,
):
    """Vectorized p̃(ỹ=0|x; Λ) and optionally ∂p̃/∂Λ with shape (n, 6)

    With apply_readout=False the readout channel is skipped, which gives the
    hidden-outcome probability used with GaussianSignal data.
    """
    meas_idx = np.atleast_1d(np.asarray(meas_idx, dtype=int))
    prep_idx = np.atleast_1d(np.asarray(prep_idx, dtype=int))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    terms = rabi_terms(theta, meas_idx, prep_idx)
    phase, d_phase = pulse_phase(noise.pulse, terms.omega, t)
    cos_ph, sin_ph = np.cos(phase), np.sin(phase)
    rabi = terms.offset + terms.cos_amp * cos_ph + terms.sin_amp * sin_ph

    p_d = depolarization_prob(noise.decoherence, t, prep_idx)
    r0, r1 = noise.flip_rates() if apply_readout else (0.0, 0.0)
    contrast = (1.0 - p_d) * (1.0 - r0 - r1)
    p = np.clip(0.5 * (1.0 - r0 + r1 + contrast * rabi), 0.0, 1.0)
    if not gradient:
        return p

    d_rabi = np.zeros((t.size, 3))
    d_rabi[:, 0] = (terms.sin_amp * cos_ph - terms.cos_amp * sin_ph) * d_phase
    d_rabi[:, 1:] = (
        terms.d_offset + terms.d_cos * cos_ph[:, None] + terms.d_sin * sin_ph[:, None]
    )
    grad = np.zeros((t.size, 6))
    rows = np.arange(t.size)
    for k in range(3):
        grad[rows, 3 * terms.block + k] = 0.5 * contrast * d_rabi[:, k]
    return p, grad


def noisy_likelihood(l: LambdaParams, n: NoiseModel, q: Query) -> float:
    """p̃(ỹ=0 | q); p̃(ỹ=1 | q) is its complement"""
    p = noisy_probability(l.to_array(), n, [q.meas.index], [int(q.prep)], [q.t])
    return float(p[0])


def noisy_rabi(l: LambdaParams, n: NoiseModel, q: Query) -> float:
    return 2.0 * noisy_likelihood(l, n, q) - 1.0


def signal_density(r: ReadoutModel, c: complex, y: int) -> float:
    """Bivariate normal density of (Re c, Im c) under class y"""
    if not isinstance(r, GaussianReadout):
        raise ModelKindError("signal densities exist only for GaussianSignal readout")
    if y not in (0, 1):
        raise DomainError(f"class label must be 0 or 1, got {y}")
    f0, f1 = r.densities(np.array([c]))
    return float(f0[0] if y == 0 else f1[0])


def rabi_readout_correction(p_hat0, r0: float, r1: float):
    """Invert the bit-flip channel on an observed p(ŷ=0); the result is not clamped

    Exact inverse of p̃(0) = (1 − r0)·p(0) + r1·p(1), i.e. (2p̂₀ − 1 + r0 − r1)/(1 − r0 − r1).
    Sources that write the correction as (2p̂₀ − 1 − r0 + r1)/(1 − r0 − r1) label the flip
    rates the other way round; pass (r1, r0) to reproduce their numbers, e.g. 1.0684 for
    p̂₀ = 1 at (r0, r1) = (0.0078, 0.033).
    """
    if r0 + r1 >= 1:
        raise DomainError(f"correction undefined for r0 + r1 = {r0 + r1} ≥ 1")
    p_hat0 = np.asarray(p_hat0, dtype=float)
    value = (p_hat0 * (1 - r1 + r0) - (1 - p_hat0) * (1 + r1 - r0)) / (1 - r0 - r1)
    return float(value) if np.ndim(value) == 0 else value


def effective_flip_rates(readout: Optional[ReadoutModel]) -> Tuple[float, float]:
    return (0.0, 0.0) if readout is None else readout.flip_rates()


def noisy_likelihood_and_gradient(theta: np.ndarray, noise: NoiseModel, meas_idx, prep_idx, t, apply_readout: bool = True):
    """(p̃, ∂p̃/∂Λ) for arrays of queries"""
    return noisy_probability(theta, noise, meas_idx, prep_idx, t, apply_readout=apply_readout, gradient=True)
