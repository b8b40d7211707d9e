"""
Learning metrics
RMSE, testing error, query advantage, scaling slopes and the decoherence
model comparison.
"""
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize, stats

from src import console
from src.dataset import Dataset
from src.errors import DomainError, RangeError
from src.estimate import rabi_from_data
from src.fisher import XI, ParamMask, coordinate_scale
from src.hamiltonian import lambda_to_j
from src.models import JParams, LambdaParams
from src.noise import (
    DecoherenceModel,
    GaussianReadout,
    NoiseModel,
    SingleParamDecoherence,
    TwoParamDecoherence,
    noisy_probability,
)
from src.oracle import HeldOutShots

Estimate = Union[LambdaParams, JParams, Sequence[float]]
_LOG_FLOOR = 1e-300
_KL_CLIP = 1e-12


def _as_array(theta: Estimate, coords: str) -> np.ndarray:
    if coords == "j":
        if isinstance(theta, LambdaParams):
            return lambda_to_j(theta).to_array()
        if isinstance(theta, JParams):
            return theta.to_array()
    else:
        if isinstance(theta, LambdaParams):
            return theta.to_array()
        if isinstance(theta, JParams):
            raise DomainError("Λ-coordinate RMSE needs LambdaParams estimates")
    return np.asarray(theta, dtype=float)


def rmse(
    estimates: Sequence[Estimate],
    theta_star: Optional[Estimate] = None,
    xi: float = XI,
    coords: str = "j",
    mask: Optional[ParamMask] = None,
) -> float:
    """sqrt(Σ_k mean_runs ((θ̂_k − θ*_k)/ξ_k)²)

    J coordinates use ξ on every component; Λ coordinates scale only the
    frequencies. Without θ* the mean of the estimates stands in for it.
    """
    if coords not in ("j", "lambda"):
        raise DomainError(f"coords must be 'j' or 'lambda', got {coords!r}")
    if not estimates:
        raise DomainError("rmse needs at least one estimate")
    values = np.array([_as_array(e, coords) for e in estimates])
    if theta_star is None:
        if len(values) < 2:
            raise DomainError("rmse against the run mean needs at least two estimates")
        star = values.mean(axis=0)
    else:
        star = _as_array(theta_star, coords)
    scale = np.full(values.shape[1], xi) if coords == "j" else coordinate_scale(xi=xi)
    deviation = (values - star) / scale
    if mask is not None:
        deviation = deviation[:, list(mask.indices)]
    return float(np.sqrt(np.sum(np.mean(deviation ** 2, axis=0))))


def _outcome_likelihood(theta: LambdaParams, noise: NoiseModel, test: HeldOutShots) -> np.ndarray:
    space, idx = test.space, test.indices
    signal = np.iscomplexobj(test.outcomes)
    p = noisy_probability(theta.to_array(), noise, space.meas_idx[idx], space.prep_idx[idx], space.t[idx],
                          apply_readout=not signal)
    if signal:
        if not isinstance(noise.readout, GaussianReadout):
            raise DomainError("signal test shots need a GaussianSignal readout model")
        f0, f1 = noise.readout.densities(test.outcomes)
        return f0 * p + f1 * (1.0 - p)
    return np.where(np.asarray(test.outcomes) == 0, p, 1.0 - p)


def testing_error(theta_hat: LambdaParams, theta_star: LambdaParams, noise: NoiseModel,
                  testset: HeldOutShots) -> float:
    """Mean log-likelihood ratio log p̃(y|x; θ*) − log p̃(y|x; θ̂) over held-out shots"""
    l_hat = _outcome_likelihood(theta_hat, noise, testset)
    l_star = _outcome_likelihood(theta_star, noise, testset)
    clipped = int(np.count_nonzero(l_hat < _LOG_FLOOR))
    if clipped:
        console.warn(f"testing error: {clipped} shots impossible under θ̂, clipped at log(1e-300)")
    ratio = np.log(np.maximum(l_star, _LOG_FLOOR)) - np.log(np.maximum(l_hat, _LOG_FLOOR))
    return float(np.mean(ratio))


Curve = Tuple[Sequence[float], Sequence[float]]


def _queries_needed(curve: Curve, epsilon: float) -> float:
    n, err = (np.asarray(a, dtype=float) for a in curve)
    if n.size < 2 or np.any(n <= 0) or np.any(err <= 0):
        raise RangeError("learning curves need at least two positive (N, ε) points")
    if not err.min() <= epsilon <= err.max():
        raise RangeError(f"ε = {epsilon:.4g} lies outside the curve range [{err.min():.4g}, {err.max():.4g}]")
    order = np.argsort(err)
    return float(np.exp(np.interp(np.log(epsilon), np.log(err[order]), np.log(n[order]))))


def query_advantage(curve_method: Curve, curve_baseline: Curve, epsilon: float) -> float:
    """1 − N_method(ε)/N_baseline(ε), both read off by log-log interpolation"""
    return 1.0 - _queries_needed(curve_method, epsilon) / _queries_needed(curve_baseline, epsilon)


class ScalingFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    n_points: int


def fit_scaling_slope(curve: Curve, window: Optional[Tuple[float, float]] = None) -> ScalingFit:
    """Least squares line through (log N, log ε) restricted to N in the window"""
    n, err = (np.asarray(a, dtype=float) for a in curve)
    keep = (n > 0) & (err > 0)
    if window is not None:
        keep &= (n >= window[0]) & (n <= window[1])
    n, err = n[keep], err[keep]
    if n.size < 4:
        raise RangeError(f"slope fit needs at least 4 points in the window, got {n.size}")
    if np.ptp(np.log(n)) == 0:
        raise RangeError("slope fit window has a single N value")
    fit = stats.linregress(np.log(n), np.log(err))
    return ScalingFit(float(fit.slope), float(fit.stderr), float(fit.intercept), int(n.size))


def rabi_rmse(inferred: Sequence[float], model: Sequence[float]) -> float:
    inferred, model = np.asarray(inferred, dtype=float), np.asarray(model, dtype=float)
    return float(np.sqrt(np.mean((inferred - model) ** 2)))


def kl_binary(p_data: Sequence[float], p_model: Sequence[float]) -> float:
    """Mean D_KL(Bernoulli(p_data) || Bernoulli(p_model))"""
    p = np.clip(np.asarray(p_data, dtype=float), _KL_CLIP, 1 - _KL_CLIP)
    q = np.clip(np.asarray(p_model, dtype=float), _KL_CLIP, 1 - _KL_CLIP)
    return float(np.mean(p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))))


def _rabi_vectors(d: Dataset, noise: NoiseModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(query indices with data, inferred Rabi values, observed p(ŷ = 0))"""
    curves = rabi_from_data(d, noise.readout, allow_missing=True)
    space = d.space
    index = np.flatnonzero(d.ledger > 0)
    inferred = np.zeros(space.size)
    for c in curves.values():
        rows = space.indices_of(np.full(c.size, c.meas), np.full(c.size, c.prep), c.times)
        inferred[rows] = c.values
    if d.is_signal:
        zeros = np.array([np.count_nonzero(noise.readout.classify(d.shots(int(i))) == 0) for i in index])
        observed = zeros / d.ledger[index]
    else:
        n, zeros = d.counts()
        observed = zeros[index] / n[index]
    return index, inferred[index], observed


def _model_rabi(theta: LambdaParams, noise: NoiseModel, space, index: np.ndarray) -> np.ndarray:
    hidden = noisy_probability(theta.to_array(), noise, space.meas_idx[index], space.prep_idx[index],
                               space.t[index], apply_readout=False)
    return 2.0 * hidden - 1.0


def fit_decoherence(d: Dataset, theta: LambdaParams, kind: str, base_noise: Optional[NoiseModel] = None,
                    t0: Optional[float] = None) -> DecoherenceModel:
    """Bounded least-squares fit of the exponential decoherence models to the inferred Rabi curves"""
    base_noise = base_noise or NoiseModel()
    t0 = d.space.t_min if t0 is None else t0
    index, inferred, _ = _rabi_vectors(d, base_noise)

    def build(log_mu):
        mu = np.exp(log_mu)
        if kind == "single_param":
            return SingleParamDecoherence(mu=float(mu[0]), t0=t0)
        return TwoParamDecoherence(mu_u0=float(mu[0]), mu_u1=float(mu[1]), t0=t0)

    if kind not in ("single_param", "two_param"):
        raise DomainError(f"only single_param and two_param decoherence can be fitted, got {kind!r}")
    n_params = 1 if kind == "single_param" else 2

    def residual(log_mu):
        noise = base_noise.model_copy(update={"decoherence": build(log_mu)})
        return _model_rabi(theta, noise, d.space, index) - inferred

    start = np.full(n_params, np.log(10 * d.space.t_max))
    fit = optimize.least_squares(residual, start, bounds=(np.log(1e-8), np.log(1.0)))
    return build(fit.x)


def decoherence_fit_report(d: Dataset, theta: LambdaParams, models: Sequence[DecoherenceModel],
                           base_noise: Optional[NoiseModel] = None) -> pd.DataFrame:
    """Per model: RMSE between inferred and model Rabi, mean KL of the outcome distributions"""
    base_noise = base_noise or NoiseModel()
    index, inferred, observed = _rabi_vectors(d, base_noise)
    rows: List[dict] = []
    for model in models:
        noise = base_noise.model_copy(update={"decoherence": model})
        model_rabi = _model_rabi(theta, noise, d.space, index)
        p_model = noisy_probability(theta.to_array(), noise, d.space.meas_idx[index],
                                    d.space.prep_idx[index], d.space.t[index])
        rows.append({
            "model": model.kind,
            "parameters": model.model_dump_json(exclude={"kind"}),
            "rmse": rabi_rmse(inferred, model_rabi),
            "kl": kl_binary(observed, p_model),
        })
    return pd.DataFrame(rows)
