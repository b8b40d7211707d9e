"""
Staged parameter estimation
1. Rabi curves from shots (readout-corrected, or per-query MLE for signals)
2. Block frequencies from a Fourier / normal-equation scan, refined on the
   regression residual
3. Regression initialization of (δ, φ) per block
4. Maximum likelihood: Adam in Λ, Adam in J, then L-BFGS-B in J
"""
import math
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, stats

from src import console
from src.dataset import Dataset
from src.errors import (
    DomainError,
    MissingDataError,
    ModelKindError,
    NumericalError,
    SingularityError,
    WeakSignalError,
)
from src.fisher import ParamMask, coordinate_scale, jacobian_lambda_j
from src.hamiltonian import j_to_lambda, lambda_to_j, rabi_terms
from src.models import (
    HALF_PI,
    J_NAMES,
    LAMBDA_NAMES,
    MEAS_ORDER,
    OMEGA_INDICES,
    Meas,
    JParams,
    LambdaParams,
    canonical_block,
)
from src.noise import (
    GaussianReadout,
    NoiseModel,
    PulseShapeModel,
    ReadoutModel,
    depolarization_prob,
    effective_flip_rates,
    noisy_likelihood_and_gradient,
    noisy_probability,
    pulse_phase,
    rabi_readout_correction,
)
from src.optimizers import Adam
from src.query_space import QuerySpace
from src.rng import RngStream

MIN_CURVE_POINTS = 8
WEAK_SIGNAL = 0.05
_LOG_FLOOR = 1e-300


class EstimatorConfig(BaseModel):
    """Stage toggles and step sizes of the maximum-likelihood solve"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    stage_lambda: bool = Field(True, description="Adam in Λ coordinates")
    stage_j: bool = Field(True, description="Adam in J coordinates")
    stage_quasi_newton: bool = Field(True, description="L-BFGS-B refinement in J")
    eta0: float = Field(1e-3, gt=0, description="Adam step at the reference shot count")
    n_ref: int = Field(2430, ge=1, description="shot count at which the step equals eta0")
    batch_size: int = Field(256, ge=1)
    max_epochs: int = Field(50, ge=1)
    plateau_tol: float = Field(1e-7, gt=0, description="relative loss change ending a stochastic stage")
    qn_gtol: float = Field(1e-8, gt=0, description="projected-gradient tolerance of L-BFGS-B")
    qn_maxiter: int = Field(500, ge=1)
    xi: float = Field(1e6, gt=0, description="frequency normalization (s⁻¹)")

    def step_size(self, n_shots: int) -> float:
        """η ∝ 1/√N, capped at eta0"""
        return self.eta0 * min(1.0, math.sqrt(self.n_ref / max(n_shots, 1)))


# ---------------------------------------------------------------- Rabi curves

class RabiCurve:
    """Inferred p_rabi over the evolution times of one (meas, prep) pair"""

    def __init__(self, meas: int, prep: int, times, values, counts):
        self.meas = int(meas)
        self.prep = int(prep)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.counts = np.asarray(counts, dtype=float)

    @property
    def size(self) -> int:
        return int(self.times.size)

    def with_values(self, values) -> "RabiCurve":
        return RabiCurve(self.meas, self.prep, self.times, values, self.counts)

    def __repr__(self) -> str:
        return f"RabiCurve({MEAS_ORDER[self.meas].value}, U{self.prep}, n={self.size})"


RabiCurves = Dict[Tuple[int, int], RabiCurve]


def curves_from_values(space: QuerySpace, values: np.ndarray, counts: np.ndarray) -> RabiCurves:
    """Group per-query Rabi values into curves, skipping queries without shots"""
    curves: RabiCurves = {}
    for m in range(len(MEAS_ORDER)):
        for u in (0, 1):
            sel = (space.meas_idx == m) & (space.prep_idx == u) & (counts > 0)
            if np.any(sel):
                curves[(m, u)] = RabiCurve(m, u, space.t[sel], values[sel], counts[sel])
    return curves


def _signal_rabi(readout: GaussianReadout, signals: np.ndarray) -> float:
    """argmax over q ∈ [−1, 1] of Σ log(f0·(1+q)/2 + f1·(1−q)/2)"""
    f0, f1 = readout.densities(signals)

    def nll(q):
        return -np.sum(np.log(np.maximum(0.5 * (f0 * (1 + q) + f1 * (1 - q)), _LOG_FLOOR)))

    result = optimize.minimize_scalar(nll, bounds=(-1.0, 1.0), method="bounded", options={"xatol": 1e-10})
    return float(np.clip(result.x, -1.0, 1.0))


def _missing_check(d: Dataset, allow_missing: bool):
    if allow_missing:
        return
    empty = np.flatnonzero(d.ledger == 0)
    if empty.size:
        raise MissingDataError(f"query {d.space.query(int(empty[0])).key()} has no shots")


def rabi_from_data(d: Dataset, readout: Optional[ReadoutModel] = None, allow_missing: bool = False) -> RabiCurves:
    """Per-query p̂_rabi: affine readout correction for bits (unclamped), 1-D MLE for signals"""
    _missing_check(d, allow_missing)
    counts = d.ledger.astype(float)
    values = np.zeros(d.space.size)
    if d.is_signal:
        if not isinstance(readout, GaussianReadout):
            raise ModelKindError("signal datasets need a GaussianSignal readout model")
        for i in np.flatnonzero(counts > 0):
            values[i] = _signal_rabi(readout, d.shots(int(i)))
    else:
        r0, r1 = effective_flip_rates(readout)
        n, zeros = d.counts()
        live = n > 0
        values[live] = rabi_readout_correction(zeros[live] / n[live], r0, r1)
    return curves_from_values(d.space, values, counts)


# ---------------------------------------------------------------- frequencies

def _grid_spacing(curves: Iterable[RabiCurve], grid=None) -> float:
    if isinstance(grid, QuerySpace):
        return grid.spacing
    if grid is not None:
        diffs = np.diff(np.unique(np.asarray(grid, dtype=float)))
        return float(diffs.min())
    diffs = [np.diff(np.unique(c.times)) for c in curves if c.size > 1]
    return float(min(d.min() for d in diffs))


def regression_residuals(omegas: np.ndarray, curves: Sequence[RabiCurve], chunk: int = 256) -> np.ndarray:
    """E(ω) = Σ_curves min_{A,B,C} Σ w·(p̂ − C − A cos 2ωt − B sin 2ωt)² via the normal equations"""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    total = np.zeros(omegas.size)
    for start in range(0, omegas.size, chunk):
        w_block = omegas[start:start + chunk]
        for c in curves:
            w = c.counts
            phase = 2.0 * w_block[:, None] * c.times[None, :]
            basis = np.stack([np.broadcast_to(np.ones_like(c.times), phase.shape), np.cos(phase), np.sin(phase)], axis=1)
            gram = np.einsum("kan,kbn,n->kab", basis, basis, w)
            rhs = np.einsum("kan,n->ka", basis, w * c.values)
            gram = gram + 1e-12 * np.trace(gram, axis1=1, axis2=2)[:, None, None] * np.eye(3)
            coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
            total[start:start + chunk] += float(w @ (c.values ** 2)) - np.einsum("ka,ka->k", coef, rhs)
    return np.maximum(total, 0.0)


def _is_uniform_complete(curves: Sequence[RabiCurve], spacing: float) -> bool:
    reference = curves[0].times
    if any(c.size != reference.size or not np.allclose(c.times, reference) for c in curves):
        return False
    return bool(np.allclose(np.diff(reference), spacing, rtol=1e-6, atol=0.0))


def resolvable_omega(spacing: float) -> float:
    """Largest ω a Rabi curve sampled every `spacing` can show without aliasing

    The curve oscillates at 2ω, so this is half the π/δt bound the Λ bound box uses.
    """
    return math.pi / (2 * spacing)


def _coarse_peak(curves: Sequence[RabiCurve], spacing: float, span: float) -> float:
    bin_width = math.pi / span
    if _is_uniform_complete(curves, spacing):
        n_fft = 8 * curves[0].size
        power = sum(np.abs(np.fft.rfft(c.values - c.values.mean(), n=n_fft)) ** 2 for c in curves)
        omegas = math.pi * np.fft.rfftfreq(n_fft, d=spacing)
        power, omegas = power[1:], omegas[1:]
        best = int(np.argmax(power))
        if np.count_nonzero(power == power[best]) > 1:
            console.debug("tied Fourier peaks, taking the lowest frequency")
        return float(omegas[best])
    candidates = np.arange(bin_width / 16, resolvable_omega(spacing), bin_width / 4)
    residuals = regression_residuals(candidates, curves)
    return float(candidates[int(np.argmin(residuals))])


def estimate_block_frequency(curves: Sequence[RabiCurve], spacing: float) -> float:
    """ω̂ of one control block from its Rabi curves"""
    curves = [c for c in curves if c.size >= MIN_CURVE_POINTS]
    if not curves:
        raise DomainError(f"frequency estimation needs at least {MIN_CURVE_POINTS} points per curve")
    if max(float(np.abs(c.values).max()) for c in curves) < WEAK_SIGNAL:
        raise WeakSignalError("Rabi curves are flat (max |p̂| < 0.05)")
    t_all = np.concatenate([c.times for c in curves])
    span = float(t_all.max() - t_all.min()) + spacing
    bin_width = math.pi / span
    floor, ceiling = bin_width / 16, resolvable_omega(spacing)

    coarse = _coarse_peak(curves, spacing, span)
    fine = np.linspace(max(floor, coarse - bin_width), min(ceiling, coarse + bin_width), 33)
    residuals = regression_residuals(fine, curves)
    best = int(np.argmin(residuals))
    step = fine[1] - fine[0]
    lo, hi = max(floor, fine[best] - step), min(ceiling, fine[best] + step)
    refined = optimize.minimize_scalar(
        lambda w: float(regression_residuals([w], curves)[0]),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-9 * fine[best]},
    )
    if refined.fun <= residuals[best]:
        return float(refined.x)
    return float(fine[best])


def estimate_frequencies(curves: RabiCurves, grid=None) -> Tuple[float, float]:
    """(ω̂0, ω̂1): U0 curves give ω0, U1 curves give ω1"""
    spacing = _grid_spacing(curves.values(), grid)
    return tuple(
        estimate_block_frequency([c for c in curves.values() if c.prep == j], spacing) for j in (0, 1)
    )


# ---------------------------------------------------------------- regression init

class BlockFit(NamedTuple):
    omega: float
    delta: float
    phi: float
    residual: float
    fallback: bool


def _block_predictions(params: np.ndarray, block: int, curves: Sequence[RabiCurve],
                       pulse: PulseShapeModel) -> List[np.ndarray]:
    theta = np.zeros(6)
    theta[3 * block:3 * block + 3] = params
    out = []
    for c in curves:
        terms = rabi_terms(theta, np.full(c.size, c.meas), np.full(c.size, block))
        phase, _ = pulse_phase(pulse, terms.omega, c.times)
        out.append(terms.offset + terms.cos_amp * np.cos(phase) + terms.sin_amp * np.sin(phase))
    return out


def _block_residual(params, block, curves, pulse) -> float:
    preds = _block_predictions(np.asarray(params, dtype=float), block, curves, pulse)
    return float(sum(np.sum(c.counts * (c.values - p) ** 2) for c, p in zip(curves, preds)))


def _linear_coefficients(curve: RabiCurve, omega: float, pulse: PulseShapeModel) -> np.ndarray:
    phase, _ = pulse_phase(pulse, np.full(curve.size, omega), curve.times)
    basis = np.stack([np.ones(curve.size), np.cos(phase), np.sin(phase)], axis=1)
    root_w = np.sqrt(curve.counts)
    coef, *_ = np.linalg.lstsq(basis * root_w[:, None], curve.values * root_w, rcond=None)
    return coef


def fit_block(curves: Sequence[RabiCurve], omega: float, block: int,
              pulse: Optional[PulseShapeModel] = None, omega_max: Optional[float] = None,
              xi: float = 1e6) -> BlockFit:
    """(δ, φ) from the regression coefficients, 4-branch scoring, then a joint refinement of (ω, δ, φ)"""
    pulse = pulse or PulseShapeModel()
    curves = [c for c in curves if c.size >= 3]
    by_meas = {c.meas: c for c in curves}
    coef = {m: _linear_coefficients(c, omega, pulse) for m, c in by_meas.items()}
    x_idx, y_idx, z_idx = Meas.X.index, Meas.Y.index, Meas.Z.index

    fallback = not all(m in coef for m in (x_idx, y_idx, z_idx))
    branches = [(0.0, 0.0)]
    if not fallback:
        c_z, a_z, _ = coef[z_idx]
        sin2 = float(np.clip(0.5 * (c_z + 1.0 - a_z), 0.0, 1.0))
        b_x, b_y = coef[x_idx][2], coef[y_idx][2]
        cos_d = math.hypot(b_x, b_y)
        if abs(cos_d ** 2 + sin2 - 1.0) > 0.5:
            fallback = True
        else:
            abs_delta = math.asin(math.sqrt(sin2))
            phi_hat = math.atan2(b_x, -b_y)
            branches = sorted(
                {(sd * abs_delta, sp * phi_hat) for sd in (1.0, -1.0) for sp in (1.0, -1.0)},
                key=lambda b: (abs(b[1]), b[0]),
            )
    if fallback:
        console.warn(f"block {block}: inconsistent Rabi coefficients, falling back to δ = φ = 0")

    best_params, best_res = None, np.inf
    for delta, phi in branches:
        params = np.array([omega, delta, phi])
        res = _block_residual(params, block, curves, pulse)
        if res < best_res:
            best_params, best_res = params, res

    ceiling = omega_max if omega_max is not None else 4.0 * max(omega, 1.0)
    bounds = [(0.0, ceiling / xi), (-HALF_PI, HALF_PI), (-math.pi, math.pi)]
    start = np.array([best_params[0] / xi, best_params[1], best_params[2]])
    refined = optimize.minimize(
        lambda u: _block_residual(np.array([u[0] * xi, u[1], u[2]]), block, curves, pulse),
        start, method="L-BFGS-B", bounds=bounds,
    )
    if refined.fun < best_res and np.all(np.isfinite(refined.x)):
        best_params = np.array([refined.x[0] * xi, refined.x[1], refined.x[2]])
        best_res = float(refined.fun)
    omega_f, delta_f, phi_f = canonical_block(*best_params)
    return BlockFit(omega_f, delta_f, phi_f, float(best_res), fallback)


def _decoherence_corrected(curves: RabiCurves, noise: NoiseModel) -> RabiCurves:
    out: RabiCurves = {}
    for key, c in curves.items():
        keep = np.clip(1.0 - depolarization_prob(noise.decoherence, c.times, np.full(c.size, c.prep)), 1e-3, 1.0)
        out[key] = c.with_values(c.values / keep)
    return out


def init_estimate(curves: RabiCurves, grid=None, noise: Optional[NoiseModel] = None,
                  omegas: Optional[Tuple[float, float]] = None, xi: float = 1e6) -> LambdaParams:
    """Regression initialization of Λ from Rabi curves"""
    if noise is not None:
        curves = _decoherence_corrected(curves, noise)
    spacing = _grid_spacing(curves.values(), grid)
    if omegas is None:
        omegas = estimate_frequencies(curves, grid)
    pulse = noise.pulse if noise is not None else None
    values: List[float] = []
    for block in (0, 1):
        fit = fit_block([c for c in curves.values() if c.prep == block], omegas[block], block,
                        pulse=pulse, omega_max=resolvable_omega(spacing), xi=xi)
        values.extend((fit.omega, fit.delta, fit.phi))
    return LambdaParams.from_array(values)


def baseline_estimate(d: Dataset, readout: Optional[ReadoutModel] = None, grid=None,
                      noise: Optional[NoiseModel] = None, allow_missing: bool = False) -> LambdaParams:
    """Rabi inference, frequency estimation and regression; no likelihood solve"""
    if readout is None and noise is not None:
        readout = noise.readout
    curves = rabi_from_data(d, readout, allow_missing=allow_missing)
    return init_estimate(curves, grid if grid is not None else d.space, noise=noise)


# ---------------------------------------------------------------- likelihood

class ShotData:
    """Likelihood terms l = c0·p + c1·(1 − p) of a dataset

    For bits p is the readout-noisy p̃ and (c0, c1) are outcome indicators;
    for signals p is the pre-readout probability and (c0, c1) the class densities.
    """

    def __init__(self, d: Dataset, noise: NoiseModel):
        self.space = d.space
        self.noise = noise
        index, outcomes = d.shot_arrays()
        if d.is_signal:
            if not isinstance(noise.readout, GaussianReadout):
                raise ModelKindError("signal datasets need a GaussianSignal readout model")
            c0, c1 = noise.readout.densities(outcomes) if index.size else (np.zeros(0), np.zeros(0))
            self.apply_readout = False
        else:
            c0 = (outcomes == 0).astype(float)
            c1 = 1.0 - c0
            self.apply_readout = True
        self.shot_index, self.shot_c0, self.shot_c1 = index, np.asarray(c0, float), np.asarray(c1, float)
        if d.is_signal:
            self.unit_index, self.unit_c0, self.unit_c1 = self.shot_index, self.shot_c0, self.shot_c1
            self.unit_w = np.ones(index.size)
        else:
            n, zeros = d.counts()
            live = np.flatnonzero(n > 0)
            self.unit_index = np.concatenate([live, live])
            self.unit_c0 = np.concatenate([np.ones(live.size), np.zeros(live.size)])
            self.unit_c1 = 1.0 - self.unit_c0
            self.unit_w = np.concatenate([zeros[live], n[live] - zeros[live]])
            keep = self.unit_w > 0
            self.unit_index, self.unit_c0, self.unit_c1, self.unit_w = (
                self.unit_index[keep], self.unit_c0[keep], self.unit_c1[keep], self.unit_w[keep]
            )

    @property
    def n_shots(self) -> int:
        return int(self.shot_index.size)

    def _evaluate(self, theta, index, c0, c1, w, gradient: bool):
        space = self.space
        if gradient:
            p, dp = noisy_likelihood_and_gradient(
                theta, self.noise, space.meas_idx[index], space.prep_idx[index], space.t[index],
                apply_readout=self.apply_readout,
            )
        else:
            p = np.atleast_1d(self._probability(theta, index))
        l = c0 * p + c1 * (1.0 - p)
        bad = np.flatnonzero(~np.isfinite(l))
        if bad.size:
            raise NumericalError("non-finite likelihood", int(index[bad[0]]))
        l_safe = np.maximum(l, _LOG_FLOOR)
        total = float(w.sum())
        loss = -float(w @ np.log(l_safe)) / total
        if not math.isfinite(loss):
            raise NumericalError("non-finite loss", int(index[0]))
        if not gradient:
            return loss
        coef = np.where(l > _LOG_FLOOR, w * (c0 - c1) / l_safe, 0.0)
        return loss, -(coef @ dp) / total

    def _probability(self, theta, index):
        space = self.space
        return noisy_probability(theta, self.noise, space.meas_idx[index], space.prep_idx[index],
                                 space.t[index], apply_readout=self.apply_readout)

    def loss(self, theta: np.ndarray, gradient: bool = False):
        """Mean negative log-likelihood per shot (and its Λ-gradient)"""
        if self.unit_w.sum() <= 0:
            raise DomainError("dataset has no shots")
        return self._evaluate(np.asarray(theta, float), self.unit_index, self.unit_c0, self.unit_c1,
                              self.unit_w, gradient)

    def batch_loss(self, theta: np.ndarray, shots: np.ndarray):
        return self._evaluate(np.asarray(theta, float), self.shot_index[shots], self.shot_c0[shots],
                              self.shot_c1[shots], np.ones(shots.size), True)


def negative_log_likelihood(theta: Union[LambdaParams, np.ndarray], d: Dataset, n: NoiseModel,
                            gradient: bool = False):
    """Mean empirical NLL over the unused shots of d"""
    if isinstance(theta, LambdaParams):
        theta = theta.to_array()
    return ShotData(d, n).loss(np.asarray(theta, dtype=float), gradient=gradient)


def _project(theta: np.ndarray, omega_max: float, fold: bool) -> np.ndarray:
    theta = np.array(theta, dtype=float)
    for j in (0, 1):
        block = theta[3 * j:3 * j + 3]
        if fold:
            block = np.array(canonical_block(*block))
        else:
            block[0] = max(block[0], 0.0)
            block[1] = float(np.clip(block[1], -HALF_PI, HALF_PI))
            block[2] = (block[2] + math.pi) % (2 * math.pi) - math.pi
        block[0] = min(block[0], omega_max)
        theta[3 * j:3 * j + 3] = block
    return theta


def _lambda_from_j(jv: np.ndarray, omega_max: float) -> np.ndarray:
    return _project(j_to_lambda(JParams.from_array(jv)).to_array(), omega_max, fold=True)


def _safe_jacobian(jv: np.ndarray) -> np.ndarray:
    try:
        return jacobian_lambda_j(JParams.from_array(jv))
    except SingularityError:
        nudged = np.array(jv, dtype=float)
        nudged[[0, 3]] += 1e-6 * max(1.0, float(np.abs(jv).max()))
        return jacobian_lambda_j(JParams.from_array(nudged))


class _Tracker:
    """Best (loss, Λ) seen across all stages"""

    def __init__(self, data: ShotData, theta: np.ndarray):
        self.data = data
        self.theta = theta
        self.loss = data.loss(theta)

    def offer(self, theta: np.ndarray, loss: Optional[float] = None) -> float:
        loss = self.data.loss(theta) if loss is None else loss
        if loss < self.loss:
            self.theta, self.loss = np.array(theta), loss
        return loss


def _adam_stage(data: ShotData, tracker: _Tracker, cfg: EstimatorConfig, rng: RngStream,
                omega_max: float, idx: List[int], in_j: bool, fold: bool):
    theta = tracker.theta.copy()
    scale = coordinate_scale(xi=cfg.xi)
    opt = Adam(lr=cfg.step_size(data.n_shots))
    previous = tracker.loss
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(data.n_shots)
        for start in range(0, data.n_shots, cfg.batch_size):
            _, grad = data.batch_loss(theta, order[start:start + cfg.batch_size])
            if in_j:
                jv = lambda_to_j(LambdaParams.from_array(theta)).to_array()
                grad_j = _safe_jacobian(jv) @ grad
                jv = opt.step(jv / cfg.xi, grad_j * cfg.xi) * cfg.xi
                theta = _lambda_from_j(jv, omega_max)
            else:
                u = theta[idx] / scale[idx]
                theta = theta.copy()
                theta[idx] = opt.step(u, grad[idx] * scale[idx]) * scale[idx]
                theta = _project(theta, omega_max, fold)
        loss = tracker.offer(theta)
        console.debug(f"{'J' if in_j else 'Λ'}-stage epoch {epoch}: loss {loss:.8f}")
        if abs(previous - loss) <= cfg.plateau_tol * max(abs(previous), 1e-300):
            break
        previous = loss


def _quasi_newton_j(data: ShotData, tracker: _Tracker, cfg: EstimatorConfig, omega_max: float):
    start = lambda_to_j(LambdaParams.from_array(tracker.theta)).to_array() / cfg.xi
    bound = omega_max / cfg.xi

    def fun(v):
        jv = v * cfg.xi
        theta = _lambda_from_j(jv, omega_max)
        loss, grad = data.loss(theta, gradient=True)
        tracker.offer(theta, loss)
        return loss, (_safe_jacobian(jv) @ grad) * cfg.xi

    optimize.minimize(fun, start, jac=True, method="L-BFGS-B", bounds=[(-bound, bound)] * 6,
                      options={"gtol": cfg.qn_gtol, "maxiter": cfg.qn_maxiter})


def _quasi_newton_masked(data: ShotData, tracker: _Tracker, cfg: EstimatorConfig, omega_max: float,
                         idx: List[int]):
    scale = coordinate_scale(xi=cfg.xi)[idx]
    box = {0: (0.0, omega_max), 1: (-HALF_PI, HALF_PI), 2: (-math.pi, math.pi)}
    bounds = [(box[i % 3][0] / s, box[i % 3][1] / s) for i, s in zip(idx, scale)]
    base = tracker.theta.copy()

    def fun(u):
        theta = base.copy()
        theta[idx] = u * scale
        loss, grad = data.loss(theta, gradient=True)
        tracker.offer(theta, loss)
        return loss, grad[idx] * scale

    optimize.minimize(fun, base[idx] / scale, jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"gtol": cfg.qn_gtol, "maxiter": cfg.qn_maxiter})


def mle(d: Dataset, n: NoiseModel, init: LambdaParams, cfg: Optional[EstimatorConfig] = None,
        rng: Optional[RngStream] = None, mask: Optional[ParamMask] = None,
        omega_max: Optional[float] = None) -> LambdaParams:
    """Staged maximum-likelihood estimate; returns the best-loss Λ seen, inside the bound box

    With a mask only the masked Λ components move; the rest stay at their
    values in init (the prior calibration).
    """
    cfg = cfg or EstimatorConfig()
    rng = rng or RngStream(0, (5,))
    omega_max = d.space.nyquist_omega if omega_max is None else omega_max
    data = ShotData(d, n)
    if data.n_shots == 0:
        raise DomainError("cannot fit an empty dataset")
    fold = mask is None
    tracker = _Tracker(data, _project(init.to_array(), omega_max, fold))
    start_loss = tracker.loss

    if mask is None:
        idx = list(range(6))
        if cfg.stage_lambda:
            _adam_stage(data, tracker, cfg, rng, omega_max, idx, in_j=False, fold=True)
        if cfg.stage_j:
            _adam_stage(data, tracker, cfg, rng, omega_max, idx, in_j=True, fold=True)
        if cfg.stage_quasi_newton:
            _quasi_newton_j(data, tracker, cfg, omega_max)
    else:
        idx = list(mask.indices)
        if cfg.stage_lambda:
            _adam_stage(data, tracker, cfg, rng, omega_max, idx, in_j=False, fold=False)
        if cfg.stage_quasi_newton:
            _quasi_newton_masked(data, tracker, cfg, omega_max, idx)

    console.debug(f"mle: loss {start_loss:.8f} → {tracker.loss:.8f}")
    theta = tracker.theta
    if mask is not None:
        return LambdaParams(**{name: float(v) for name, v in zip(LAMBDA_NAMES, theta)})
    return LambdaParams.from_array(theta)


# ---------------------------------------------------------------- diagnostics

class BootstrapResult(NamedTuple):
    omegas: np.ndarray     # (n_rep, 2)
    shape: np.ndarray      # log-normal σ per block
    scale: np.ndarray      # log-normal median per block

    def interval(self, level: float = 0.95) -> np.ndarray:
        """Central interval per block, shape (2, 2)"""
        out = np.zeros((2, 2))
        for j in (0, 1):
            if self.shape[j] == 0:
                out[j] = self.scale[j]
            else:
                out[j] = stats.lognorm(self.shape[j], scale=self.scale[j]).interval(level)
        return out


def bootstrap_rabi(d: Dataset, n_rep: int, rng: RngStream, readout: Optional[ReadoutModel] = None,
                   grid=None) -> BootstrapResult:
    """Binomial resampling of every query's zero count, re-estimating (ω̂0, ω̂1) each time"""
    if n_rep < 2:
        raise DomainError(f"bootstrap needs n_rep ≥ 2, got {n_rep}")
    if d.is_signal:
        if not isinstance(readout, GaussianReadout):
            raise ModelKindError("signal datasets need a GaussianSignal readout model")
        bits = [readout.classify(d.shots(i)) for i in range(d.space.size)]
        n = np.array([b.size for b in bits], dtype=float)
        zeros = np.array([np.count_nonzero(b == 0) for b in bits], dtype=float)
    else:
        n, zeros = d.counts()
    r0, r1 = effective_flip_rates(readout)
    p_hat = np.divide(zeros, n, out=np.zeros_like(zeros), where=n > 0)
    grid = grid if grid is not None else d.space
    omegas = np.zeros((n_rep, 2))
    for rep in range(n_rep):
        resampled = rng.binomial(n.astype(np.int64), p_hat)
        values = np.zeros_like(p_hat)
        live = n > 0
        values[live] = rabi_readout_correction(resampled[live] / n[live], r0, r1)
        omegas[rep] = estimate_frequencies(curves_from_values(d.space, values, n), grid)
    shape, scale = np.zeros(2), np.zeros(2)
    for j in (0, 1):
        if np.ptp(omegas[:, j]) == 0:
            shape[j], scale[j] = 0.0, omegas[0, j]
        else:
            s, _, sc = stats.lognorm.fit(omegas[:, j], floc=0)
            shape[j], scale[j] = s, sc
    return BootstrapResult(omegas, shape, scale)


def energy_landscape(d: Dataset, n: NoiseModel, theta: LambdaParams, coords: str = "lambda",
                     span: float = 0.05, n_points: int = 21, xi: float = 1e6) -> pd.DataFrame:
    """1-D slices of the empirical NLL through θ̂, one component at a time"""
    if coords not in ("lambda", "j"):
        raise DomainError(f"coords must be 'lambda' or 'j', got {coords!r}")
    if n_points < 3:
        raise DomainError("energy landscape needs at least 3 points per slice")
    data = ShotData(d, n)
    omega_max = d.space.nyquist_omega
    centre = theta.to_array() if coords == "lambda" else lambda_to_j(theta).to_array()
    names = LAMBDA_NAMES if coords == "lambda" else J_NAMES
    n_points = n_points | 1
    offsets = np.linspace(-1.0, 1.0, n_points)
    middle = n_points // 2
    offsets[middle] = 0.0
    rows = []
    for k, name in enumerate(names):
        frequency = coords == "j" or k in OMEGA_INDICES
        width = span * max(abs(centre[k]), xi) if frequency else span * math.pi
        for i, offset in enumerate(offsets):
            point = centre.copy()
            point[k] += offset * width
            if coords == "lambda":
                lam = _project(point, omega_max, fold=True)
            else:
                lam = j_to_lambda(JParams.from_array(point)).to_array()
            rows.append({
                "component": name,
                "value": float(point[k]),
                "loss": data.loss(lam),
                "is_estimate": i == middle,
            })
    return pd.DataFrame(rows)
