"""
Fisher information for the noisy single-shot likelihood
Per-query and per-distribution matrices in Λ coordinates, the Λ/J Jacobian,
masked (reduced) matrices and the A-optimal / FIR objectives.
"""
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.errors import DomainError, NumericalError, SingularityError
from src.hamiltonian import lambda_to_j
from src.models import LAMBDA_NAMES, OMEGA_INDICES, JParams, LambdaParams, Query
from src.noise import NoiseModel, noisy_likelihood_and_gradient
from src.query_space import QueryDistribution, QuerySpace

XI = 1e6
RIDGE = 1e-12
_DEGENERATE_P = 1e-15


class ParamMask(BaseModel):
    """Ordered selection of Λ components"""
    model_config = ConfigDict(frozen=True)

    indices: Tuple[int, ...]

    @field_validator("indices")
    @classmethod
    def _valid(cls, indices):
        if not indices:
            raise ValueError("parameter mask cannot be empty")
        if len(set(indices)) != len(indices):
            raise ValueError("parameter mask has duplicate entries")
        if min(indices) < 0 or max(indices) >= len(LAMBDA_NAMES):
            raise ValueError(f"mask indices must lie in 0..{len(LAMBDA_NAMES) - 1}")
        return tuple(int(i) for i in indices)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "ParamMask":
        names = list(names)
        unknown = [n for n in names if n not in LAMBDA_NAMES]
        if unknown:
            raise DomainError(f"unknown Λ components {unknown}")
        return cls(indices=tuple(LAMBDA_NAMES.index(n) for n in names))

    @classmethod
    def full(cls) -> "ParamMask":
        return cls(indices=tuple(range(len(LAMBDA_NAMES))))

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(LAMBDA_NAMES[i] for i in self.indices)

    @property
    def size(self) -> int:
        return len(self.indices)


def coordinate_scale(mask: Optional[ParamMask] = None, xi: float = XI) -> np.ndarray:
    """ξ on frequency components, 1 on angles"""
    scale = np.ones(len(LAMBDA_NAMES))
    scale[list(OMEGA_INDICES)] = xi
    return scale if mask is None else scale[list(mask.indices)]


def scaled_fisher(f: np.ndarray, scale: Union[float, Sequence[float]]) -> np.ndarray:
    """Fisher in θ/scale coordinates: diag(scale)·F·diag(scale)"""
    s = np.broadcast_to(np.asarray(scale, dtype=float), (f.shape[-1],))
    return f * s[:, None] * s[None, :]


def query_scores(theta: np.ndarray, noise: NoiseModel, meas_idx, prep_idx, t) -> np.ndarray:
    """Rank-one factors v with I_x = v vᵀ; zero rows for degenerate queries"""
    p, grad = noisy_likelihood_and_gradient(theta, noise, meas_idx, prep_idx, t)
    var = p * (1.0 - p)
    live = var > _DEGENERATE_P
    scores = np.zeros_like(grad)
    scores[live] = grad[live] / np.sqrt(var[live])[:, None]
    return scores


def query_fisher_stack(theta: np.ndarray, noise: NoiseModel, space: QuerySpace,
                       indices: Optional[np.ndarray] = None) -> np.ndarray:
    """(n, 6, 6) per-query Fisher matrices over a space (or a subset of its indices)"""
    indices = np.arange(space.size) if indices is None else np.asarray(indices, dtype=int)
    v = query_scores(theta, noise, space.meas_idx[indices], space.prep_idx[indices], space.t[indices])
    return np.einsum("ni,nj->nij", v, v)


def query_fisher(l: LambdaParams, n: NoiseModel, q: Query) -> np.ndarray:
    """I_x(Λ) = ∂p̃ ∂p̃ᵀ / (p̃(1 − p̃)); the zero matrix when p̃ ∈ {0, 1}"""
    v = query_scores(l.to_array(), n, [q.meas.index], [int(q.prep)], [q.t])[0]
    return np.outer(v, v)


def jacobian_lambda_j(j: JParams) -> np.ndarray:
    """D with D[i, k] = ∂Λ_k/∂J_i, so that I(J) = D·I(Λ)·Dᵀ"""
    jv = j.to_array()
    d = np.zeros((6, 6))
    for block, sign in ((0, 1.0), (1, -1.0)):
        a = jv[2] + sign * jv[5]
        br = jv[0] + sign * jv[3]
        bi = jv[1] + sign * jv[4]
        beta2 = br * br + bi * bi
        omega2 = a * a + beta2
        if omega2 == 0.0 or beta2 == 0.0:
            raise SingularityError(f"Jacobian undefined in block {block}: ω or |β| is zero")
        omega, beta = np.sqrt(omega2), np.sqrt(beta2)
        # derivatives of (ω, δ, φ) with respect to (a, Re β, Im β)
        local = np.array([
            [a / omega, br / omega, bi / omega],
            [beta / omega2, -a * br / (beta * omega2), -a * bi / (beta * omega2)],
            [0.0, -bi / beta2, br / beta2],
        ])
        # J rows feeding (a, Re β, Im β): (iz, zz), (ix, zx), (iy, zy)
        for col, (j_plain, j_signed) in enumerate(((2, 5), (0, 3), (1, 4))):
            for k in range(3):
                d[j_plain, 3 * block + k] += local[k, col]
                d[j_signed, 3 * block + k] += sign * local[k, col]
    return d


def to_j_coordinates(f: np.ndarray, l: LambdaParams) -> np.ndarray:
    d = jacobian_lambda_j(lambda_to_j(l))
    return d @ f @ d.T


def fisher_in_j(l: LambdaParams, n: NoiseModel, q: Query) -> np.ndarray:
    return to_j_coordinates(query_fisher(l, n, q), l)


def distribution_fisher(qdist: QueryDistribution, l: LambdaParams, n: NoiseModel) -> np.ndarray:
    """I_q = Σ_x q(x)·I_x"""
    support = qdist.support()
    stack = query_fisher_stack(l.to_array(), n, qdist.space, support)
    return np.einsum("n,nij->ij", qdist.weights[support], stack)


def reduced_fisher(f: np.ndarray, m: ParamMask) -> np.ndarray:
    """R·I·Rᵀ for the row selection R of the mask"""
    idx = list(m.indices)
    return f[..., idx, :][..., :, idx]


def ridge(f: np.ndarray) -> np.ndarray:
    k = f.shape[-1]
    return f + (RIDGE * np.trace(f) / k) * np.eye(k)


def _check_psd(f: np.ndarray):
    if not np.all(np.isfinite(f)):
        raise NumericalError("Fisher matrix has non-finite entries")
    sym = 0.5 * (f + f.T)
    trace = abs(float(np.trace(sym)))
    lowest = float(np.linalg.eigvalsh(sym).min())
    if lowest < -1e-10 * max(trace, np.finfo(float).tiny):
        raise NumericalError(f"Fisher matrix is not positive semidefinite (eigenvalue {lowest:.3g})")


def regularized_inverse(f: np.ndarray) -> np.ndarray:
    _check_psd(f)
    try:
        return np.linalg.inv(ridge(0.5 * (f + f.T)))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Fisher matrix is singular after ridge ({e})")


def a_opt_objective(f: np.ndarray) -> float:
    """Tr(I⁻¹)"""
    return float(np.trace(regularized_inverse(f)))


def fir_objective(f_q: np.ndarray, f_test: np.ndarray) -> float:
    """Tr(I_q⁻¹ I_test)"""
    _check_psd(f_test)
    return float(np.trace(regularized_inverse(f_q) @ f_test))


def cramer_rao_rmse(f_q: np.ndarray, n: int, scale: Optional[Union[float, Sequence[float]]] = None) -> float:
    """sqrt(Tr(I_q⁻¹)/N) in θ/scale units; Λ coordinate scale by default"""
    if n < 1:
        raise DomainError("Cramér–Rao floor needs N ≥ 1")
    scale = coordinate_scale() if scale is None else scale
    return float(np.sqrt(a_opt_objective(scaled_fisher(f_q, scale)) / n))
