"""
Query-distribution optimization
Projected-gradient descent of the A-optimal (FI) and Fisher-information-ratio
(FIR) objectives over the box-constrained simplex, plus the per-round helpers
of the active learner: uniform mixing, entropy filtering, query-space growth
and ledger-aware batch sampling.
"""
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize

from src import console
from src.errors import BudgetExhaustedError, DomainError, InfeasibleError, PolicyError
from src.fisher import (
    RIDGE,
    ParamMask,
    coordinate_scale,
    query_fisher_stack,
    reduced_fisher,
    scaled_fisher,
)
from src.models import LambdaParams
from src.noise import NoiseModel, noisy_probability
from src.query_space import GrowthPolicy, QueryDistribution, QuerySpace, QuerySubset
from src.rng import RngStream

MAX_ITER = 5000
REL_TOL = 1e-8
ARMIJO = 1e-4


class SolverResult(NamedTuple):
    weights: np.ndarray
    objective: float
    iterations: int
    history: np.ndarray


def project_capped_simplex(v: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {q : Σq = 1, 0 ≤ q ≤ upper}

    The projection is clip(v − λ, 0, upper) for the λ that restores unit mass;
    that sum is monotone in λ so a bracketing root finder locates it.
    """
    v = np.asarray(v, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if upper.sum() < 1.0 - 1e-12:
        raise InfeasibleError(f"upper bounds sum to {upper.sum():.6g} < 1")

    def excess(lam):
        return np.clip(v - lam, 0.0, upper).sum() - 1.0

    lo = float((v - np.minimum(upper, 1.0)).min())
    hi = float(v.max())
    if excess(lo) <= 0.0:
        q = np.clip(v - lo, 0.0, upper)
    else:
        lam = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        q = np.clip(v - lam, 0.0, upper)
    return q / q.sum()


def _objective_and_gradient(q: np.ndarray, stack: np.ndarray, test: Optional[np.ndarray]):
    """Tr((Σ q I_x + λI)⁻¹ T) and its q-gradient, λ = RIDGE·Tr/k tracking q"""
    k = stack.shape[-1]
    f = np.einsum("n,nij->ij", q, stack)
    lam = RIDGE * np.trace(f) / k
    inv = np.linalg.inv(f + lam * np.eye(k))
    t = np.eye(k) if test is None else test
    value = float(np.trace(inv @ t))
    m = inv @ t @ inv
    traces = np.einsum("nii->n", stack)
    grad = -np.einsum("nij,ji->n", stack, m) - (RIDGE / k) * np.trace(m) * traces
    return value, grad


def optimize_distribution(
    stack: np.ndarray,
    test: Optional[np.ndarray] = None,
    upper_bounds: Optional[np.ndarray] = None,
    q0: Optional[np.ndarray] = None,
    max_iter: int = MAX_ITER,
    rel_tol: float = REL_TOL,
) -> SolverResult:
    """Minimize Tr(I_q⁻¹ T) over the capped simplex by projected gradient with Armijo backtracking

    stack holds one k×k Fisher matrix per candidate query; T defaults to the identity (A-optimality).
    """
    n = stack.shape[0]
    upper = np.full(n, np.inf) if upper_bounds is None else np.asarray(upper_bounds, dtype=float)
    if upper.shape != (n,) or np.any(upper < 0):
        raise DomainError("upper bounds must be nonnegative, one per query")
    q = project_capped_simplex(np.full(n, 1.0 / n) if q0 is None else q0, upper)

    value, grad = _objective_and_gradient(q, stack, test)
    history = [value]
    step = 1.0 / max(float(np.abs(grad).max()), np.finfo(float).tiny)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        while True:
            candidate = project_capped_simplex(q - step * grad, upper)
            new_value, new_grad = _objective_and_gradient(candidate, stack, test)
            if new_value <= value + ARMIJO * float(grad @ (candidate - q)):
                break
            step *= 0.5
            if step < 1e-30:
                return SolverResult(q, value, iterations, np.array(history))
        change = abs(value - new_value) / max(abs(value), np.finfo(float).tiny)
        q, value, grad = candidate, new_value, new_grad
        history.append(value)
        if change < rel_tol:
            break
        step *= 2.0
    return SolverResult(q, value, iterations, np.array(history))


def _candidate_stack(l: LambdaParams, n: NoiseModel, space: QuerySpace, indices: np.ndarray,
                     mask: Optional[ParamMask], xi: float) -> np.ndarray:
    stack = query_fisher_stack(l.to_array(), n, space, indices)
    stack = scaled_fisher(stack, coordinate_scale(xi=xi))
    return stack if mask is None else reduced_fisher(stack, mask)


def _solve(l, n, space, upper_bounds, subset, mask, xi, test) -> QueryDistribution:
    indices = np.arange(space.size) if subset is None else subset.indices
    upper = None if upper_bounds is None else np.asarray(upper_bounds, dtype=float)[indices]
    stack = _candidate_stack(l, n, space, indices, mask, xi)
    result = optimize_distribution(stack, test=test, upper_bounds=upper)
    console.debug(f"qopt: {result.iterations} iterations, objective {result.objective:.6g}")
    weights = np.zeros(space.size)
    weights[indices] = result.weights
    return QueryDistribution(space, weights)


def optimize_fi(
    l: LambdaParams,
    n: NoiseModel,
    space: QuerySpace,
    upper_bounds: Optional[Sequence[float]] = None,
    subset: Optional[QuerySubset] = None,
    mask: Optional[ParamMask] = None,
    xi: float = 1e6,
) -> QueryDistribution:
    """A-optimal query distribution, Tr(I_q⁻¹) in ξ-scaled coordinates"""
    return _solve(l, n, space, upper_bounds, subset, mask, xi, None)


def optimize_fir(
    l: LambdaParams,
    n: NoiseModel,
    space: QuerySpace,
    p_test: QueryDistribution,
    upper_bounds: Optional[Sequence[float]] = None,
    subset: Optional[QuerySubset] = None,
    mask: Optional[ParamMask] = None,
    xi: float = 1e6,
) -> QueryDistribution:
    """Query distribution minimizing Tr(I_q⁻¹ I_test) for the testing distribution p_test"""
    support = p_test.support()
    test_stack = _candidate_stack(l, n, p_test.space, support, mask, xi)
    test = np.einsum("n,nij->ij", p_test.weights[support], test_stack)
    return _solve(l, n, space, upper_bounds, subset, mask, xi, test)


def mixing_weight(n_tot: int) -> float:
    return 1.0 - float(n_tot) ** (-1.0 / 6.0)


def mix_uniform(q: QueryDistribution, n_tot: int, subset: Optional[QuerySubset] = None) -> QueryDistribution:
    """μ·q + (1 − μ)·uniform with μ = 1 − N_tot^(−1/6)"""
    if n_tot < 1:
        raise DomainError(f"n_tot must be at least 1, got {n_tot}")
    mu = mixing_weight(n_tot)
    uniform = QueryDistribution.uniform(q.space, subset)
    return QueryDistribution.from_unnormalized(q.space, mu * q.weights + (1.0 - mu) * uniform.weights)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.nan_to_num(h, nan=0.0)


def entropy_filter(
    l: LambdaParams,
    n: NoiseModel,
    space: QuerySpace,
    tau: float = 0.95,
    within: Optional[QuerySubset] = None,
) -> QuerySubset:
    """Queries whose outcome entropy exceeds τ·max; the maximizers always survive"""
    if not 0 < tau <= 1:
        raise DomainError(f"entropy threshold must lie in (0, 1], got {tau}")
    indices = np.arange(space.size) if within is None else within.indices
    p = noisy_probability(l.to_array(), n, space.meas_idx[indices], space.prep_idx[indices], space.t[indices])
    s = binary_entropy(p)
    top = float(s.max())
    keep = (s > tau * top) | (s >= top * (1 - 1e-12))
    return QuerySubset(space, indices[keep])


def grow_space(space: QuerySpace) -> QuerySpace:
    """Extend the time grid at unchanged spacing; the old grid is kept as a prefix"""
    if space.growth == GrowthPolicy.FIXED:
        raise PolicyError("query space has a fixed growth policy")
    if space.growth == GrowthPolicy.LINEAR_T:
        n_new = int(round(space.increment / space.spacing))
    else:
        target = 2.0 * space.t_max
        n_new = int(round((target - space.t_min) / space.spacing)) + 1 - space.n_times
    if n_new < 1:
        raise PolicyError("growth step is shorter than the grid spacing")
    return space.extended(n_new)


def sample_batch(qdist: QueryDistribution, n_b: int, ledger: Sequence[float], rng: RngStream) -> np.ndarray:
    """n_b query indices drawn from qdist, capped by the remaining shots per query

    Draws landing on a query beyond its remaining shots are reassigned
    uniformly among queries that still have shots.
    """
    ledger = np.asarray(ledger, dtype=float)
    if n_b < 1:
        raise DomainError(f"batch size must be at least 1, got {n_b}")
    available = ledger > 0
    if ledger[available].sum() < n_b:
        raise BudgetExhaustedError(f"only {ledger[available].sum():.0f} shots left for a batch of {n_b}")

    weights = qdist.weights * available
    if weights.sum() <= 0:
        weights = available.astype(float)
    draws = rng.choice(qdist.space.size, size=n_b, p=weights / weights.sum())
    counts = np.bincount(draws, minlength=qdist.space.size)
    cap = np.where(np.isfinite(ledger), ledger, n_b).astype(np.int64)
    excess = int(np.clip(counts - cap, 0, None).sum())
    counts = np.minimum(counts, cap)
    while excess > 0:
        open_queries = np.flatnonzero(counts < cap)
        extra = np.bincount(rng.choice(open_queries, size=excess), minlength=qdist.space.size)
        counts = counts + extra
        excess = int(np.clip(counts - cap, 0, None).sum())
        counts = np.minimum(counts, cap)
    return np.repeat(np.arange(qdist.space.size), counts)
