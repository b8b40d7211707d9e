"""
Cross-resonance Hamiltonian model
Parameterization changes, the block-diagonal evolution unitary, Born-rule
likelihoods and the closed-form Rabi oscillations.

Basis ordering is (|00>, |01>, |10>, |11>) with the control qubit first, so
H = diag(H_0, H_1) where block j is the target Hamiltonian when the control
is in state j.
"""
import math
from typing import NamedTuple, Union

import numpy as np

from src.models import (
    MEAS_ORDER,
    JParams,
    LambdaParams,
    Meas,
    Prep,
    Query,
    block_to_spectral,
)

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_I2 = np.eye(2, dtype=complex)
_X2 = np.array([[0, 1], [1, 0]], dtype=complex)

# exp(iπ/4·σY) and exp(−iπ/4·σX) on the target
_TARGET_ROTATIONS = {
    Meas.X: _SQRT_HALF * np.array([[1, 1], [-1, 1]], dtype=complex),
    Meas.Y: _SQRT_HALF * np.array([[1, -1j], [-1j, 1]], dtype=complex),
    Meas.Z: _I2,
}


def j_to_lambda(j: JParams) -> LambdaParams:
    """Spectral parameters of each control block; ω_j = 0 maps to δ_j = φ_j = 0"""
    values = []
    for block in (0, 1):
        values.extend(block_to_spectral(*j.block(block)))
    return LambdaParams(
        omega0=values[0], delta0=values[1], phi0=values[2],
        omega1=values[3], delta1=values[4], phi1=values[5],
    )


def lambda_to_j(l: LambdaParams) -> JParams:
    a = []
    beta = []
    for block in (0, 1):
        omega, delta, phi = l.block(block)
        a.append(omega * math.sin(delta))
        beta.append(omega * math.cos(delta) * complex(math.cos(phi), math.sin(phi)))
    return JParams(
        j_ix=(beta[0].real + beta[1].real) / 2,
        j_iy=(beta[0].imag + beta[1].imag) / 2,
        j_iz=(a[0] + a[1]) / 2,
        j_zx=(beta[0].real - beta[1].real) / 2,
        j_zy=(beta[0].imag - beta[1].imag) / 2,
        j_zz=(a[0] - a[1]) / 2,
    )


def hamiltonian_matrix(j: JParams) -> np.ndarray:
    """Dense 4×4 H = Σ J_P P in the computational basis"""
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    terms = (
        (j.j_ix, _I2, _X2), (j.j_iy, _I2, sy), (j.j_iz, _I2, sz),
        (j.j_zx, sz, _X2), (j.j_zy, sz, sy), (j.j_zz, sz, sz),
    )
    return sum(coef * np.kron(ctrl, tgt) for coef, ctrl, tgt in terms)


def unitary(l: LambdaParams, t: float) -> np.ndarray:
    """e^{−iHt}, assembled block by block from the spectral parameters"""
    u = np.zeros((4, 4), dtype=complex)
    for block in (0, 1):
        omega, delta, phi = l.block(block)
        c, s = math.cos(omega * t), math.sin(omega * t)
        sd, cd = math.sin(delta), math.cos(delta)
        off = -1j * cd * s
        k = 2 * block
        u[k, k] = complex(c, -sd * s)
        u[k, k + 1] = off * complex(math.cos(phi), -math.sin(phi))
        u[k + 1, k] = off * complex(math.cos(phi), math.sin(phi))
        u[k + 1, k + 1] = complex(c, sd * s)
    return u


def measurement_matrix(meas: Meas) -> np.ndarray:
    return np.kron(_I2, _TARGET_ROTATIONS[Meas(meas)])


def preparation_matrix(prep: Prep) -> np.ndarray:
    return np.kron(_X2 if Prep(prep) == Prep.U1 else _I2, _I2)


def born_probability(l: LambdaParams, q: Query) -> float:
    """p(y=0|q) summed over the unread control outcome z"""
    psi = measurement_matrix(q.meas) @ unitary(l, q.t) @ preparation_matrix(q.prep)[:, 0]
    # |yz> with y the target bit: indices 0 (z=0) and 2 (z=1)
    return float(abs(psi[0]) ** 2 + abs(psi[2]) ** 2)


class RabiTerms(NamedTuple):
    """p_rabi = offset + cos_amp·cos(2ωτ) + sin_amp·sin(2ωτ), per query

    The d_* arrays hold derivatives with respect to (δ, φ) of the query's block.
    """
    block: np.ndarray
    omega: np.ndarray
    offset: np.ndarray
    cos_amp: np.ndarray
    sin_amp: np.ndarray
    d_offset: np.ndarray
    d_cos: np.ndarray
    d_sin: np.ndarray


def rabi_terms(theta: np.ndarray, meas_idx: np.ndarray, prep_idx: np.ndarray) -> RabiTerms:
    """Closed-form Rabi coefficients for arrays of (meas, prep) indices

    theta is the Λ vector (ω0, δ0, φ0, ω1, δ1, φ1).
    """
    theta = np.asarray(theta, dtype=float)
    meas_idx = np.asarray(meas_idx, dtype=int)
    block = np.asarray(prep_idx, dtype=int)
    omega = theta[3 * block]
    delta = theta[3 * block + 1]
    phi = theta[3 * block + 2]
    sd, cd = np.sin(delta), np.cos(delta)
    sp, cp = np.sin(phi), np.cos(phi)
    s2d, c2d = np.sin(2 * delta), np.cos(2 * delta)
    zeros = np.zeros_like(delta)

    # rows ordered as MEAS_ORDER = (X, Y, Z)
    offset = np.stack([0.5 * s2d * cp, 0.5 * s2d * sp, sd ** 2])
    cos_amp = np.stack([-0.5 * s2d * cp, -0.5 * s2d * sp, cd ** 2])
    sin_amp = np.stack([sp * cd, -cp * cd, zeros])
    d_offset = np.stack([
        np.stack([c2d * cp, -0.5 * s2d * sp], axis=-1),
        np.stack([c2d * sp, 0.5 * s2d * cp], axis=-1),
        np.stack([s2d, zeros], axis=-1),
    ])
    d_cos = np.stack([
        np.stack([-c2d * cp, 0.5 * s2d * sp], axis=-1),
        np.stack([-c2d * sp, -0.5 * s2d * cp], axis=-1),
        np.stack([-s2d, zeros], axis=-1),
    ])
    d_sin = np.stack([
        np.stack([-sp * sd, cp * cd], axis=-1),
        np.stack([cp * sd, sp * cd], axis=-1),
        np.stack([zeros, zeros], axis=-1),
    ])
    cols = np.arange(meas_idx.size)
    return RabiTerms(
        block=block,
        omega=omega,
        offset=offset[meas_idx, cols],
        cos_amp=cos_amp[meas_idx, cols],
        sin_amp=sin_amp[meas_idx, cols],
        d_offset=d_offset[meas_idx, cols],
        d_cos=d_cos[meas_idx, cols],
        d_sin=d_sin[meas_idx, cols],
    )


def rabi_values(theta: np.ndarray, meas_idx, prep_idx, tau) -> np.ndarray:
    """Vectorized noiseless p_rabi at evolution times tau"""
    terms = rabi_terms(theta, np.atleast_1d(meas_idx), np.atleast_1d(prep_idx))
    phase = 2.0 * terms.omega * np.atleast_1d(np.asarray(tau, dtype=float))
    return terms.offset + terms.cos_amp * np.cos(phase) + terms.sin_amp * np.sin(phase)


def rabi_model(l: LambdaParams, meas: Union[Meas, str], prep: Union[Prep, int], t: float) -> float:
    """p(0|x) − p(1|x) in closed form"""
    meas = Meas(meas)
    value = rabi_values(l.to_array(), [MEAS_ORDER.index(meas)], [int(prep)], [t])[0]
    return float(np.clip(value, -1.0, 1.0))


def likelihood_noiseless(l: LambdaParams, q: Query) -> float:
    """p(y=0 | q; Λ)"""
    return float(np.clip(0.5 * (1.0 + rabi_model(l, q.meas, q.prep, q.t)), 0.0, 1.0))
