"""
Domain value types for the cross-resonance Hamiltonian
"""
import math
from enum import Enum, IntEnum
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import DomainError

HALF_PI = math.pi / 2


class Meas(str, Enum):
    """Measurement operator applied to the target before readout"""
    X = "X"
    Y = "Y"
    Z = "Z"

    @property
    def index(self) -> int:
        return MEAS_ORDER.index(self)


MEAS_ORDER: Tuple[Meas, ...] = (Meas.X, Meas.Y, Meas.Z)


class Prep(IntEnum):
    """Preparation operator: U0 = I⊗I, U1 = X⊗I (control flipped)"""
    U0 = 0
    U1 = 1


PREP_ORDER: Tuple[Prep, ...] = (Prep.U0, Prep.U1)

J_NAMES = ("j_ix", "j_iy", "j_iz", "j_zx", "j_zy", "j_zz")
LAMBDA_NAMES = ("omega0", "delta0", "phi0", "omega1", "delta1", "phi1")
OMEGA_INDICES = (0, 3)


class JParams(BaseModel):
    """Pauli-coefficient parameterization, angular frequencies in s⁻¹"""
    model_config = ConfigDict(frozen=True)

    j_ix: float = Field(..., description="IX coefficient")
    j_iy: float = Field(..., description="IY coefficient")
    j_iz: float = Field(..., description="IZ coefficient")
    j_zx: float = Field(..., description="ZX coefficient")
    j_zy: float = Field(..., description="ZY coefficient")
    j_zz: float = Field(..., description="ZZ coefficient")

    @field_validator("*")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("J components must be finite")
        return value

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in J_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "JParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (6,):
            raise DomainError(f"expected 6 J components, got shape {values.shape}")
        return cls(**{name: float(v) for name, v in zip(J_NAMES, values)})

    def block(self, j: int) -> Tuple[float, complex]:
        """(a_j, β_j) of control block j"""
        sign = 1.0 if j == 0 else -1.0
        a = self.j_iz + sign * self.j_zz
        beta = complex(self.j_ix + sign * self.j_zx, self.j_iy + sign * self.j_zy)
        return a, beta


class LambdaParams(BaseModel):
    """Spectral parameterization: per control block a frequency, tilt and phase"""
    model_config = ConfigDict(frozen=True)

    omega0: float = Field(..., ge=0, description="Block-0 angular frequency (s⁻¹)")
    delta0: float = Field(..., ge=-HALF_PI, le=HALF_PI, description="Block-0 tilt (rad)")
    phi0: float = Field(..., ge=-math.pi, le=math.pi, description="Block-0 phase (rad)")
    omega1: float = Field(..., ge=0, description="Block-1 angular frequency (s⁻¹)")
    delta1: float = Field(..., ge=-HALF_PI, le=HALF_PI, description="Block-1 tilt (rad)")
    phi1: float = Field(..., ge=-math.pi, le=math.pi, description="Block-1 phase (rad)")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in LAMBDA_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "LambdaParams":
        """Build from a 6-vector, folding each block back into the canonical ranges"""
        values = np.asarray(values, dtype=float)
        if values.shape != (6,) or not np.all(np.isfinite(values)):
            raise DomainError(f"expected 6 finite Λ components, got {values}")
        folded: List[float] = []
        for j in (0, 1):
            folded.extend(canonical_block(*values[3 * j:3 * j + 3]))
        return cls(**{name: v for name, v in zip(LAMBDA_NAMES, folded)})

    def block(self, j: int) -> Tuple[float, float, float]:
        """(ω_j, δ_j, φ_j)"""
        if j == 0:
            return self.omega0, self.delta0, self.phi0
        return self.omega1, self.delta1, self.phi1

    def check_nyquist(self, omega_max: float):
        """Raise DomainError when a block frequency exceeds the grid's Nyquist bound"""
        for j in (0, 1):
            if self.block(j)[0] > omega_max * (1 + 1e-12):
                raise DomainError(
                    f"omega{j}={self.block(j)[0]:.6g} exceeds Nyquist bound {omega_max:.6g}"
                )


def canonical_block(omega: float, delta: float, phi: float) -> Tuple[float, float, float]:
    """Map any (ω, δ, φ) onto the equivalent triple with ω ≥ 0, |δ| ≤ π/2, |φ| ≤ π"""
    a = omega * math.sin(delta)
    beta = omega * math.cos(delta) * complex(math.cos(phi), math.sin(phi))
    return block_to_spectral(a, beta)


def block_to_spectral(a: float, beta: complex) -> Tuple[float, float, float]:
    omega = math.sqrt(a * a + abs(beta) ** 2)
    if omega == 0.0:
        return 0.0, 0.0, 0.0
    delta = math.asin(max(-1.0, min(1.0, a / omega)))
    phi = math.atan2(beta.imag, beta.real) if beta != 0 else 0.0
    return omega, delta, phi


class Query(BaseModel):
    """One (measurement, preparation, evolution time) triple"""
    model_config = ConfigDict(frozen=True)

    meas: Meas
    prep: Prep
    t: float = Field(..., ge=0, description="Evolution time (s)")

    def key(self) -> Tuple[str, int, float]:
        return self.meas.value, int(self.prep), self.t
