"""
Named device presets
Estimated CR Hamiltonians and noise sources for four superconducting devices
(A, B, C with two qubit pairs, D under five drive amplitudes) plus two
reduced demonstration models.
"""
import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ConfigError
from src.hamiltonian import j_to_lambda, lambda_to_j
from src.models import JParams, LambdaParams
from src.noise import (
    BitFlipReadout,
    GaussianReadout,
    NoDecoherence,
    NoiseModel,
    OneQubitDecoherence,
    PulseShapeModel,
    SingleParamDecoherence,
    TwoParamDecoherence,
    TwoQubitDecoherence,
)

MHZ = 1e6
US = 1e-6

# Published decoherence fits for device D, drive configuration 2
SINGLE_PARAM_MU = 7.75e-5
TWO_PARAM_MU = (5.52e-5, 2.51e-5)

# Device D pulse-shape fit Δt_eff = a / (ω + bω²)
DEVICE_D_PULSE = PulseShapeModel(a=6.2774, b=1.5086e-9)

# (T1, T2) of (control, target) in µs
_T_TIMES: Dict[str, Tuple[Tuple[float, float], Tuple[float, float]]] = {
    "A": ((65.4, 71.1), (32.9, 57.7)),
    "B": ((63.2, 73.9), (78.1, 124.3)),
    "C01": ((34.2, 39.2), (45.0, 63.1)),
    "C02": ((34.2, 35.8), (45.0, 52.4)),
    "D": ((94.0, 177.2), (75.7, 128.1)),
}

# J in units of 10⁶ s⁻¹ and (r0, r1), one row per drive configuration
_DEVICE_TABLES: Dict[str, List[Tuple[Tuple[float, ...], Tuple[float, float]]]] = {
    "D": [
        ((-3.88, -1.08, -0.24, 5.44, 1.07, 0.21), (0.012, 0.025)),
        ((-4.57, -1.47, -0.29, 6.50, 1.39, 0.41), (0.0078, 0.033)),
        ((-5.12, -1.65, -0.23, 7.52, 1.66, 0.33), (0.0078, 0.035)),
        ((-5.42, -1.95, 0.37, 8.38, 1.90, 0.07), (0.0078, 0.039)),
        ((-5.72, -2.13, 0.03, 9.20, 2.15, 0.11), (0.0078, 0.023)),
    ],
    "A": [
        ((58.47, 3.68, -5.00, 10.76, 2.29, -0.52), (0.160, 0.215)),
        ((38.93, 2.34, 0.26, 11.15, -3.30, -0.30), (0.150, 0.210)),
        ((19.35, 0.12, 0.69, 10.80, -0.66, 0.24), (0.220, 0.150)),
        ((-0.21, -1.68, 0.20, 10.47, 1.50, -0.86), (0.145, 0.150)),
        ((-20.11, -1.35, 0.73, 10.55, 0.94, -1.13), (0.190, 0.185)),
    ],
    "B": [
        ((30.03, 3.62, 0.49, 1.75, -0.16, -0.31), (0.110, 0.140)),
        ((15.34, 1.85, 0.19, 1.81, -0.75, -0.59), (0.090, 0.070)),
        ((0.89, 0.72, 0.24, 1.82, -0.54, -0.34), (0.120, 0.160)),
        ((-13.71, -2.31, -0.54, 1.78, 0.09, 0.09), (0.130, 0.160)),
        ((-28.45, -2.19, -1.20, 1.56, 2.15, 0.27), (0.110, 0.100)),
    ],
    "C01": [
        ((-8.52, -2.15, -0.26, 10.93, 0.85, 0.32), (0.200, 0.160)),
        ((-3.88, -2.26, -0.35, 10.88, 1.46, 0.43), (0.120, 0.160)),
        ((0.58, -1.81, -0.45, 10.81, 0.83, 1.24), (0.080, 0.070)),
        ((4.86, -1.66, 0.08, 10.85, 0.44, -0.14), (0.070, 0.110)),
        ((9.53, -0.17, 0.29, 10.76, -0.17, -0.32), (0.070, 0.120)),
    ],
    "C02": [
        ((9.42, -0.71, 0.27, 12.21, -0.71, -0.25), (0.070, 0.060)),
        ((6.17, -0.46, 0.09, 11.96, -0.59, -0.26), (0.070, 0.110)),
        ((2.59, 0.05, -0.26, 11.90, -1.66, -0.17), (0.050, 0.090)),
        ((-1.03, -0.10, -0.16, 11.99, -0.63, -0.18), (0.090, 0.060)),
        ((-4.53, 0.10, -0.31, 12.04, -0.18, 0.39), (0.100, 0.110)),
    ],
}


class Preset(BaseModel):
    """A named θ* and noise bundle with its provenance"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    description: str = Field(..., description="what the preset models")
    source: str = Field(..., description="where the numbers come from")
    j: Optional[JParams] = Field(None, description="θ* as Pauli coefficients")
    lam: Optional[LambdaParams] = Field(None, description="θ* in spectral form, when given directly")
    noise: NoiseModel = Field(default_factory=NoiseModel)

    @model_validator(mode="after")
    def _one_theta(self):
        if (self.j is None) == (self.lam is None):
            raise ConfigError(f"preset {self.name} needs exactly one of j or lam")
        return self

    def theta_star(self) -> LambdaParams:
        return self.lam if self.lam is not None else j_to_lambda(self.j)

    def j_star(self) -> JParams:
        return self.j if self.j is not None else lambda_to_j(self.lam)

    def summary(self) -> Dict[str, object]:
        lam = self.theta_star()
        return {
            "name": self.name,
            "description": self.description,
            "source": self.source,
            "j": self.j_star().model_dump(),
            "lambda": lam.model_dump(),
            "noise": self.noise.model_dump(),
        }


def _two_qubit(device: str) -> TwoQubitDecoherence:
    (t1c, t2c), (t1t, t2t) = _T_TIMES[device]
    return TwoQubitDecoherence(t1_ctrl=t1c * US, t2_ctrl=t2c * US, t1_tgt=t1t * US, t2_tgt=t2t * US)


def _one_qubit(device: str) -> OneQubitDecoherence:
    _, (t1t, t2t) = _T_TIMES[device]
    return OneQubitDecoherence(t1=t1t * US, t2=t2t * US)


def _device_presets() -> Dict[str, Preset]:
    presets: Dict[str, Preset] = {}
    for device, rows in _DEVICE_TABLES.items():
        first = 1 if device == "D" else 0
        for config, (j, (r0, r1)) in enumerate(rows, start=first):
            if device == "D":
                # low readout noise: plain bit-flip classifier
                readout = BitFlipReadout(r0=r0, r1=r1)
                pulse = DEVICE_D_PULSE
            else:
                readout = GaussianReadout.from_flip_rates(r0, r1)
                pulse = PulseShapeModel()
            name = f"{device}-config{config}"
            presets[name] = Preset(
                name=name,
                description=f"device {device}, drive configuration {config}",
                source=f"device {device} estimated parameters, drive configuration {config}; "
                       f"T1/T2 from the device property table",
                j=JParams.from_array([v * MHZ for v in j]),
                noise=NoiseModel(readout=readout, pulse=pulse, decoherence=_two_qubit(device)),
            )
    return presets


def _reduced_presets() -> Dict[str, Preset]:
    j_ix, j_zx = -4.57 * MHZ, 6.50 * MHZ
    return {
        "reduced-zx": Preset(
            name="reduced-zx",
            description="ZX-only Hamiltonian, noiseless; learn (ω0, ω1) for Heisenberg scaling",
            source="device D drive configuration 2 ZX magnitude",
            lam=LambdaParams(omega0=j_zx, delta0=0.0, phi0=0.0, omega1=j_zx, delta1=0.0, phi1=math.pi),
        ),
        "reduced-ix-zx": Preset(
            name="reduced-ix-zx",
            description="IX + ZX Hamiltonian, noiseless",
            source="device D drive configuration 2 IX and ZX magnitudes",
            j=JParams(j_ix=j_ix, j_iy=0.0, j_iz=0.0, j_zx=j_zx, j_zy=0.0, j_zz=0.0),
        ),
    }


PRESETS: Dict[str, Preset] = {**_device_presets(), **_reduced_presets()}

DECOHERENCE_VARIANTS = {
    "none": NoDecoherence(),
    "single_param": SingleParamDecoherence(mu=SINGLE_PARAM_MU),
    "two_param": TwoParamDecoherence(mu_u0=TWO_PARAM_MU[0], mu_u1=TWO_PARAM_MU[1]),
    "two_qubit": _two_qubit("D"),
    "one_qubit": _one_qubit("D"),
}


def list_presets() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(list_presets())}")
