import itertools
import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.errors import ConfigError, DomainError, ModelKindError
from src.hamiltonian import likelihood_noiseless, rabi_model
from src.models import LambdaParams, Meas, Prep, Query
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
    delta_t_eff,
    depolarization_prob,
    fit_gaussian_readout,
    fit_pulse_model,
    noisy_likelihood,
    noisy_probability,
    noisy_rabi,
    pulse_phase,
    rabi_readout_correction,
    signal_density,
)
from src.presets import DEVICE_D_PULSE, SINGLE_PARAM_MU

US = 1e-6
PAULIS = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.diag([1.0, -1.0]).astype(complex),
]

LAMBDA = LambdaParams(omega0=1.94e6, delta0=0.3, phi0=-1.1, omega1=11.45e6, delta1=-0.2, phi1=2.4)


def _damping_kraus(t1: float, t2: float, t: float):
    """Kraus operators of amplitude damping followed by phase damping on one qubit"""
    gamma_a = 1.0 - math.exp(-t / (2.0 * t1))
    gamma_p = 1.0 - math.exp(-t * (1.0 / t2 - 1.0 / (2.0 * t1)))
    amp = [np.array([[1, 0], [0, math.sqrt(1 - gamma_a)]]), np.array([[0, math.sqrt(gamma_a)], [0, 0]])]
    phase = [np.array([[1, 0], [0, math.sqrt(1 - gamma_p)]]), np.array([[0, 0], [0, math.sqrt(gamma_p)]])]
    return [a @ p for a, p in itertools.product(amp, phase)]


def _unitarity_pd(t1_c: float, t2_c: float, t1_t: float, t2_t: float, t: float) -> float:
    """1 − unitarity of the composed channel from its Pauli transfer matrix"""
    kraus = [np.kron(kc, kt) for kc in _damping_kraus(t1_c, t2_c, t) for kt in _damping_kraus(t1_t, t2_t, t)]
    paulis = [np.kron(a, b) for a in PAULIS for b in PAULIS]
    ptm = np.zeros((16, 16))
    for j, pj in enumerate(paulis):
        image = sum(k @ pj @ k.conj().T for k in kraus)
        for i, pi in enumerate(paulis):
            ptm[i, j] = np.real(np.trace(pi @ image)) / 4.0
    unital = ptm[1:, 1:]
    return 1.0 - float(np.sum(unital ** 2)) / 15.0


class TestReadout:
    """Bit-flip and Gaussian readout models"""

    def test_fully_mixed_state(self):
        """p_d = 1 leaves only the readout bias ½(1 − r0 + r1)"""
        noise = NoiseModel(
            readout=BitFlipReadout(r0=0.0078, r1=0.033),
            decoherence=SingleParamDecoherence(mu=1e-30, t0=0.0),
        )
        p = noisy_likelihood(LAMBDA, noise, Query(meas=Meas.X, prep=Prep.U0, t=3e-7))
        assert p == pytest.approx(0.5126, abs=1e-4)

    def test_noiseless_model_reduces_to_born_rule(self):
        """Default NoiseModel changes nothing"""
        q = Query(meas=Meas.Y, prep=Prep.U1, t=2.2e-7)
        assert noisy_likelihood(LAMBDA, NoiseModel(), q) == pytest.approx(likelihood_noiseless(LAMBDA, q), abs=1e-12)

    def test_readout_correction(self):
        """Correction of a perfect p̂ = 1 is not clamped and exceeds one"""
        assert rabi_readout_correction(1.0, 0.0078, 0.033) == pytest.approx(0.9748 / 0.9592, rel=1e-9)
        swapped = rabi_readout_correction(1.0, 0.033, 0.0078)
        assert swapped > 1.0
        assert swapped == pytest.approx(1.0684, abs=5e-4)

    def test_readout_correction_swapped_labels(self):
        """Passing (r1, r0) gives the (2p̂₀ − 1 − r0 + r1)/(1 − r0 − r1) form"""
        r0, r1 = 0.0078, 0.033
        p_hat = np.linspace(0.0, 1.0, 11)
        expected = (2 * p_hat - 1 - r0 + r1) / (1 - r0 - r1)
        np.testing.assert_allclose(rabi_readout_correction(p_hat, r1, r0), expected, atol=1e-12)
        np.testing.assert_allclose(rabi_readout_correction(p_hat, r0, r1), (2 * p_hat - 1 + r0 - r1) / (1 - r0 - r1),
                                   atol=1e-12)

    def test_readout_correction_inverts_channel(self):
        """Correcting the noisy probability recovers the true Rabi value"""
        noise = NoiseModel(readout=BitFlipReadout(r0=0.02, r1=0.05))
        q = Query(meas=Meas.Z, prep=Prep.U0, t=4e-7)
        rho = 2 * likelihood_noiseless(LAMBDA, q) - 1
        assert rabi_readout_correction(noisy_likelihood(LAMBDA, noise, q), 0.02, 0.05) == pytest.approx(rho, abs=1e-12)

    def test_correction_undefined(self):
        """r0 + r1 ≥ 1 is rejected"""
        with pytest.raises(DomainError):
            rabi_readout_correction(0.5, 0.6, 0.4)

    def test_invalid_rates(self):
        """Construction rejects r0 + r1 ≥ 1"""
        with pytest.raises(ConfigError):
            BitFlipReadout(r0=0.5, r1=0.5)

    def test_gaussian_flip_rates(self):
        """from_flip_rates reproduces the requested rates"""
        readout = GaussianReadout.from_flip_rates(0.0078, 0.033)
        r0, r1 = readout.flip_rates()
        assert r0 == pytest.approx(0.0078, rel=1e-9)
        assert r1 == pytest.approx(0.033, rel=1e-9)

    def test_gaussian_classifier_error_rate(self):
        """Empirical misclassification matches the analytic flip rates"""
        readout = GaussianReadout.from_flip_rates(0.05, 0.1)
        rng = np.random.default_rng(11)
        n = 20000
        for label, mean, cov, expected in (
            (0, readout.mean0, readout.cov0, 0.05),
            (1, readout.mean1, readout.cov1, 0.1),
        ):
            points = rng.multivariate_normal(mean, cov, size=n)
            bits = readout.classify(points[:, 0] + 1j * points[:, 1])
            rate = float(np.mean(bits != label))
            assert abs(rate - expected) < 3 * math.sqrt(expected * (1 - expected) / n) + 1e-3

    def test_fit_gaussian_readout(self):
        """Fitted class means land near the generating means"""
        truth = GaussianReadout.from_flip_rates(0.02, 0.04)
        rng = np.random.default_rng(12)
        s0 = rng.multivariate_normal(truth.mean0, truth.cov0, size=5000)
        s1 = rng.multivariate_normal(truth.mean1, truth.cov1, size=5000)
        fitted = fit_gaussian_readout(s0[:, 0] + 1j * s0[:, 1], s1[:, 0] + 1j * s1[:, 1])
        assert np.allclose(fitted.mean0, truth.mean0, atol=0.05)
        assert np.allclose(fitted.mean1, truth.mean1, atol=0.05)

    def test_signal_density(self):
        """Density is larger under the class whose mean is closer"""
        readout = GaussianReadout.from_flip_rates(0.02, 0.04)
        assert signal_density(readout, 1.0 + 0j, 0) > signal_density(readout, 1.0 + 0j, 1)
        with pytest.raises(ModelKindError):
            signal_density(BitFlipReadout(), 1.0 + 0j, 0)
        with pytest.raises(DomainError):
            signal_density(readout, 1.0 + 0j, 2)

    def test_degenerate_gaussian(self):
        """Identical class means are rejected"""
        with pytest.raises(ConfigError):
            GaussianReadout(mean0=(0.0, 0.0), mean1=(0.0, 0.0), cov0=((1, 0), (0, 1)), cov1=((1, 0), (0, 1)))

    def test_noisy_rabi_closed_form(self):
        """(1 − p_d)(1 − r0 − r1)·ρ + (r1 − r0)"""
        decoherence = SingleParamDecoherence(mu=8e-7, t0=5e-8)
        noise = NoiseModel(readout=BitFlipReadout(r0=0.02, r1=0.05), decoherence=decoherence)
        q = Query(meas=Meas.Y, prep=Prep.U1, t=3.5e-7)
        p_d = float(depolarization_prob(decoherence, q.t, q.prep))
        expected = (1 - p_d) * (1 - 0.02 - 0.05) * rabi_model(LAMBDA, q.meas, q.prep, q.t) + (0.05 - 0.02)
        assert noisy_rabi(LAMBDA, noise, q) == pytest.approx(expected, abs=1e-12)


class TestDecoherence:
    """Depolarizing-probability models"""

    def test_single_param_decay(self):
        """p_d(t0 + μ) = 1 − e⁻¹ and p_d(t ≤ t0) = 0"""
        d = SingleParamDecoherence(mu=SINGLE_PARAM_MU, t0=1e-7)
        assert depolarization_prob(d, 1e-7 + SINGLE_PARAM_MU) == pytest.approx(1 - math.exp(-1), abs=1e-12)
        assert depolarization_prob(d, 5e-8) == 0.0

    def test_two_param_uses_preparation(self):
        """Each preparation operator decays with its own rate"""
        d = TwoParamDecoherence(mu_u0=5.52e-5, mu_u1=2.51e-5, t0=0.0)
        p = depolarization_prob(d, [1e-5, 1e-5], np.array([0, 1]))
        assert p[0] == pytest.approx(1 - math.exp(-1e-5 / 5.52e-5))
        assert p[1] == pytest.approx(1 - math.exp(-1e-5 / 2.51e-5))

    def test_two_qubit_zero_time(self):
        """No decoherence at t = 0"""
        d = TwoQubitDecoherence(t1_ctrl=94.0 * US, t2_ctrl=177.2 * US, t1_tgt=75.7 * US, t2_tgt=128.1 * US)
        assert depolarization_prob(d, 0.0) == 0.0

    @pytest.mark.parametrize("t_us", [1.0, 5.0, 20.0])
    def test_two_qubit_device_d(self, t_us):
        """Device D times agree with the composed Kraus channel"""
        d = TwoQubitDecoherence(t1_ctrl=94.0 * US, t2_ctrl=177.2 * US, t1_tgt=75.7 * US, t2_tgt=128.1 * US)
        expected = _unitarity_pd(94.0 * US, 177.2 * US, 75.7 * US, 128.1 * US, t_us * US)
        assert depolarization_prob(d, t_us * US) == pytest.approx(expected, abs=1e-10)

    def test_two_qubit_random_channels(self):
        """100 random (T1, T2, t) triples agree with the Pauli-transfer oracle"""
        rng = np.random.default_rng(13)
        for _ in range(100):
            t1 = rng.uniform(10, 200, 2) * US
            t2 = t1 * rng.uniform(0.2, 2.0, 2)
            t = rng.uniform(0, 100) * US
            d = TwoQubitDecoherence(t1_ctrl=t1[0], t2_ctrl=t2[0], t1_tgt=t1[1], t2_tgt=t2[1])
            assert depolarization_prob(d, t) == pytest.approx(_unitarity_pd(t1[0], t2[0], t1[1], t2[1], t), abs=1e-10)

    def test_one_qubit_monotone(self):
        """Target-only damping grows with time and stays in [0, 1]"""
        d = OneQubitDecoherence(t1=75.7 * US, t2=128.1 * US)
        p = depolarization_prob(d, np.linspace(0, 500 * US, 50))
        assert np.all(np.diff(p) >= -1e-15)
        assert p[0] == 0.0 and p[-1] <= 1.0

    def test_t2_bound(self):
        """T2 > 2·T1 is unphysical"""
        with pytest.raises(ConfigError):
            OneQubitDecoherence(t1=10 * US, t2=25 * US)

    def test_invalid_rate(self):
        """μ must be positive"""
        with pytest.raises(ConfigError):
            SingleParamDecoherence(mu=0.0)

    def test_none(self):
        """NoDecoherence is identically zero"""
        assert np.all(depolarization_prob(NoDecoherence(), np.linspace(0, 1e-5, 5)) == 0.0)


class TestPulseShape:
    """Effective time offset of shaped pulses"""

    def test_delta_t_eff(self):
        """Δt_eff = a/(ω + bω²)"""
        omega = 11.45e6
        expected = DEVICE_D_PULSE.a / (omega + DEVICE_D_PULSE.b * omega ** 2)
        assert delta_t_eff(DEVICE_D_PULSE, omega) == pytest.approx(expected)
        with pytest.raises(DomainError):
            delta_t_eff(DEVICE_D_PULSE, 0.0)

    def test_phase_at_zero_frequency(self):
        """An undriven block has no offset; any ω > 0 carries about 2a"""
        t = np.array([0.0, 3e-7])
        phase, d_phase = pulse_phase(DEVICE_D_PULSE, np.zeros(2), t)
        np.testing.assert_array_equal(phase, [0.0, 0.0])
        np.testing.assert_allclose(d_phase, 2 * t)
        near, _ = pulse_phase(DEVICE_D_PULSE, np.full(2, 1e-3), t)
        np.testing.assert_allclose(near, 2 * DEVICE_D_PULSE.a, rtol=1e-6)

    def test_fit_recovers_parameters(self):
        """Noise-free offsets give back (a, b)"""
        omegas = np.array([2e6, 5e6, 8e6, 11e6, 14e6, 20e6])
        offsets = [delta_t_eff(DEVICE_D_PULSE, w) for w in omegas]
        fitted = fit_pulse_model(omegas, offsets)
        assert fitted.a == pytest.approx(DEVICE_D_PULSE.a, rel=1e-2)
        assert fitted.b == pytest.approx(DEVICE_D_PULSE.b, rel=5e-2)

    def test_fit_needs_two_points(self):
        """A single frequency cannot determine two parameters"""
        with pytest.raises(DomainError):
            fit_pulse_model([5e6], [1e-7])

    def test_pulse_shifts_evolution_time(self):
        """Shaped pulse at t equals an ideal pulse at t + Δt_eff(ω)"""
        lam = LambdaParams(omega0=3e6, delta0=0.1, phi0=0.5, omega1=3e6, delta1=0.1, phi1=0.5)
        noise = NoiseModel(pulse=PulseShapeModel(a=2.0, b=1e-8))
        shift = delta_t_eff(noise.pulse, 3e6)
        q = Query(meas=Meas.X, prep=Prep.U0, t=2e-7)
        shifted = Query(meas=Meas.X, prep=Prep.U0, t=2e-7 + shift)
        assert noisy_likelihood(lam, noise, q) == pytest.approx(likelihood_noiseless(lam, shifted), abs=1e-12)


class TestGradient:
    """Analytic ∂p̃/∂Λ"""

    def test_gradient_matches_finite_differences(self):
        """Central differences agree with the analytic gradient under the full noise stack"""
        noise = NoiseModel(
            readout=BitFlipReadout(r0=0.0078, r1=0.033),
            pulse=DEVICE_D_PULSE,
            decoherence=TwoQubitDecoherence(t1_ctrl=94.0 * US, t2_ctrl=177.2 * US, t1_tgt=75.7 * US, t2_tgt=128.1 * US),
        )
        theta = LAMBDA.to_array()
        meas = np.array([0, 1, 2, 0, 1, 2])
        prep = np.array([0, 0, 0, 1, 1, 1])
        t = np.array([1.3e-7, 2.9e-7, 4.1e-7, 1.7e-7, 3.3e-7, 5.6e-7])
        _, grad = noisy_probability(theta, noise, meas, prep, t, gradient=True)
        steps = np.array([1.0, 1e-6, 1e-6, 1.0, 1e-6, 1e-6])
        for k in range(6):
            e = np.zeros(6)
            e[k] = steps[k]
            up = noisy_probability(theta + e, noise, meas, prep, t)
            down = noisy_probability(theta - e, noise, meas, prep, t)
            fd = (up - down) / (2 * steps[k])
            assert np.allclose(grad[:, k], fd, rtol=1e-4, atol=1e-12 if k in (0, 3) else 1e-8)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
