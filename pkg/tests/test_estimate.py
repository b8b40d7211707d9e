import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.dataset import Dataset
from src.errors import DomainError, MissingDataError, WeakSignalError
from src.fisher import ParamMask
from src.estimate import (
    EstimatorConfig,
    RabiCurve,
    baseline_estimate,
    bootstrap_rabi,
    energy_landscape,
    estimate_block_frequency,
    estimate_frequencies,
    init_estimate,
    mle,
    negative_log_likelihood,
    rabi_from_data,
    resolvable_omega,
)
from src.hamiltonian import rabi_values
from src.models import LambdaParams
from src.noise import BitFlipReadout, NoiseModel
from src.oracle import generate_dataset
from src.query_space import QuerySpace
from src.rng import RngStream

CONFIG2 = LambdaParams(omega0=1.94e6, delta0=0.06, phi0=-0.15, omega1=11.45e6, delta1=-0.06, phi1=2.9)
FAST = LambdaParams(omega0=6.0e6, delta0=0.2, phi0=0.4, omega1=11.45e6, delta1=-0.1, phi1=2.6)
SMALL_CFG = EstimatorConfig(max_epochs=3, qn_maxiter=50)


@pytest.fixture(scope="module")
def grid():
    """Default 81-point evolution-time grid"""
    return QuerySpace.uniform()


def _exact_curves(lam: LambdaParams, space: QuerySpace):
    curves = {}
    for m in range(3):
        for u in (0, 1):
            values = rabi_values(lam.to_array(), np.full(space.n_times, m), np.full(space.n_times, u), space.times)
            curves[(m, u)] = RabiCurve(m, u, space.times, values, np.ones(space.n_times))
    return curves


class TestRabiInference:
    """Per-query p̂_rabi"""

    def test_all_zero_shots(self, grid):
        """Every shot reading 0 gives p̂ = 1"""
        d = Dataset(grid)
        for i in range(grid.size):
            d.add_shots(i, [0] * 5)
        curves = rabi_from_data(d)
        assert all(np.allclose(c.values, 1.0) for c in curves.values())

    def test_correction_is_unclamped(self, grid):
        """With readout noise the corrected extreme leaves [−1, 1]"""
        d = Dataset(grid)
        for i in range(grid.size):
            d.add_shots(i, [0] * 5)
        curves = rabi_from_data(d, BitFlipReadout(r0=0.0078, r1=0.033))
        assert all(np.all(c.values > 1.0) for c in curves.values())

    def test_binomial_deviation(self, grid):
        """10⁴ shots per query keep p̂ within 3σ of the true Rabi value"""
        noise = NoiseModel()
        d = generate_dataset(FAST, noise, grid, 10_000, RngStream(31))
        for (m, u), c in rabi_from_data(d).items():
            truth = rabi_values(FAST.to_array(), np.full(c.size, m), np.full(c.size, u), c.times)
            bound = 3 * np.sqrt(np.clip(1 - truth ** 2, 0, None) / 10_000) + 1e-12
            assert np.mean(np.abs(c.values - truth) <= bound) >= 0.98

    def test_missing_query(self, grid):
        """A query without shots cannot be inferred"""
        with pytest.raises(MissingDataError):
            rabi_from_data(Dataset(grid))


class TestFrequencies:
    """FFT and normal-equation frequency estimation"""

    def test_single_curve(self, grid):
        """cos(2ωt) at ω = 1.94e6 s⁻¹ is recovered within 0.5%"""
        omega = 1.94e6
        curve = RabiCurve(2, 0, grid.times, np.cos(2 * omega * grid.times), np.ones(grid.n_times))
        assert estimate_block_frequency([curve], grid.spacing) == pytest.approx(omega, rel=5e-3)

    @pytest.mark.parametrize("omega", np.linspace(3.1e6, 24.3e6, 20))
    def test_off_bin_frequencies(self, grid, omega):
        """Frequencies between Fourier bins are recovered within 0.5%"""
        curve = RabiCurve(2, 0, grid.times, np.cos(2 * omega * grid.times), np.ones(grid.n_times))
        assert estimate_block_frequency([curve], grid.spacing) == pytest.approx(omega, rel=5e-3)

    def test_search_ceiling(self, grid):
        """Frequencies past half the bound-box ceiling alias back below it"""
        ceiling = resolvable_omega(grid.spacing)
        assert ceiling == pytest.approx(grid.nyquist_omega / 2)
        omega = 0.8 * grid.nyquist_omega
        curve = RabiCurve(2, 0, grid.times, np.cos(2 * omega * grid.times), np.ones(grid.n_times))
        assert estimate_block_frequency([curve], grid.spacing) <= ceiling * (1 + 1e-12)

    def test_flat_curve(self, grid):
        """Zeros carry no frequency"""
        curve = RabiCurve(2, 0, grid.times, np.zeros(grid.n_times), np.ones(grid.n_times))
        with pytest.raises(WeakSignalError):
            estimate_block_frequency([curve], grid.spacing)

    def test_short_curve(self, grid):
        """Fewer than eight points is not enough"""
        curve = RabiCurve(2, 0, grid.times[:5], np.ones(5), np.ones(5))
        with pytest.raises(DomainError):
            estimate_block_frequency([curve], grid.spacing)

    def test_blocks_use_their_preparation(self, grid):
        """U0 curves give ω0 and U1 curves give ω1"""
        omega0, omega1 = estimate_frequencies(_exact_curves(FAST, grid), grid)
        assert omega0 == pytest.approx(FAST.omega0, rel=5e-3)
        assert omega1 == pytest.approx(FAST.omega1, rel=5e-3)


class TestRegressionInit:
    """Regression initialization of Λ"""

    def test_recovers_config2(self, grid):
        """Noiseless curves invert to Λ within 5% per component"""
        estimate = init_estimate(_exact_curves(CONFIG2, grid), grid)
        assert estimate.to_array() == pytest.approx(CONFIG2.to_array(), rel=0.05)

    def test_zero_tilt_and_phase(self, grid):
        """δ = φ = 0 comes back as zero: flat MX, full-amplitude MY"""
        lam = LambdaParams(omega0=6.0e6, delta0=0.0, phi0=0.0, omega1=9.0e6, delta1=0.0, phi1=0.0)
        estimate = init_estimate(_exact_curves(lam, grid), grid)
        assert abs(estimate.delta0) < 1e-3 and abs(estimate.phi0) < 1e-3
        assert abs(estimate.delta1) < 1e-3 and abs(estimate.phi1) < 1e-3

    def test_baseline_on_dense_data(self, grid):
        """Baseline estimate from many shots lands near θ*"""
        d = generate_dataset(FAST, NoiseModel(), grid, 2000, RngStream(32))
        estimate = baseline_estimate(d)
        assert estimate.omega0 == pytest.approx(FAST.omega0, rel=0.01)
        assert estimate.omega1 == pytest.approx(FAST.omega1, rel=0.01)


class TestLikelihood:
    """Empirical negative log-likelihood and the staged solve"""

    @pytest.fixture(scope="class")
    def noisy(self):
        return NoiseModel(readout=BitFlipReadout(r0=0.0078, r1=0.033))

    @pytest.fixture(scope="class")
    def data(self, noisy):
        space = QuerySpace.uniform(1e-7, 6e-7, 21)
        return generate_dataset(FAST, noisy, space, 20, RngStream(33))

    def test_gradient_matches_finite_differences(self, data, noisy):
        """Analytic NLL gradient agrees with central differences at random θ"""
        rng = np.random.default_rng(34)
        steps = np.array([1.0, 1e-6, 1e-6, 1.0, 1e-6, 1e-6])
        for _ in range(10):
            theta = FAST.to_array() + rng.normal(0, 1, 6) * np.array([2e5, 0.1, 0.1, 2e5, 0.1, 0.1])
            _, grad = negative_log_likelihood(theta, data, noisy, gradient=True)
            for k in range(6):
                e = np.zeros(6)
                e[k] = steps[k]
                fd = (negative_log_likelihood(theta + e, data, noisy)
                      - negative_log_likelihood(theta - e, data, noisy)) / (2 * steps[k])
                assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-9 if k in (0, 3) else 1e-7)

    def test_mle_never_worse_than_init(self, data, noisy):
        """Returned θ̂ has loss at most the initial loss"""
        init = LambdaParams.from_array(FAST.to_array() + np.array([3e5, 0.05, -0.05, -2e5, 0.05, 0.05]))
        estimate = mle(data, noisy, init, SMALL_CFG, RngStream(35))
        assert negative_log_likelihood(estimate, data, noisy) <= negative_log_likelihood(init, data, noisy) + 1e-12

    def test_mle_quasi_newton_only(self, data, noisy):
        """Stochastic stages can be skipped"""
        cfg = EstimatorConfig(stage_lambda=False, stage_j=False, qn_maxiter=100)
        estimate = mle(data, noisy, FAST, cfg, RngStream(36))
        assert negative_log_likelihood(estimate, data, noisy) <= negative_log_likelihood(FAST, data, noisy) + 1e-12
        assert estimate.omega0 <= data.space.nyquist_omega

    def test_masked_mle_moves_only_masked(self, data, noisy):
        """Components outside the mask keep their initial values"""
        init = LambdaParams.from_array(FAST.to_array() + np.array([3e5, 0.0, 0.0, -2e5, 0.0, 0.0]))
        estimate = mle(data, noisy, init, SMALL_CFG, RngStream(37), mask=ParamMask.from_names(["omega0", "omega1"]))
        for name in ("delta0", "phi0", "delta1", "phi1"):
            assert getattr(estimate, name) == pytest.approx(getattr(init, name), abs=1e-12)

    def test_empty_dataset(self, noisy):
        """Nothing to fit"""
        with pytest.raises(DomainError):
            mle(Dataset(QuerySpace.uniform(1e-7, 6e-7, 21)), noisy, FAST, SMALL_CFG)


class TestDiagnostics:
    """Bootstrap and energy landscape"""

    @pytest.fixture(scope="class")
    def dense(self):
        return generate_dataset(FAST, NoiseModel(), QuerySpace.uniform(), 500, RngStream(38))

    def test_bootstrap_minimal(self, dense):
        """n_rep = 2 runs"""
        result = bootstrap_rabi(dense, 2, RngStream(39))
        assert result.omegas.shape == (2, 2)

    def test_bootstrap_concentrates(self, dense):
        """Spread of ω̂ is small at 500 shots per query and the interval brackets the median"""
        result = bootstrap_rabi(dense, 20, RngStream(40))
        spread = result.omegas.std(axis=0) / result.omegas.mean(axis=0)
        assert np.all(spread < 0.02)
        low, high = result.interval(0.95)[0]
        assert low <= result.scale[0] <= high

    def test_bootstrap_needs_two(self, dense):
        with pytest.raises(DomainError):
            bootstrap_rabi(dense, 1, RngStream(41))

    def test_energy_landscape(self, dense):
        """One slice per Λ component, centred on θ̂"""
        df = energy_landscape(dense, NoiseModel(), FAST, n_points=7)
        assert len(df) == 6 * 7
        centre = df[df["is_estimate"]]
        assert len(centre) == 6
        assert np.allclose(centre["loss"], negative_log_likelihood(FAST, dense, NoiseModel()))

    def test_energy_landscape_coords(self, dense):
        with pytest.raises(DomainError):
            energy_landscape(dense, NoiseModel(), FAST, coords="polar")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
