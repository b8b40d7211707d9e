"""
Desk-scale scaling checks on the simulator.
Skipped by default; set HAL_RUN_SLOW=1 to run them.
"""
import os
import sys
from typing import Dict, List

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.estimate import EstimatorConfig, baseline_estimate, mle
from src.fisher import ParamMask, cramer_rao_rmse, distribution_fisher
from src.hal import LearnerConfig, RunRecord, Scenario, ThetaConfig, run_learner
from src.metrics import fit_scaling_slope, query_advantage, rmse, testing_error
from src.oracle import SimulatorOracle, draw_test_set, generate_dataset
from src.query_space import QueryDistribution, QuerySpace
from src.rng import RngStream

pytestmark = pytest.mark.slow

N_RUNS = 25
QN_ONLY = EstimatorConfig(stage_lambda=False, stage_j=False, qn_maxiter=200)
FREQUENCIES = ParamMask.from_names(["omega0", "omega1"])


def _sweep(preset, scenario: Scenario, space: QuerySpace, seed: int, n_runs: int = N_RUNS,
           **learner) -> List[RunRecord]:
    theta = preset.theta_star()
    fields = {"scenario": scenario, "estimator": QN_ONLY}
    fields.update(learner)
    cfg = LearnerConfig(**fields)
    records = []
    for run_id in range(n_runs):
        rng = RngStream(seed, (list(Scenario).index(scenario), run_id))
        oracle = SimulatorOracle(theta, preset.noise, rng.child("oracle"))
        records.append(run_learner(oracle, ThetaConfig(truth=theta, prior=theta), preset.noise, space, cfg,
                                   rng, run_id=run_id))
    return records


def _curve(records: List[RunRecord], theta_star, mask=None):
    """(N_tot, RMSE over runs, t_max) per round"""
    n_rounds = min(len(r.rounds) for r in records)
    n = [records[0].rounds[i].n_tot for i in range(n_rounds)]
    err = [rmse([r.thetas()[i] for r in records], theta_star, coords="lambda", mask=mask) for i in range(n_rounds)]
    t_max = [records[0].rounds[i].t_max for i in range(n_rounds)]
    return np.array(n, dtype=float), np.array(err), np.array(t_max)


def _median_errors(records: List[RunRecord], theta_star) -> Dict[int, float]:
    by_n: Dict[int, List[float]] = {}
    for record in records:
        for entry, theta in zip(record.rounds, record.thetas()):
            by_n.setdefault(entry.n_tot, []).append(rmse([theta], theta_star, coords="lambda"))
    return {n: float(np.median(v)) for n, v in by_n.items()}


class TestEstimatorConsistency:
    """Maximum likelihood against the Cramér–Rao floor"""

    def test_self_consistency(self, d_config2):
        """10⁵ uniform shots: RMSE within twice the Cramér–Rao floor"""
        theta = d_config2.theta_star()
        space = QuerySpace.uniform()
        shots_per_query = 206
        estimates = []
        for seed in range(10):
            d = generate_dataset(theta, d_config2.noise, space, shots_per_query, RngStream(100 + seed))
            init = baseline_estimate(d, noise=d_config2.noise)
            estimates.append(mle(d, d_config2.noise, init, QN_ONLY, RngStream(200 + seed)))
        floor = cramer_rao_rmse(distribution_fisher(QueryDistribution.uniform(space), theta, d_config2.noise),
                                shots_per_query * space.size)
        assert rmse(estimates, theta, coords="lambda") <= 2 * floor

    def test_baseline_worse_than_mle(self, d_config2):
        """At 5 shots per query the regression estimate loses to the likelihood solve"""
        theta = d_config2.theta_star()
        space = QuerySpace.uniform()
        wins = 0
        for seed in range(50):
            d = generate_dataset(theta, d_config2.noise, space, 5, RngStream(300 + seed))
            init = baseline_estimate(d, noise=d_config2.noise)
            fitted = mle(d, d_config2.noise, init, EstimatorConfig(), RngStream(400 + seed))
            wins += rmse([init], theta, coords="lambda") > rmse([fitted], theta, coords="lambda")
        assert wins >= 45


class TestPassiveScaling:
    """Standard quantum limit of the passive learner"""

    @pytest.fixture(scope="class")
    def passive(self, d_config2):
        return _sweep(d_config2, Scenario.PASSIVE, QuerySpace.uniform(), 500, n_b=9720, i_max=10)

    def test_sql_slope(self, passive, d_config2):
        """RMSE ∝ N^(−1/2) from 2.4e3 to 1e5 shots"""
        n, err, _ = _curve(passive, d_config2.theta_star())
        fit = fit_scaling_slope((n, err))
        assert -0.6 <= fit.slope <= -0.4

    def test_testing_error_slope(self, passive, d_config2):
        """Testing error ∝ 1/N on 10⁴ uniform held-out queries"""
        theta = d_config2.theta_star()
        space = QuerySpace.uniform()
        heldout = draw_test_set(theta, d_config2.noise, QueryDistribution.uniform(space), 10_000, RngStream(501))
        n_rounds = len(passive[0].rounds)
        n = [passive[0].rounds[i].n_tot for i in range(n_rounds)]
        errors = [np.mean([testing_error(r.thetas()[i], theta, d_config2.noise, heldout) for r in passive])
                  for i in range(n_rounds)]
        fit = fit_scaling_slope((n, errors))
        assert -1.2 <= fit.slope <= -0.8


class TestActiveAdvantage:
    """HAL-FI against the passive learner and the baseline"""

    @pytest.fixture(scope="class")
    def sweeps(self, d_config2):
        space = QuerySpace.uniform()
        return {
            scenario: _sweep(d_config2, scenario, space, 600, n_b=9720, i_max=10)
            for scenario in (Scenario.BASELINE, Scenario.PASSIVE, Scenario.HAL_FI_FIXED)
        }

    def test_hal_fi_dominates_passive(self, sweeps, d_config2):
        """Median RMSE of HAL-FI is at most the passive median at every N ≥ 2e4"""
        theta = d_config2.theta_star()
        active = _median_errors(sweeps[Scenario.HAL_FI_FIXED], theta)
        passive = _median_errors(sweeps[Scenario.PASSIVE], theta)
        shared = [n for n in active if n in passive and n >= 20_000]
        assert shared
        for n in shared:
            assert active[n] <= passive[n]

    def test_query_advantage_over_baseline(self, sweeps, d_config2):
        """QA ≥ 0.9 at the smallest error both curves reach"""
        theta = d_config2.theta_star()
        n_a, err_a, _ = _curve(sweeps[Scenario.HAL_FI_FIXED], theta)
        n_b, err_b, _ = _curve(sweeps[Scenario.BASELINE], theta)
        epsilon = max(err_a.min(), err_b.min())
        assert query_advantage((n_a, err_a), (n_b, err_b), epsilon) >= 0.90


class TestRecalibration:
    """Frequency-only learning with growing evolution times"""

    def test_linear_growth_super_heisenberg(self, d_config2):
        """Masked LinearT learner beats N^(−1.2) while t_max stays below min(T1, T2)"""
        theta = d_config2.theta_star()
        records = _sweep(d_config2, Scenario.HAL_FI_LINEAR_T, QuerySpace.uniform(), 700,
                         param_mask=["omega0", "omega1"], i_max=20)
        n, err, t_max = _curve(records, theta, FREQUENCIES)
        coherent = t_max < d_config2.noise.decoherence.min_coherence_time
        fit = fit_scaling_slope((n[coherent][1:], err[coherent][1:]))
        assert fit.slope <= -1.2

    def test_exponential_growth_bends_after_t1(self, d_config2):
        """ExponentialT slope relaxes once t_max passes the coherence time"""
        theta = d_config2.theta_star()
        space = QuerySpace.uniform(1e-7, 6e-7, 21)
        records = _sweep(d_config2, Scenario.HAL_FI_EXP_T, space, 800, n_runs=10,
                         param_mask=["omega0", "omega1"], i_max=10)
        n, err, t_max = _curve(records, theta, FREQUENCIES)
        crossing = d_config2.noise.decoherence.min_coherence_time
        before = fit_scaling_slope((n[t_max < crossing][1:], err[t_max < crossing][1:]))
        after = fit_scaling_slope((n[t_max >= crossing], err[t_max >= crossing]))
        assert before.slope <= -1.0
        assert after.slope > before.slope + 0.3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
