import json
import os
import sys

import numpy as np
import pytest
from scipy import stats

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.dataset import Dataset, load_dataset, read_header, save_dataset
from src.errors import DomainError, ExhaustedQueryError, ParseError
from src.models import Meas, Prep, Query
from src.noise import BitFlipReadout, GaussianReadout, NoiseModel, noisy_probability
from src.oracle import (
    ReplayOracle,
    SimulatorOracle,
    draw_test_set,
    generate_dataset,
    replay_draw,
    simulate_shot,
)
from src.query_space import QueryDistribution, QuerySpace
from src.rng import RngStream


@pytest.fixture(scope="module")
def space():
    """Default 81-point grid on [0.1, 0.6] µs"""
    return QuerySpace.uniform()


@pytest.fixture(scope="module")
def small_space():
    return QuerySpace.uniform(1e-7, 3e-7, 5)


class TestQuerySpace:
    """Grid layout and indexing"""

    def test_default_grid(self, space):
        """81 times × 3 measurements × 2 preparations"""
        assert space.size == 486
        assert space.spacing == pytest.approx(6.25e-9)
        assert space.nyquist_omega == pytest.approx(np.pi / 6.25e-9)

    def test_index_round_trip(self, space):
        """index_of inverts query"""
        for index in (0, 1, 80, 81, 163, 485):
            assert space.index_of(space.query(index)) == index

    def test_off_grid_query(self, space):
        """Times between grid points are not in the space"""
        with pytest.raises(DomainError):
            space.index_of(Query(meas=Meas.X, prep=Prep.U0, t=1.03e-7))

    def test_extended_keeps_prefix(self, space):
        """Growing the grid keeps earlier times in place"""
        grown = space.extended(80)
        assert grown.n_times == 161
        assert np.allclose(grown.times[:81], space.times)
        assert grown.t_max == pytest.approx(space.t_max + 80 * space.spacing)

    def test_distribution_normalization(self, space):
        """Weights not summing to one are rejected"""
        with pytest.raises(DomainError):
            QueryDistribution(space, np.full(space.size, 0.5))
        q = QueryDistribution.from_unnormalized(space, np.arange(space.size, dtype=float))
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-12)


class TestSimulator:
    """Stochastic oracle over the noisy model"""

    def test_calibration(self, space, d_config2):
        """Outcome frequencies match the noisy likelihood at 10⁴ shots per query"""
        theta = d_config2.theta_star()
        noise = d_config2.noise
        oracle = SimulatorOracle(theta, noise, RngStream(2024, (0,)))
        n = 10_000
        indices = np.repeat(np.arange(space.size), n)
        outcomes = oracle.query(space, indices)
        zeros = np.bincount(indices[outcomes == 0], minlength=space.size)
        p = noisy_probability(theta.to_array(), noise, space.meas_idx, space.prep_idx, space.t)
        chi2 = float(np.sum((zeros - n * p) ** 2 / (n * p * (1 - p))))
        assert stats.chi2.sf(chi2, df=space.size) > 0.001

    def test_gaussian_signals(self, small_space, d_config2):
        """Gaussian readout answers with complex signals"""
        noise = NoiseModel(readout=GaussianReadout.from_flip_rates(0.02, 0.04))
        oracle = SimulatorOracle(d_config2.theta_star(), noise, RngStream(1))
        outcomes = oracle.query(small_space, np.arange(small_space.size))
        assert np.iscomplexobj(outcomes)
        assert oracle.readout_kind == "gaussian"

    def test_deterministic_stream(self, small_space, d_config2):
        """Same (seed, stream) gives the same shots"""
        a = generate_dataset(d_config2.theta_star(), d_config2.noise, small_space, 20, RngStream(7, (1,)))
        b = generate_dataset(d_config2.theta_star(), d_config2.noise, small_space, 20, RngStream(7, (1,)))
        assert np.array_equal(a.shot_arrays()[1], b.shot_arrays()[1])

    def test_child_streams_differ(self):
        """Named children draw independent numbers"""
        root = RngStream(5)
        assert not np.allclose(root.child("dataset").random(8), root.child("learner").random(8))

    def test_single_shot(self, d_config2):
        """simulate_shot returns a bit for bit-flip readout"""
        shot = simulate_shot(d_config2.theta_star(), d_config2.noise, Query(meas=Meas.Z, prep=Prep.U1, t=2e-7), RngStream(3))
        assert shot.y in (0, 1) and shot.signal is None

    def test_unlimited_budget(self, small_space, d_config2):
        """The simulator never runs out"""
        oracle = SimulatorOracle(d_config2.theta_star(), d_config2.noise, RngStream(3))
        assert np.all(np.isinf(oracle.remaining(small_space)))

    def test_test_set_shape(self, small_space, d_config2):
        """Held-out set has one outcome per sampled query"""
        held = draw_test_set(d_config2.theta_star(), d_config2.noise,
                             QueryDistribution.uniform(small_space), 50, RngStream(4))
        assert held.indices.shape == held.outcomes.shape == (50,)


class TestReplay:
    """Replay of recorded shots"""

    @pytest.fixture
    def recorded(self, small_space, d_config2):
        return generate_dataset(d_config2.theta_star(), d_config2.noise, small_space, 4, RngStream(9))

    def test_does_not_mutate_source(self, small_space, recorded):
        """Draws consume the oracle's copy only"""
        before = recorded.ledger.copy()
        oracle = ReplayOracle(recorded, RngStream(10))
        oracle.query(small_space, np.arange(small_space.size))
        assert np.array_equal(recorded.ledger, before)
        assert np.all(oracle.remaining(small_space) == before - 1)

    def test_exhaustion(self, small_space, recorded):
        """Drawing past the recorded shots raises"""
        oracle = ReplayOracle(recorded, RngStream(10))
        for _ in range(4):
            oracle.query(small_space, [0])
        with pytest.raises(ExhaustedQueryError):
            oracle.query(small_space, [0])

    def test_draw_preserves_multiset(self, recorded):
        """Removed shot plus remaining shots equal the original shots"""
        d = recorded.copy()
        original = sorted(d.shots(3).tolist())
        q = d.space.query(3)
        shot = replay_draw(d, q, RngStream(11))
        assert sorted(d.shots(3).tolist() + [shot.y]) == original

    def test_grown_space_outside_recording(self, small_space, recorded):
        """Queries past the recorded grid have no shots"""
        oracle = ReplayOracle(recorded, RngStream(10))
        grown = small_space.extended(3)
        remaining = oracle.remaining(grown)
        assert remaining[grown.index_of(Query(meas=Meas.X, prep=Prep.U0, t=grown.t_max))] == 0


class TestDatasetFile:
    """JSONL dataset format"""

    def test_save_and_load(self, tmp_path, small_space, d_config2):
        """A saved dataset loads back with the same ledger and outcomes"""
        d = generate_dataset(d_config2.theta_star(), d_config2.noise, small_space, 3, RngStream(12))
        path = str(tmp_path / "dataset.jsonl")
        save_dataset(d, path, {"seed": 12})
        loaded = load_dataset(path)
        assert np.array_equal(loaded.ledger, d.ledger)
        assert np.array_equal(loaded.shot_arrays()[1], d.shot_arrays()[1])
        header = read_header(path)
        assert header["seed"] == 12 and header["shots_per_query"] == 3

    def test_signal_dataset(self, tmp_path, small_space, d_config2):
        """Complex signals survive the file format"""
        noise = NoiseModel(readout=GaussianReadout.from_flip_rates(0.02, 0.04))
        d = generate_dataset(d_config2.theta_star(), noise, small_space, 2, RngStream(13))
        path = str(tmp_path / "signals.jsonl")
        save_dataset(d, path)
        loaded = load_dataset(path)
        assert loaded.is_signal
        assert np.allclose(loaded.shot_arrays()[1], d.shot_arrays()[1])
        with pytest.raises(DomainError):
            loaded.counts()

    def test_malformed_record_line_number(self, tmp_path, small_space):
        """Parse errors name the offending line"""
        d = Dataset(small_space)
        d.add_shots(0, [0, 1])
        path = tmp_path / "bad.jsonl"
        save_dataset(d, str(path))
        lines = path.read_text().splitlines()
        lines[2] = '{"m": "Q", "u": 0, "t": 1e-07, "y": 0}'
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_dataset(str(path))
        assert info.value.line_number == 3

    def test_record_count_mismatch(self, tmp_path, small_space):
        """Header n_records must match the file"""
        d = Dataset(small_space)
        d.add_shots(1, [1, 1, 0])
        path = tmp_path / "short.jsonl"
        save_dataset(d, str(path))
        lines = path.read_text().splitlines()[:-1]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError):
            load_dataset(str(path))

    def test_regrid_moves_shots(self, small_space):
        """Shots follow their query into a grown space"""
        d = Dataset(small_space)
        d.add_shots(small_space.index_of(Query(meas=Meas.Y, prep=Prep.U1, t=small_space.t_max)), [0, 0, 1])
        grown = d.regrid(small_space.extended(2))
        assert grown.total_shots == 3
        assert grown.ledger[grown.space.index_of(Query(meas=Meas.Y, prep=Prep.U1, t=small_space.t_max))] == 3

    def test_header_is_json(self, tmp_path, small_space):
        """First line carries the grid description"""
        path = tmp_path / "empty.jsonl"
        save_dataset(Dataset(small_space), str(path))
        header = json.loads(path.read_text().splitlines()[0])
        assert header["time_grid"]["n_times"] == 5
        assert header["n_records"] == 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
