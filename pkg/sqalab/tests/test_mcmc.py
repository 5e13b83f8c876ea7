import numpy as np
import pytest

from sqalab.evolve import boltzmann, integrate_master, tv_distance
from sqalab.generator import build_W
from sqalab.lattice import CouplingGraph, SpinConfiguration, TrotterSystem, trotter_action
from sqalab.mcmc import (
    GammaTable,
    RunSummary,
    SamplerState,
    StateError,
    estimate_tv,
    flip_probability,
    run_annealed,
    step,
    stream_key,
)
from sqalab.schedules import Constant, PowerLaw
from sqalab.tests.conftest import all_configurations, random_system


def _summary(states, n_states):
    states = np.asarray(states, dtype=np.int64)
    return RunSummary(
        replicas=states.shape[0],
        samples_per_replica=states.shape[1],
        horizon=1.0,
        seed=0,
        final_energy_histogram={},
        ground_energy=None,
        ground_hit_rate=None,
        acceptance_stats={},
        replica_states=states,
        n_states=n_states,
    )


def _one_attempt_kernel(sys, gamma):
    n = sys.n_spins
    K = np.zeros((sys.n_states, sys.n_states))
    for config in all_configurations(sys):
        a = config.index
        for k in range(sys.trotter_slices):
            for j in range(sys.n_sites):
                p = flip_probability(sys, config, j, k, gamma)
                K[config.copy().flip(j, k).index, a] += p / n
                K[a, a] += (1 - p) / n
    return K


class TestFlipProbability:
    def test_degenerate_heat_bath(self):
        sys = TrotterSystem(CouplingGraph(2), 2, 1.0)
        for config in all_configurations(sys):
            for k in range(2):
                for j in range(2):
                    assert flip_probability(sys, config, j, k, 0.0) == 0.5

    def test_detailed_balance(self, rng):
        sys = random_system(rng, 2, 3, beta=1.5, alpha=0.5)
        gamma = 0.4
        for _ in range(50):
            config = SpinConfiguration(2, 3, int(rng.integers(sys.n_states)))
            j, k = int(rng.integers(2)), int(rng.integers(3))
            flipped = config.copy().flip(j, k)
            forward = flip_probability(sys, config, j, k, gamma)
            backward = flip_probability(sys, flipped, j, k, gamma)
            delta = trotter_action(sys, flipped, gamma) - trotter_action(sys, config, gamma)
            assert forward / backward == pytest.approx(np.exp(-delta), rel=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_one_attempt_matches_rates(self, rng, alpha):
        sys = random_system(rng, 2, 2, alpha=alpha)
        K = _one_attempt_kernel(sys, 0.3)
        expected = np.eye(sys.n_states) + build_W(sys, 0.3) / sys.n_spins
        assert np.max(np.abs(K - expected)) < 1e-14


class TestStep:
    def test_clock(self, pair_system):
        state = SamplerState.create(pair_system, seed=7)
        schedule = PowerLaw(2, 2, 1.0, c1=1.0)
        for _ in range(10):
            step(state, pair_system, schedule)
        assert state.attempts == 10
        assert state.sim_time == 2.5

    def test_reproducible(self, pair_system):
        schedule = PowerLaw(2, 2, 1.0, c1=1.0)
        first, second = SamplerState.create(pair_system, 11, 3), SamplerState.create(pair_system, 11, 3)
        for _ in range(200):
            step(first, pair_system, schedule)
            step(second, pair_system, schedule)
        assert first.config == second.config
        assert first.counter == second.counter

    def test_replicas_have_distinct_streams(self):
        assert stream_key(5, 0) != stream_key(5, 1)
        with pytest.raises(ValueError):
            stream_key(-1, 0)

    def test_rejects_foreign_state(self, pair_system, ring3):
        state = SamplerState.create(TrotterSystem(ring3, 2, 1.0), seed=1)
        with pytest.raises(StateError):
            step(state, pair_system, Constant(2, 2, 1.0, value=1.0))

    @pytest.mark.parametrize("site_selection", ["random", "sequential"])
    def test_kernel_agrees_with_step(self, rng, site_selection):
        sys = random_system(rng, 2, 2, alpha=0.5)
        schedule = Constant(2, 2, 1.0, value=0.8)
        state = SamplerState.create(sys, seed=3)
        for _ in range(50):
            step(state, sys, schedule, site_selection)
        summary = run_annealed(sys, schedule, horizon=12.5, replicas=1, seed=3, site_selection=site_selection)
        assert summary.replica_states[0, 0] == state.config.index
        assert summary.acceptance_stats["flips"] == state.flips


class TestGammaTable:
    def test_power_law_accuracy(self, rng):
        schedule = PowerLaw(2, 2, 1.0, c1=0.01, c2=1.0)
        table = GammaTable(schedule, 1e4)
        assert table.max_error <= 1e-6
        times = rng.uniform(0, 1e4, size=200)
        exact = np.array([schedule.gamma(t) for t in times])
        assert np.max(np.abs(table(times) - exact) / exact) < 1e-5

    def test_constant(self):
        schedule = Constant(2, 2, 1.0, value=0.5)
        table = GammaTable(schedule, 100.0)
        assert table.knots == 1
        assert np.all(table(np.array([0.0, 50.0])) == schedule.gamma(0.0))


class TestRunAnnealed:
    def test_deterministic(self, pair_system):
        schedule = PowerLaw(2, 2, 1.0, c1=1.0)
        first = run_annealed(pair_system, schedule, 5.0, replicas=8, seed=42, samples=3)
        again = run_annealed(pair_system, schedule, 5.0, replicas=8, seed=42, samples=3)
        threaded = run_annealed(pair_system, schedule, 5.0, replicas=8, seed=42, samples=3, threads=3)
        assert first.to_dict() == again.to_dict() == threaded.to_dict()
        assert np.array_equal(first.replica_states, threaded.replica_states)

    def test_histogram_counts_every_sample(self, pair_system):
        summary = run_annealed(pair_system, Constant(2, 2, 1.0, value=1.0), 2.0, replicas=5, seed=1, samples=4)
        assert sum(summary.final_energy_histogram.values()) == 20
        assert summary.empirical_distribution.sum() == 20
        assert summary.acceptance_stats["attempts"] == 5 * (8 + 3 * 4)

    def test_invalid_arguments(self, pair_system):
        schedule = Constant(2, 2, 1.0, value=1.0)
        with pytest.raises(ValueError):
            run_annealed(pair_system, schedule, 0.0, replicas=1, seed=0)
        with pytest.raises(ValueError):
            run_annealed(pair_system, schedule, 1.0, replicas=0, seed=0)
        with pytest.raises(ValueError):
            run_annealed(pair_system, schedule, 1.0, replicas=1, seed=0, site_selection="checkerboard")

    def test_short_horizon_matches_discrete_propagator(self):
        sys = TrotterSystem(CouplingGraph(1), 2, 1.0)
        schedule = PowerLaw(1, 2, 1.0, c1=1.0, c2=1.0)
        summary = run_annealed(sys, schedule, 1.0, replicas=20000, seed=9, initial="all-up")

        P = np.zeros(4)
        P[0] = 1.0
        for attempt in range(2):
            P = (np.eye(4) + build_W(sys, schedule.gamma(attempt / 2)) / 2) @ P
        counts = summary.empirical_distribution
        assert tv_distance(counts / counts.sum(), P) < 0.02

    @pytest.mark.slow
    def test_short_horizon_matches_master_equation(self):
        # N*M = 2 is one attempt per half sweep; the chain tracks the master equation only after a few sweeps
        sys = TrotterSystem(CouplingGraph(1), 2, 1.0)
        schedule = PowerLaw(1, 2, 1.0, c1=1.0, c2=1.0)
        summary = run_annealed(sys, schedule, 8.0, replicas=20000, seed=13, initial="all-up")

        P0 = np.zeros(4)
        P0[0] = 1.0
        trace = integrate_master(sys, schedule, P0, horizon=8.0, n_observations=8, k_max=0, spectrum_states=0)
        counts = summary.empirical_distribution
        assert tv_distance(counts / counts.sum(), trace.final_state) < 0.02

    @pytest.mark.slow
    def test_fixed_field_samples_boltzmann(self, pair_system):
        schedule = Constant(2, 2, 1.0, value=1.0)
        summary = run_annealed(pair_system, schedule, 20.0, replicas=200, seed=2024, samples=5000, sample_spacing=2.0)
        tv, stderr = estimate_tv(summary, boltzmann(pair_system, schedule.gamma(0.0)))
        assert tv < 0.01
        assert stderr < 0.01

    @pytest.mark.slow
    def test_hit_rate_grows_with_horizon(self):
        sys = TrotterSystem(CouplingGraph.ring(3), 4, 4.0)
        schedule = PowerLaw(3, 4, 4.0, c1=1.0, c2=1.0)
        rates = [
            run_annealed(sys, schedule, T, replicas=2000, seed=5, threads=4).ground_hit_rate for T in [1e2, 1e3, 1e4]
        ]
        for shorter, longer in zip(rates, rates[1:]):
            assert longer >= shorter - 0.02


class TestEstimateTv:
    def test_exact_counts(self):
        summary = _summary([[0], [0], [1], [3]], 4)
        tv, stderr = estimate_tv(summary, [0.5, 0.25, 0.0, 0.25])
        assert tv == 0.0

    def test_single_sample_vs_uniform(self):
        tv, stderr = estimate_tv(_summary([[2]], 4), np.full(4, 0.25))
        assert tv == pytest.approx(0.75)
        assert stderr == 0.0

    def test_missing_histogram(self):
        summary = _summary([[0]], 4)
        summary.replica_states = None
        with pytest.raises(StateError):
            estimate_tv(summary, np.full(4, 0.25))

    def test_stderr_shrinks_with_replicas(self):
        exact = np.array([0.5, 0.25, 0.125, 0.125])

        def stderr(replicas):
            states = np.repeat(np.arange(4), (exact * replicas).astype(int))[:, None]
            return estimate_tv(_summary(states, 4), exact, resamples=400)[1]

        assert stderr(1600) / stderr(400) == pytest.approx(0.5, rel=0.3)
