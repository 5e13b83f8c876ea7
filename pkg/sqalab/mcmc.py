"""
Single-spin-flip heat-bath Monte Carlo on the Trotter lattice.

One attempt picks a spin, evaluates x = beta*H_{j,k} at gamma(t) and flips it
with probability expit(2x), the continuous-time rate. Each attempt advances the
simulation clock by 1/(N*M), so a sweep is one unit of master-equation time and
the one-attempt kernel is I + W/(N*M).

Every replica draws from its own Philox stream keyed by (seed, replica), one
counter block of four uniforms per attempt, so a run replays bit for bit.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import expit

from sqalab.lattice import SpinConfiguration, local_field

log = logging.getLogger(__name__)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


GAMMA_TABLE_KNOTS = 1024
GAMMA_TABLE_RTOL = 1e-6
GAMMA_TABLE_MAX_KNOTS = 2**20
CHUNK_ATTEMPTS = 2**15
# Replica states are kept as integer indices; beyond this the empirical
# distribution over 2^(N*M) states is not built.
EMPIRICAL_MAX_SPINS = 20
ENERGY_DIGITS = 10

SITE_SELECTIONS = ("random", "sequential")
INITIAL_STATES = ("uniform", "all-up")


def stream_key(seed, replica):
    """128-bit Philox key: the seed in the low word, the replica in the high word."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed) + (int(replica) << 64)


def replica_generator(seed, replica):
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica)))


def initial_configuration(sys, seed, replica, initial="uniform"):
    """The replica's starting state, drawn from a counter block far from the attempt stream."""
    match initial:
        case "uniform":
            bitgen = np.random.Philox(key=stream_key(seed, replica), counter=[0, 0, 0, 1])
            spins = 1 - 2 * np.random.Generator(bitgen).integers(0, 2, size=sys.n_spins)
            return SpinConfiguration.from_spins(spins, sys.n_sites, sys.trotter_slices)
        case "all-up":
            return SpinConfiguration.all_up(sys.n_sites, sys.trotter_slices)
        case _:
            raise ValueError(f"initial state must be one of {INITIAL_STATES}, got {initial!r}")


@dataclass
class SamplerState:
    config: SpinConfiguration
    stream: int
    rng: np.random.Generator = field(repr=False)
    attempts: int = 0
    flips: int = 0

    @classmethod
    def create(cls, sys, seed, replica=0, initial="uniform"):
        return cls(
            initial_configuration(sys, seed, replica, initial),
            stream_key(seed, replica),
            replica_generator(seed, replica),
        )

    @property
    def sim_time(self):
        n = self.config.n_spins
        return self.attempts / n

    @property
    def counter(self):
        return self.rng.bit_generator.state["state"]["counter"].tolist()


def flip_probability(sys, config, j, k, gamma):
    """Heat-bath probability expit(2 beta H_{j,k}) of flipping spin (j, k)."""
    return float(expit(2.0 * local_field(sys, config, j, k, gamma)))


def _pick_site(u, n_spins, attempt, site_selection):
    if site_selection == "sequential":
        return attempt % n_spins
    return min(int(u * n_spins), n_spins - 1)


def step(state, sys, schedule, site_selection="random"):
    """One flip attempt at gamma(sim_time); advances sim_time by 1/(N*M)."""
    if state.config.n_spins != sys.n_spins:
        raise StateError(f"state has {state.config.n_spins} spins, the system has {sys.n_spins}")
    u = state.rng.random(4)
    i = _pick_site(u[0], sys.n_spins, state.attempts, site_selection)
    k, j = divmod(i, sys.n_sites)
    gamma = schedule.gamma(state.sim_time)
    if u[1] < flip_probability(sys, state.config, j, k, gamma):
        state.config.flip(j, k)
        state.flips += 1
    state.attempts += 1
    return state


class GammaTable:
    """
    gamma(t) on [0, horizon] from a monotone cubic through knots spaced evenly
    in log(1 + t). The knot count doubles until the relative error at every
    knot midpoint is below rtol.
    """

    def __init__(self, schedule, horizon, knots=GAMMA_TABLE_KNOTS, rtol=GAMMA_TABLE_RTOL):
        self.schedule = schedule
        self.horizon = float(horizon)
        self.constant = None
        if not schedule.is_time_dependent:
            self.constant = schedule.gamma(0.0)
            self.knots = 1
            self.max_error = 0.0
            return

        while True:
            s = np.linspace(0.0, math.log1p(self.horizon), knots)
            self._interp = PchipInterpolator(s, [schedule.gamma(t) for t in np.expm1(s)])
            mid = 0.5 * (s[1:] + s[:-1])
            exact = np.array([schedule.gamma(t) for t in np.expm1(mid)])
            self.max_error = float(np.max(np.abs(self._interp(mid) - exact) / np.abs(exact)))
            if self.max_error <= rtol:
                break
            if knots >= GAMMA_TABLE_MAX_KNOTS:
                log.warning(f"gamma table unvalidated: relative error {self.max_error:.3g} at {knots} knots")
                break
            knots *= 2
        self.knots = knots
        log.debug(f"gamma table with {knots} knots, max relative error {self.max_error:.3g}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.constant is not None:
            return np.full(t.shape, self.constant)
        return self._interp(np.log1p(t))


@njit(nogil=True)
def _sweep_kernel(spins, n_sites, beta_over_m, indptr, indices, weights, bath_row, gammas, uniforms, first, sequential):
    """
    Runs len(gammas) attempts in place on the flat spin array; returns the
    number of flips.
    """
    n = spins.size
    m = n // n_sites
    flips = 0
    for a in range(gammas.size):
        if sequential:
            i = (first + a) % n
        else:
            i = min(int(uniforms[a, 0] * n), n - 1)
        k = i // n_sites
        j = i - k * n_sites
        row = k * n_sites

        spatial = 0.0
        for q in range(indptr[j], indptr[j + 1]):
            spatial += weights[q] * spins[row + indices[q]]
        h = beta_over_m * spatial
        h += gammas[a] * (spins[((k + 1) % m) * n_sites + j] + spins[((k - 1 + m) % m) * n_sites + j])
        for kp in range(m):
            if kp != k:
                h += bath_row[abs(k - kp)] * spins[kp * n_sites + j]

        x = -spins[i] * h
        if x >= 0.0:
            p = 1.0 / (1.0 + math.exp(-2.0 * x))
        else:
            e = math.exp(2.0 * x)
            p = e / (1.0 + e)
        if uniforms[a, 1] < p:
            spins[i] = -spins[i]
            flips += 1
    return flips


def _neighbour_arrays(graph):
    indptr = np.zeros(graph.n_sites + 1, dtype=np.int64)
    indices, weights = [], []
    for j in range(graph.n_sites):
        for jp, coupling in graph.neighbours[j]:
            indices.append(jp)
            weights.append(coupling)
        indptr[j + 1] = len(indices)
    return indptr, np.array(indices, dtype=np.int64), np.array(weights, dtype=float)


def slice_energies(graph, spins, trotter_slices):
    """Classical energy of every Trotter slice of a flat spin array."""
    s = np.asarray(spins, dtype=float).reshape(trotter_slices, graph.n_sites)
    return -0.5 * np.einsum("kj,ji,ki->k", s, graph.coupling_matrix, s)


class _Runner:
    """Drives one replica through the kernel in chunks of attempts."""

    def __init__(self, sys, table, site_selection):
        self.sys = sys
        self.table = table
        self.sequential = site_selection == "sequential"
        self.beta_over_m = sys.inverse_temperature / sys.trotter_slices
        self.indptr, self.indices, self.weights = _neighbour_arrays(sys.graph)
        self.bath_row = np.ascontiguousarray(sys.bath_row, dtype=float)

    def advance(self, state, spins, attempts):
        n = self.sys.n_spins
        done = 0
        while done < attempts:
            size = min(CHUNK_ATTEMPTS, attempts - done)
            uniforms = state.rng.random((size, 4))
            times = (state.attempts + np.arange(size)) / n
            gammas = np.ascontiguousarray(self.table(times), dtype=float)
            state.flips += _sweep_kernel(
                spins,
                self.sys.n_sites,
                self.beta_over_m,
                self.indptr,
                self.indices,
                self.weights,
                self.bath_row,
                gammas,
                uniforms,
                state.attempts,
                self.sequential,
            )
            state.attempts += size
            done += size


@dataclass
class ReplicaResult:
    states: list
    # lowest slice energy of every recorded sample; the first is at the horizon
    energies: list
    flips: int
    attempts: int


@dataclass
class RunSummary:
    replicas: int
    samples_per_replica: int
    horizon: float
    seed: int
    final_energy_histogram: dict
    ground_energy: float | None
    ground_hit_rate: float | None
    acceptance_stats: dict
    # (replicas, samples) configuration indices; None above EMPIRICAL_MAX_SPINS
    replica_states: np.ndarray | None = field(default=None, repr=False)
    n_states: int | None = None

    @property
    def empirical_distribution(self):
        """Visit counts over all 2^(N*M) configurations, or None when too large."""
        if self.replica_states is None:
            return None
        return np.bincount(self.replica_states.ravel(), minlength=self.n_states)

    def to_dict(self):
        return {
            "replicas": self.replicas,
            "samples_per_replica": self.samples_per_replica,
            "horizon": self.horizon,
            "seed": self.seed,
            "final_energy_histogram": self.final_energy_histogram,
            "ground_energy": self.ground_energy,
            "ground_hit_rate": self.ground_hit_rate,
            "acceptance_stats": self.acceptance_stats,
        }

    def histogram_rows(self):
        counts = self.empirical_distribution
        if counts is None:
            raise StateError("run kept no per-state histogram")
        return [[int(i), int(c)] for i, c in enumerate(counts) if c]


def run_annealed(
    sys,
    schedule,
    horizon,
    replicas,
    seed,
    threads=1,
    samples=1,
    sample_spacing=1.0,
    site_selection="random",
    initial="uniform",
    progress_every=None,
):
    """
    R independent replicas, each making horizon*N*M attempts under the schedule
    and then recording `samples` configurations sample_spacing apart while the
    schedule carries on.

    The energy of a sample is the lowest classical energy among the Trotter
    slices; the histogram counts every sample. A replica hits when the sample
    taken at the horizon reaches the exact optimum (known for up to 20 sites).
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if replicas < 1:
        raise ValueError("need at least one replica")
    if samples < 1:
        raise ValueError("need at least one sample per replica")
    if site_selection not in SITE_SELECTIONS:
        raise ValueError(f"site selection must be one of {SITE_SELECTIONS}, got {site_selection!r}")

    n = sys.n_spins
    anneal_attempts = max(1, round(horizon * n))
    spacing_attempts = max(1, round(sample_spacing * n))
    total_time = (anneal_attempts + (samples - 1) * spacing_attempts) / n
    table = GammaTable(schedule, total_time)
    runner = _Runner(sys, table, site_selection)
    keep_states = n <= EMPIRICAL_MAX_SPINS

    log.info(
        f"Annealing {replicas} replica(s) of {n} spins for {anneal_attempts} attempts "
        f"under {schedule.name}, {samples} sample(s) each, seed {seed}"
    )

    def record(spins, states, energies):
        energies.append(float(slice_energies(sys.graph, spins, sys.trotter_slices).min()))
        if keep_states:
            states.append(_index(spins))

    def one(replica):
        state = SamplerState.create(sys, seed, replica, initial)
        spins = state.config.spins.astype(np.int8)
        states, energies = [], []
        runner.advance(state, spins, anneal_attempts)
        record(spins, states, energies)
        for _ in range(samples - 1):
            runner.advance(state, spins, spacing_attempts)
            record(spins, states, energies)
        state.config = SpinConfiguration.from_spins(spins, sys.n_sites, sys.trotter_slices)
        if progress_every and (replica + 1) % progress_every == 0:
            log.info(f"Replica {replica + 1}/{replicas} done")
        return ReplicaResult(states, energies, state.flips, state.attempts)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replicas)))
    else:
        results = [one(r) for r in range(replicas)]

    ground = sys.graph.ground_energy()
    histogram = {}
    for r in results:
        for energy in r.energies:
            key = repr(round(energy, ENERGY_DIGITS))
            histogram[key] = histogram.get(key, 0) + 1
    hits = None
    if ground is not None:
        hits = sum(abs(r.energies[0] - ground) <= 1e-9 for r in results) / replicas

    attempts = sum(r.attempts for r in results)
    flips = sum(r.flips for r in results)
    summary = RunSummary(
        replicas=replicas,
        samples_per_replica=samples,
        horizon=float(horizon),
        seed=int(seed),
        final_energy_histogram=dict(sorted(histogram.items(), key=lambda kv: float(kv[0]))),
        ground_energy=ground,
        ground_hit_rate=hits,
        acceptance_stats={"attempts": attempts, "flips": flips, "acceptance_rate": flips / attempts},
        replica_states=np.array([r.states for r in results], dtype=np.int64) if keep_states else None,
        n_states=sys.n_states if keep_states else None,
    )
    log.info(f"Run finished: acceptance {flips / attempts:.4f}, ground hit rate {hits}")
    return summary


def _index(spins):
    return int(((spins < 0).astype(np.int64) << np.arange(spins.size)).sum())


def estimate_tv(summary, exact, resamples=16, seed=0):
    """
    TV distance between the run's visit frequencies and an exact distribution,
    with a standard error from resampling whole replicas.
    """
    counts = summary.empirical_distribution
    if counts is None:
        raise StateError("run kept no per-state histogram; rerun with N*M <= %d" % EMPIRICAL_MAX_SPINS)
    exact = np.asarray(exact, dtype=float)
    if exact.size != counts.size:
        raise ValueError(f"exact distribution has {exact.size} entries, the run has {counts.size} states")

    tv = 0.5 * float(np.abs(counts / counts.sum() - exact).sum())
    rng = np.random.Generator(np.random.Philox(key=seed))
    states = summary.replica_states
    boot = []
    for _ in range(resamples):
        picked = states[rng.integers(0, states.shape[0], size=states.shape[0])]
        c = np.bincount(picked.ravel(), minlength=counts.size)
        boot.append(0.5 * float(np.abs(c / c.sum() - exact).sum()))
    stderr = float(np.std(boot, ddof=1)) if resamples > 1 else 0.0
    return tv, stderr


class StateError(Exception):
    pass
