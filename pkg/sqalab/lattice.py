"""
Spatial Ising couplings and their Suzuki-Trotter lattice.

Spins live on an N x M lattice (site j, Trotter slice k), flattened to the index
k * N + j. All indices are 0-based here; problem files are 1-based. The Trotter
direction is periodic: slice M is slice 0.

Sign convention: local_field returns beta*H_{j,k} such that flipping spin (j, k)
changes the dimensionless action by -2 * beta*H_{j,k}.
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from sqalab.util import DEFAULT_DENSE_CAP, ConfigError, ResourceCapError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingGraph:
    n_sites: int
    edges: tuple = ()

    def __post_init__(self):
        if not isinstance(self.n_sites, (int, np.integer)) or self.n_sites < 1:
            raise ValueError("n_sites must be a positive integer")

        normalised = []
        seen = set()
        for edge in self.edges:
            try:
                j, jp, coupling = edge
            except (TypeError, ValueError):
                raise ValueError(f"edge must be (j, j', J), got {edge!r}")
            j, jp = int(j), int(jp)
            if j == jp:
                raise ValueError(f"self-edge on site {j} is not allowed")
            if not (0 <= j < self.n_sites and 0 <= jp < self.n_sites):
                raise ValueError(f"edge ({j}, {jp}) is outside 0..{self.n_sites - 1}")
            if j > jp:
                j, jp = jp, j
            if (j, jp) in seen:
                raise ValueError(f"duplicate edge ({j}, {jp})")
            seen.add((j, jp))
            normalised.append((j, jp, float(coupling)))

        object.__setattr__(self, "n_sites", int(self.n_sites))
        object.__setattr__(self, "edges", tuple(sorted(normalised)))

    @cached_property
    def neighbours(self):
        """neighbours[j] is a tuple of (j', J_jj') pairs."""
        adjacency = [[] for _ in range(self.n_sites)]
        for j, jp, coupling in self.edges:
            adjacency[j].append((jp, coupling))
            adjacency[jp].append((j, coupling))
        return tuple(tuple(a) for a in adjacency)

    @cached_property
    def coupling_matrix(self):
        J = np.zeros((self.n_sites, self.n_sites))
        for j, jp, coupling in self.edges:
            J[j, jp] = coupling
            J[jp, j] = coupling
        return J

    @property
    def degrees(self):
        return [len(n) for n in self.neighbours]

    @property
    def max_degree(self):
        return max(self.degrees)

    def ground_energy(self):
        """Exhaustive minimum of the classical energy; None above 20 sites."""
        if self.n_sites > 20:
            return None
        bits = np.arange(2**self.n_sites)[:, None] >> np.arange(self.n_sites) & 1
        slices = 1 - 2 * bits
        energies = -0.5 * np.einsum("si,ij,sj->s", slices, self.coupling_matrix, slices)
        return float(energies.min())

    @classmethod
    def ring(cls, n_sites, coupling=1.0):
        edges = [(j, (j + 1) % n_sites, coupling) for j in range(n_sites)]
        if n_sites == 2:
            edges = edges[:1]
        return cls(n_sites, tuple(edges))

    @classmethod
    def random(cls, n_sites, rng, density=1.0):
        edges = []
        for j, jp in itertools.combinations(range(n_sites), 2):
            if rng.random() < density:
                edges.append((j, jp, float(rng.normal())))
        return cls(n_sites, tuple(edges))


@dataclass(frozen=True)
class TrotterSystem:
    graph: CouplingGraph
    trotter_slices: int
    inverse_temperature: float
    bath_strength: float = 0.0
    dense_cap: int = DEFAULT_DENSE_CAP

    def __post_init__(self):
        if not isinstance(self.trotter_slices, (int, np.integer)) or self.trotter_slices < 2:
            raise ValueError("trotter_slices must be an integer >= 2")
        if not self.inverse_temperature > 0:
            raise ValueError("inverse_temperature must be positive")
        if not self.bath_strength >= 0:
            raise ValueError("bath_strength must be non-negative")
        if self.n_spins > self.dense_cap:
            raise ResourceCapError(
                f"N*M = {self.n_spins} exceeds the dense cap of {self.dense_cap} spins; "
                "raise dense_cap in the problem file to allow it"
            )

    @property
    def n_sites(self):
        return self.graph.n_sites

    @property
    def n_spins(self):
        return self.graph.n_sites * self.trotter_slices

    @property
    def n_states(self):
        return 2**self.n_spins

    @property
    def beta(self):
        return self.inverse_temperature

    @property
    def is_open(self):
        return self.bath_strength > 0

    def flat_index(self, j, k):
        if not (0 <= j < self.n_sites and 0 <= k < self.trotter_slices):
            raise ValueError(f"site ({j}, {k}) is outside the {self.n_sites}x{self.trotter_slices} lattice")
        return k * self.n_sites + j

    @cached_property
    def bath_row(self):
        """
        bath_row[d] is the magnitude (alpha/2)(pi/M)^2 / sin^2(pi d / M) of the
        bath coupling between slices d apart; bath_row[0] is 0.
        """
        M = self.trotter_slices
        row = np.zeros(M)
        for d in range(1, M):
            row[d] = -bath_coupling(0, d, M, self.bath_strength)
        return row

    @property
    def coordination_number(self):
        """b: spatial degree + 2 Trotter neighbours (+ M-1 bath partners when open)."""
        b = self.graph.max_degree + 2
        if self.is_open:
            b += self.trotter_slices - 1
        return b

    def to_config(self):
        return {
            "n_sites": self.n_sites,
            "edges": [[j + 1, jp + 1, c] for j, jp, c in self.graph.edges],
            "trotter_slices": self.trotter_slices,
            "beta": self.inverse_temperature,
            "alpha": self.bath_strength,
            "dense_cap": self.dense_cap,
        }

    @classmethod
    def from_config(cls, config):
        validate_problem_config(json.dumps(config))
        edges = tuple((j - 1, jp - 1, c) for j, jp, c in config.get("edges", []))
        graph = CouplingGraph(config["n_sites"], edges)
        return cls(
            graph,
            config["trotter_slices"],
            float(config["beta"]),
            float(config.get("alpha", 0.0)),
            int(config.get("dense_cap", DEFAULT_DENSE_CAP)),
        )

    # Dense tables over all 2^(N*M) configurations. Configuration index bit i set
    # means spin i is -1, so index 0 is the all-up state.

    @cached_property
    def spin_table(self):
        n = self.n_spins
        bits = (np.arange(self.n_states)[:, None] >> np.arange(n)) & 1
        return (1 - 2 * bits).astype(np.int8)

    @cached_property
    def flip_targets(self):
        return np.arange(self.n_states)[:, None] ^ (1 << np.arange(self.n_spins))[None, :]

    @cached_property
    def _lattice_spins(self):
        # (states, M, N) view of the spin table
        return self.spin_table.reshape(self.n_states, self.trotter_slices, self.n_sites).astype(float)

    @cached_property
    def static_field(self):
        """The gamma-independent part of -beta*H_{j,k}, shape (states, N*M)."""
        s = self._lattice_spins
        M = self.trotter_slices
        spatial = (self.beta / M) * s * np.einsum("skj,ij->ski", s, self.graph.coupling_matrix)
        bath = s * np.einsum("skj,kl->slj", s, self._bath_matrix)
        return (spatial + bath).reshape(self.n_states, self.n_spins)

    @cached_property
    def trotter_field(self):
        """sigma_j^(k) (sigma_j^(k+1) + sigma_j^(k-1)), shape (states, N*M)."""
        s = self._lattice_spins
        both = np.roll(s, -1, axis=1) + np.roll(s, 1, axis=1)
        return (s * both).reshape(self.n_states, self.n_spins)

    @cached_property
    def trotter_bond_sum(self):
        """sum_{j,k} sigma_j^(k) sigma_j^(k+1) per configuration."""
        s = self._lattice_spins
        return (s * np.roll(s, -1, axis=1)).sum(axis=(1, 2))

    @cached_property
    def static_action(self):
        """The gamma-independent part of beta*H_0 per configuration."""
        s = self._lattice_spins
        M = self.trotter_slices
        spatial = -0.5 * (self.beta / M) * np.einsum("skj,ji,ski->s", s, self.graph.coupling_matrix, s)
        bath = -0.5 * np.einsum("skj,kl,slj->s", s, self._bath_matrix, s)
        return spatial + bath

    @cached_property
    def _bath_matrix(self):
        M = self.trotter_slices
        k = np.arange(M)
        return self.bath_row[np.abs(k[:, None] - k[None, :])]

    def action_table(self, gamma):
        """beta*H_0 for every configuration at Trotter coupling gamma."""
        return self.static_action - gamma * self.trotter_bond_sum

    def field_table(self, gamma):
        """beta*H_{j,k} for every configuration and spin, shape (states, N*M)."""
        return -(self.static_field + gamma * self.trotter_field)


class SpinConfiguration:
    """
    A mutable N x M spin configuration, bit-packed into an integer.
    """

    def __init__(self, n_sites, trotter_slices, bits=0):
        self.n_sites = n_sites
        self.trotter_slices = trotter_slices
        self.bits = int(bits)

    @property
    def n_spins(self):
        return self.n_sites * self.trotter_slices

    @property
    def index(self):
        return self.bits

    @classmethod
    def from_spins(cls, spins, n_sites, trotter_slices):
        """spins is flat (N*M,) in k*N + j order, or shaped (M, N)."""
        spins = np.asarray(spins).reshape(-1)
        if spins.size != n_sites * trotter_slices:
            raise ValueError(f"expected {n_sites * trotter_slices} spins, got {spins.size}")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be +1 or -1")
        bits = 0
        for i, s in enumerate(spins):
            if s < 0:
                bits |= 1 << i
        return cls(n_sites, trotter_slices, bits)

    @classmethod
    def all_up(cls, n_sites, trotter_slices):
        return cls(n_sites, trotter_slices, 0)

    @property
    def spins(self):
        i = np.arange(self.n_spins)
        return (1 - 2 * ((self.bits >> i) & 1)).astype(np.int8) if self.n_spins <= 62 else np.array(
            [1 - 2 * ((self.bits >> int(b)) & 1) for b in i], dtype=np.int8
        )

    def _flat(self, j, k):
        if not (0 <= j < self.n_sites):
            raise ValueError(f"site {j} outside 0..{self.n_sites - 1}")
        return (k % self.trotter_slices) * self.n_sites + j

    def spin(self, j, k):
        """Spin at site j, slice k; k is taken modulo M."""
        return 1 - 2 * ((self.bits >> self._flat(j, k)) & 1)

    def flip(self, j, k):
        self.bits ^= 1 << self._flat(j, k)
        return self

    def slice(self, k):
        return self.spins.reshape(self.trotter_slices, self.n_sites)[k % self.trotter_slices]

    def copy(self):
        return SpinConfiguration(self.n_sites, self.trotter_slices, self.bits)

    def __eq__(self, other):
        return (
            isinstance(other, SpinConfiguration)
            and self.bits == other.bits
            and self.n_sites == other.n_sites
            and self.trotter_slices == other.trotter_slices
        )

    def __repr__(self):
        return f"SpinConfiguration(N={self.n_sites}, M={self.trotter_slices}, bits={self.bits:#x})"


def classical_energy(graph, slice):
    """-sum_<jj'> J_jj' s_j s_j' for one slice of N spins."""
    slice = np.asarray(slice, dtype=float)
    if slice.shape != (graph.n_sites,):
        raise ValueError(f"slice must have {graph.n_sites} spins, got shape {slice.shape}")
    return -sum(coupling * slice[j] * slice[jp] for j, jp, coupling in graph.edges)


def bath_coupling(k, kp, M, alpha):
    """
    Coefficient -(alpha/2)(pi/M)^2 sin^-2(pi|k-k'|/M) multiplying s^(k) s^(k').
    """
    if k == kp:
        raise ValueError("bath coupling is undefined for k == k' (divergent kernel)")
    if not (0 <= k < M and 0 <= kp < M):
        raise ValueError(f"slices ({k}, {kp}) outside 0..{M - 1}")
    if alpha == 0:
        return 0.0
    return -0.5 * alpha * (math.pi / M) ** 2 / math.sin(math.pi * abs(k - kp) / M) ** 2


def trotter_action(sys, config, gamma):
    """Dimensionless action beta*H_0 of a configuration at Trotter coupling gamma."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    N, M = sys.n_sites, sys.trotter_slices
    s = config.spins.reshape(M, N).astype(float)
    J = sys.graph.coupling_matrix

    spatial = 0.5 * (sys.beta / M) * np.einsum("kj,ji,ki->", s, J, s)
    trotter = gamma * np.sum(s * np.roll(s, -1, axis=0))
    action = -(spatial + trotter)

    if sys.is_open:
        for k in range(M):
            for kp in range(k):
                action += bath_coupling(k, kp, M, sys.bath_strength) * np.dot(s[k], s[kp])
    return float(action)


def local_field(sys, config, j, k, gamma):
    """beta*H_{j,k}: flipping spin (j, k) changes beta*H_0 by -2 * local_field."""
    N, M = sys.n_sites, sys.trotter_slices
    if not (0 <= j < N and 0 <= k < M):
        raise ValueError(f"site ({j}, {k}) is outside the {N}x{M} lattice")

    s = config.spin(j, k)
    spatial = sum(coupling * config.spin(jp, k) for jp, coupling in sys.graph.neighbours[j])
    neg = (sys.beta / M) * s * spatial
    neg += gamma * s * (config.spin(j, k + 1) + config.spin(j, k - 1))
    if sys.is_open:
        neg += s * sum(sys.bath_row[abs(k - kp)] * config.spin(j, kp) for kp in range(M) if kp != k)
    return -float(neg)


def p_of_M_details(sys):
    """
    Returns (p(M), method).

    method is "enumeration" when N*M is within the default dense cap: |beta H_{j,k}|
    at gamma = 0 is then maximised over every configuration in the spin table.
    Larger lattices get "analytic-bound", the sum of coupling magnitudes.
    """
    N, M = sys.n_sites, sys.trotter_slices
    analytic = max(sum(abs(c) for _, c in sys.graph.neighbours[j]) for j in range(N)) / M
    if sys.is_open:
        analytic += (1.0 / sys.beta) * sys.bath_row.sum()

    if sys.n_spins > DEFAULT_DENSE_CAP:
        log.info("p(M): N*M = %d is too large to enumerate, using the analytic bound", sys.n_spins)
        return analytic, "analytic-bound"

    return float(np.max(np.abs(sys.static_field))) / sys.beta, "enumeration"


def p_of_M(sys):
    return p_of_M_details(sys)[0]


def validate_problem_config(config_str):
    """
    Validate a problem file (JSON). Returns the string, raises ValueError naming
    the offending key.
    """
    if not config_str:
        raise ConfigError("problem config is empty")

    try:
        config_obj = json.loads(config_str)
    except json.JSONDecodeError as e:
        raise ConfigError(f"problem config is not valid JSON: {e}")

    for key in ("n_sites", "trotter_slices", "beta"):
        if key not in config_obj:
            raise ConfigError(f"problem config is missing '{key}'")

    if not isinstance(config_obj["n_sites"], int) or config_obj["n_sites"] < 1:
        raise ConfigError("n_sites must be a positive integer")
    if not isinstance(config_obj["trotter_slices"], int) or config_obj["trotter_slices"] < 2:
        raise ConfigError("trotter_slices must be an integer >= 2")
    if not isinstance(config_obj["beta"], (int, float)) or config_obj["beta"] <= 0:
        raise ConfigError("beta must be a positive number")
    if "alpha" in config_obj:
        if not isinstance(config_obj["alpha"], (int, float)) or config_obj["alpha"] < 0:
            raise ConfigError("alpha must be a non-negative number")
    if "dense_cap" in config_obj:
        if not isinstance(config_obj["dense_cap"], int) or config_obj["dense_cap"] < 1:
            raise ConfigError("dense_cap must be a positive integer")

    edges = config_obj.get("edges", [])
    if not isinstance(edges, list):
        raise ConfigError("edges must be a list of [j, j', J]")
    for edge in edges:
        if not isinstance(edge, list) or len(edge) != 3:
            raise ConfigError(f"edges must be a list of [j, j', J], got {edge!r}")
        j, jp, coupling = edge
        if not isinstance(j, int) or not isinstance(jp, int):
            raise ConfigError("edge site indices must be integers")
        if not (1 <= j <= config_obj["n_sites"] and 1 <= jp <= config_obj["n_sites"]):
            raise ConfigError(f"edge ({j}, {jp}) is outside 1..{config_obj['n_sites']}")
        if not isinstance(coupling, (int, float)):
            raise ConfigError("edge couplings must be numbers")

    return config_str


def load_problem(path):
    with open(path, mode="r", encoding="utf-8") as fh:
        config_str = fh.read()
    validate_problem_config(config_str)
    return TrotterSystem.from_config(json.loads(config_str))
