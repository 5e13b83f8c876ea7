"""
Exact heat-bath generator of the Trotterized master equation and its symmetric
counterpart.

With x = beta*H_{j,k} evaluated at the source configuration, a single flip
sigma -> sigma' happens at rate

    w = exp(x) / (exp(x) + exp(-x)) = expit(2x).

Conjugating -W with exp(beta*H_0 / 2) gives the symmetric H with off-diagonal
entries -sech(x)/2 and diagonal entries sum_i (1 + tanh x_i)/2. The
imaginary-time generator is G(t) = H(t) + (gamma'/2) B, where B is the diagonal
of Trotter bond sums sum_{j,k} s_j^(k) s_j^(k+1).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.linalg import eigh, eigvalsh
from scipy.sparse.linalg import eigsh
from scipy.special import expit

from sqalab.lattice import p_of_M_details
from sqalab.util import DEGENERACY_TOL, ConsistencyError

log = logging.getLogger(__name__)

SIMILARITY_TOL = 1e-9
SYMMETRY_TOL = 1e-10
FD_CHECK_TOL = 1e-5


def _sech(x):
    a = np.exp(-np.abs(x))
    return 2.0 * a / (1.0 + a * a)


def rate_table(sys, gamma):
    """Flip rates, shape (states, N*M): entry [a, i] is the rate of flipping spin i in a."""
    return expit(2.0 * sys.field_table(gamma))


def _scatter(sys, diag, offdiag):
    """Dense matrix with offdiag[a, i] at [flip(a, i), a] and diag on the diagonal."""
    n = sys.n_states
    mat = np.zeros((n, n))
    cols = np.broadcast_to(np.arange(n)[:, None], sys.flip_targets.shape)
    mat[sys.flip_targets, cols] = offdiag
    mat[np.arange(n), np.arange(n)] = diag
    return mat


def build_W(sys, gamma):
    rates = rate_table(sys, gamma)
    return _scatter(sys, -rates.sum(axis=1), rates)


def _H_parts(sys, gamma):
    x = sys.field_table(gamma)
    return 0.5 * (1.0 + np.tanh(x)).sum(axis=1), -0.5 * _sech(x)


def build_H(sys, gamma, check=True):
    """
    Symmetric H assembled from its closed form. With check=True it is compared
    elementwise with exp(beta*H_0/2) (-W) exp(-beta*H_0/2), evaluated in the log
    domain, and ConsistencyError is raised on disagreement.
    """
    diag, offdiag = _H_parts(sys, gamma)
    H = _scatter(sys, diag, offdiag)
    if check:
        deviation = similarity_deviation(sys, gamma, H)
        if deviation > SIMILARITY_TOL:
            raise ConsistencyError(f"H differs from the similarity transform of -W by {deviation:.3g}")
        log.debug("Similarity check at gamma=%s: max deviation %.3g", gamma, deviation)
    return H


def similarity_deviation(sys, gamma, H=None):
    """Max elementwise |H - exp(A/2)(-W)exp(-A/2)| with A = beta*H_0 shifted by its minimum."""
    if H is None:
        H = build_H(sys, gamma, check=False)
    W = build_W(sys, gamma)
    action = sys.action_table(gamma)
    action = action - action.min()

    similar = np.zeros_like(W)
    nonzero = W != 0
    rows, cols = np.nonzero(nonzero)
    w = W[rows, cols]
    similar[rows, cols] = -np.sign(w) * np.exp(np.log(np.abs(w)) + 0.5 * (action[rows] - action[cols]))
    return float(np.max(np.abs(H - similar)))


def build_generator(sys, schedule, t):
    """G(t) = H(t) - (1/2) d(beta*H_0)/dt = H(t) + (gamma'/2) B."""
    v = schedule.eval(t)
    G = build_H(sys, v.gamma, check=False)
    G[np.diag_indices_from(G)] += 0.5 * v.dgamma * sys.trotter_bond_sum
    return G


def build_generator_derivative(sys, schedule, t):
    """
    dG/dt from the chain rule through x = beta*H_{j,k}, with dx/dt = -gamma' T
    (T the Trotter field table), plus the diagonal (gamma''/2) B.
    """
    v = schedule.eval(t)
    x = sys.field_table(v.gamma)
    dx = -v.dgamma * sys.trotter_field
    s = _sech(x)
    diag = (0.5 * s * s * dx).sum(axis=1) + 0.5 * v.d2gamma * sys.trotter_bond_sum
    offdiag = 0.5 * np.tanh(x) * s * dx
    return _scatter(sys, diag, offdiag)


def apply_W(sys, gamma, P):
    """W @ P without building W."""
    rates = rate_table(sys, gamma)
    F = sys.flip_targets
    cols = np.arange(sys.n_spins)[None, :]
    inflow = (rates[F, cols] * P[F]).sum(axis=1)
    return inflow - rates.sum(axis=1) * P


def apply_generator(sys, value, phi):
    """G @ phi for a ScheduleValue without building G."""
    diag, offdiag = _H_parts(sys, value.gamma)
    diag = diag + 0.5 * value.dgamma * sys.trotter_bond_sum
    # offdiag[a, i] == offdiag[flip(a, i), i] since sech is even
    return diag * phi + (offdiag * phi[sys.flip_targets]).sum(axis=1)


def build_H_sparse(sys, gamma):
    diag, offdiag = _H_parts(sys, gamma)
    n = sys.n_states
    rows = np.concatenate([sys.flip_targets.ravel(), np.arange(n)])
    cols = np.concatenate([np.repeat(np.arange(n), sys.n_spins), np.arange(n)])
    return sparse.csr_matrix((np.concatenate([offdiag.ravel(), diag]), (rows, cols)), shape=(n, n))


class GapResult(NamedTuple):
    gap: float
    ground_energy: float
    degenerate: bool
    eigenvalues: np.ndarray | None = None


def spectral_gap(matrix, keep_spectrum=False):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("spectral_gap needs a square matrix")
    asymmetry = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    if asymmetry > SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asymmetry:.3g})")
    if matrix.shape[0] < 2:
        raise ValueError("spectral gap needs at least two levels")

    eigenvalues = eigvalsh(matrix)
    gap = float(eigenvalues[1] - eigenvalues[0])
    degenerate = gap <= DEGENERACY_TOL
    if degenerate:
        log.warning(f"Degenerate ground state: gap {gap:.3g}")
    return GapResult(gap, float(eigenvalues[0]), degenerate, eigenvalues if keep_spectrum else None)


def sparse_spectral_gap(sys, gamma):
    """Two lowest levels of H by Lanczos; for gap-only queries on large state spaces."""
    H = build_H_sparse(sys, gamma)
    eigenvalues = np.sort(eigsh(H, k=2, which="SA", return_eigenvectors=False, tol=1e-12))
    gap = float(eigenvalues[1] - eigenvalues[0])
    return GapResult(gap, float(eigenvalues[0]), gap <= DEGENERACY_TOL, None)


def spectral_norm(matrix):
    eigenvalues = eigvalsh(matrix)
    return float(max(abs(eigenvalues[0]), abs(eigenvalues[-1])))


def norm_bound(sys, value, b):
    """M N (3b/2 |gamma'| + |gamma''|/2)."""
    return sys.trotter_slices * sys.n_sites * (1.5 * b * abs(value.dgamma) + 0.5 * abs(value.d2gamma))


@dataclass
class SpectralReport:
    t: float
    Gamma: float
    gamma: float
    dgamma: float
    d2gamma: float
    gap: float
    generator_gap: float
    ground_energy: float
    norm_dH: float
    bound_rhs_norm: float
    adiabatic_ratio: float
    q: float
    b: int
    degenerate: bool = False
    restoring_b: int | None = None
    fd_relative_error: float | None = None
    spectrum: np.ndarray | None = field(default=None, repr=False)

    @property
    def bound_margin(self):
        return self.bound_rhs_norm - self.norm_dH

    @property
    def bound_ok(self):
        return self.norm_dH <= self.bound_rhs_norm * (1 + 1e-12) + 1e-14

    def row(self):
        return [
            self.t,
            self.Gamma,
            self.gamma,
            self.dgamma,
            self.d2gamma,
            self.gap,
            self.norm_dH,
            self.bound_rhs_norm,
            self.adiabatic_ratio,
            self.q,
            self.bound_margin,
        ]


def _fd_generator_derivative(sys, schedule, t):
    h = 1e-5 * (1.0 + t)
    if t >= h:
        return (build_generator(sys, schedule, t + h) - build_generator(sys, schedule, t - h)) / (2 * h)
    # one-sided second order at the start of the schedule
    return (
        -3 * build_generator(sys, schedule, t)
        + 4 * build_generator(sys, schedule, t + h)
        - build_generator(sys, schedule, t + 2 * h)
    ) / (2 * h)


def adiabatic_ratio(sys, schedule, t, b=None, fd_check=False, keep_spectrum=False):
    """
    ||dG/dt|| / Delta^2 at time t, with the norm bound and the gap-bound exponent
    q = log Delta + 2N gamma. Delta is the gap of H(t); the gap of G(t), which
    differs by the (gamma'/2) B shift, is reported as generator_gap.
    """
    if b is None:
        b = sys.coordination_number
    v = schedule.eval(t)

    H = build_H(sys, v.gamma, check=False)
    h_gap = spectral_gap(H, keep_spectrum=keep_spectrum)
    G = H.copy()
    G[np.diag_indices_from(G)] += 0.5 * v.dgamma * sys.trotter_bond_sum
    g_gap = spectral_gap(G) if v.dgamma != 0 else h_gap

    dG = build_generator_derivative(sys, schedule, t)
    norm = spectral_norm(dG)
    bound = norm_bound(sys, v, b)

    if h_gap.degenerate:
        ratio = math.inf
    else:
        ratio = norm / h_gap.gap**2
    q = math.log(h_gap.gap) + 2 * sys.n_sites * v.gamma if h_gap.gap > 0 else -math.inf

    report = SpectralReport(
        t=float(t),
        Gamma=v.Gamma,
        gamma=v.gamma,
        dgamma=v.dgamma,
        d2gamma=v.d2gamma,
        gap=h_gap.gap,
        generator_gap=g_gap.gap,
        ground_energy=g_gap.ground_energy,
        norm_dH=norm,
        bound_rhs_norm=bound,
        adiabatic_ratio=ratio,
        q=q,
        b=int(b),
        degenerate=h_gap.degenerate,
        spectrum=h_gap.eigenvalues,
    )

    if not report.bound_ok:
        report.restoring_b = restoring_b(sys, v, norm)
        log.warning(
            f"Norm bound violated at t={t}: ||dG/dt|| = {norm:.6g} > {bound:.6g} with b = {b}; "
            f"b = {report.restoring_b} restores it"
        )

    if fd_check:
        fd = _fd_generator_derivative(sys, schedule, t)
        scale = norm if norm > 0 else 1.0
        report.fd_relative_error = spectral_norm(fd - dG) / scale
        if report.fd_relative_error > FD_CHECK_TOL:
            log.warning(f"Finite-difference check of dG/dt at t={t}: relative error {report.fd_relative_error:.3g}")
    return report


def restoring_b(sys, value, norm):
    """Smallest integer b with M N (3b/2 |gamma'| + |gamma''|/2) >= norm; None if no b can."""
    MN = sys.trotter_slices * sys.n_sites
    if value.dgamma == 0:
        return None
    needed = (norm / MN - 0.5 * abs(value.d2gamma)) / (1.5 * abs(value.dgamma))
    return max(1, math.ceil(needed))


def adiabatic_ratio_upper_bound(report, sys, a, c):
    """
    Closed-form upper bound 2^(2N) M (3b|gamma'| + |gamma''|) / (2 a^2)
    * exp(2N (beta p(M) + 2 gamma + c)) on the adiabatic ratio, for user-chosen
    a and c in the gap prefactor a sqrt(N) exp(-c N).
    """
    N, M, beta = sys.n_sites, sys.trotter_slices, sys.inverse_temperature
    p, _ = p_of_M_details(sys)
    prefactor = 2 ** (2 * N) * M * (3 * report.b * abs(report.dgamma) + abs(report.d2gamma)) / (2 * a * a)
    exponent = 2 * N * (beta * p + 2 * report.gamma + c)
    if prefactor == 0:
        return 0.0
    return math.exp(math.log(prefactor) + exponent) if math.log(prefactor) + exponent < 700 else math.inf


@dataclass
class GapBoundSeries:
    times: np.ndarray
    q: np.ndarray
    gap: np.ndarray
    gamma: np.ndarray
    # log(sqrt(N)/2^N) - N beta p(M); the unknown log a - N c completes the floor
    known_floor: float
    p_of_M: float
    p_of_M_method: str

    def infimum(self, until=None):
        mask = np.ones_like(self.times, dtype=bool) if until is None else self.times <= until
        return float(np.min(self.q[mask]))


def verify_gap_bound(sys, schedule, t_grid, threads=1):
    """q(t) = log Delta(t) + 2N gamma(t) along the schedule."""
    times = np.asarray(t_grid, dtype=float)
    N = sys.n_sites

    def one(t):
        v = schedule.eval(t)
        return v.gamma, spectral_gap(build_H(sys, v.gamma, check=False)).gap

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, times))
    else:
        results = [one(t) for t in times]

    gamma = np.array([r[0] for r in results])
    gap = np.array([r[1] for r in results])
    with np.errstate(divide="ignore"):
        q = np.log(gap) + 2 * N * gamma

    p, method = p_of_M_details(sys)
    floor = 0.5 * math.log(N) - N * math.log(2) - N * sys.inverse_temperature * p
    log.info(f"Gap bound series on {times.size} points: min q = {q.min():.6g}, known floor {floor:.6g}")
    return GapBoundSeries(times, q, gap, gamma, floor, p, method)


def matrix_element_vs_norm(matrix, trials, rng=None, pairs=None):
    """
    Largest |<w|A|v>| / ||A|| over random unit vectors v, w (plus any explicit
    pairs). Raises ConsistencyError if a matrix element exceeds the norm.
    """
    rng = np.random.default_rng() if rng is None else rng
    A = np.asarray(matrix, dtype=float)
    norm = float(np.linalg.norm(A, 2))
    worst = 0.0

    samples = []
    for _ in range(trials):
        v, w = rng.normal(size=A.shape[1]), rng.normal(size=A.shape[0])
        samples.append((v / np.linalg.norm(v), w / np.linalg.norm(w)))
    samples.extend(pairs or [])

    for v, w in samples:
        element = abs(float(w @ A @ v))
        if element > norm + 1e-10:
            raise ConsistencyError(f"matrix element {element} exceeds operator norm {norm}")
        if norm > 0:
            worst = max(worst, element / norm)
    return worst


def top_singular_pair(matrix):
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    return vt[0], u[:, 0]


def spectral_sweep(sys, schedule, times, threads=1, b=None, fd_check=False):
    """adiabatic_ratio at each time; eigensolves run on a thread pool."""
    times = [float(t) for t in times]
    log.info(f"Spectral sweep over {len(times)} times on {sys.n_states} states with {threads} thread(s)")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda t: adiabatic_ratio(sys, schedule, t, b=b, fd_check=fd_check), times))
    return [adiabatic_ratio(sys, schedule, t, b=b, fd_check=fd_check) for t in times]


@dataclass
class GeneratorPair:
    W: np.ndarray
    H: np.ndarray
    t: float
    gamma: float
    metadata: dict

    @classmethod
    def build(cls, sys, schedule, t):
        v = schedule.eval(t)
        return cls(
            build_W(sys, v.gamma),
            build_H(sys, v.gamma),
            float(t),
            v.gamma,
            {
                "n_sites": sys.n_sites,
                "trotter_slices": sys.trotter_slices,
                "beta": sys.inverse_temperature,
                "alpha": sys.bath_strength,
                "b": sys.coordination_number,
            },
        )

    def ground_state(self):
        """Lowest eigenpair of H with the eigenvector made positive."""
        eigenvalues, vectors = eigh(self.H, subset_by_index=[0, 0])
        vec = vectors[:, 0]
        return float(eigenvalues[0]), vec * np.sign(vec[np.argmax(np.abs(vec))])

    def check(self):
        """Raises ConsistencyError if a structural invariant fails."""
        off = self.W - np.diag(np.diag(self.W))
        if np.any(off < 0):
            raise ConsistencyError("negative off-diagonal rate in W")
        if np.max(np.abs(self.W.sum(axis=0))) > 1e-12:
            raise ConsistencyError("columns of W do not sum to zero")
        if np.max(np.abs(self.H - self.H.T)) > 1e-12:
            raise ConsistencyError("H is not symmetric")
        return True


class DegeneracyError(Exception):
    pass
