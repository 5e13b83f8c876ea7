"""
Exact time evolution on the full 2^(N*M) state space.

integrate_master solves dP/dt = W(t) P. integrate_imaginary solves the
imaginary-time equation -d(phi)/dt = G(t) phi, whose solution is the ray
exp(beta*H_0/2) P(t) of the master equation. Both use scipy's adaptive RK45 and
record the same observables on a log-spaced grid, so their traces can be
compared point by point.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import pairwise
from typing import NamedTuple

import numpy as np
from scipy.integrate import RK45
from scipy.linalg import eigh

from sqalab.generator import (
    DegeneracyError,
    apply_generator,
    apply_W,
    build_generator,
    build_generator_derivative,
)
from sqalab.util import (
    CSV_SCHEMAS,
    DEGENERACY_TOL,
    ResourceCapError,
    check_probability_vector,
    write_csv,
    write_json,
)

log = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-12
DEFAULT_OBSERVATIONS = 256
# Largest state space on which traces eigensolve G(t) at every observation.
SPECTRUM_STATES = 256
# excitation_coefficients builds G(t) densely
EXCITATION_MAX_SPINS = 12
CORRESPONDENCE_TOL = 1e-6
NORM_DRIFT_TOL = 1e-9


def boltzmann(sys, gamma):
    """exp(-beta*H_0) / Z over all configurations, computed in the log domain."""
    action = sys.action_table(gamma)
    weights = np.exp(-(action - action.min()))
    return weights / weights.sum()


def tv_distance(P, Q):
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"Cannot compare distributions of lengths {P.size} and {Q.size}")
    return float(min(1.0, max(0.0, 0.5 * np.abs(P - Q).sum())))


def observation_grid(horizon, n=DEFAULT_OBSERVATIONS):
    """t = 0 followed by n - 1 log-spaced points ending at the horizon."""
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if n < 2:
        raise ValueError("need at least two observation points")
    start = min(1e-2, horizon / n)
    return np.concatenate([[0.0], np.geomspace(start, horizon, n - 1)])


def _log_weights(values):
    with np.errstate(divide="ignore"):
        return np.log(np.clip(values, 0.0, None))


def _unit(log_v):
    v = np.exp(log_v - log_v.max())
    return v / np.linalg.norm(v)


def ray_from_distribution(sys, gamma, P):
    """Unit vector along exp(beta*H_0/2) P."""
    action = sys.action_table(gamma)
    return _unit(0.5 * (action - action.min()) + _log_weights(P))


def distribution_from_ray(sys, gamma, phi):
    """exp(-beta*H_0/2) phi normalised to sum one, or None if phi changes sign."""
    if np.any(phi < -1e-12 * np.abs(phi).max()):
        return None
    action = sys.action_table(gamma)
    log_p = -0.5 * (action - action.min()) + _log_weights(phi)
    p = np.exp(log_p - log_p.max())
    return p / p.sum()


def equilibrium_ray(sys, gamma):
    """Ground state of H: the unit vector along exp(-beta*H_0/2)."""
    action = sys.action_table(gamma)
    return _unit(-0.5 * (action - action.min()))


@dataclass
class EvolutionTrace:
    kind: str
    times: np.ndarray
    tv_to_instantaneous_boltzmann: np.ndarray
    tv_to_final_boltzmann: np.ndarray
    overlap_with_ground: np.ndarray
    # shape (len(times), k_max); NaN where the spectrum was not computed
    excitation_coeffs: np.ndarray
    gap: np.ndarray
    excitation_residual: np.ndarray
    final_state: np.ndarray
    max_norm_drift: float = 0.0
    correspondence_deviation: float | None = None
    rays: np.ndarray | None = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def k_max(self):
        return self.excitation_coeffs.shape[1]

    def columns(self):
        return (
            CSV_SCHEMAS["trace"]
            + [f"c{j}" for j in range(1, self.k_max + 1)]
            + ["gap", "excited"]
        )

    def rows(self):
        for i, t in enumerate(self.times):
            yield [
                t,
                self.tv_to_instantaneous_boltzmann[i],
                self.tv_to_final_boltzmann[i],
                self.overlap_with_ground[i],
                *self.excitation_coeffs[i],
                self.gap[i],
                self.excitation_residual[i],
            ]

    def write(self, directory, stem=None):
        stem = stem or self.kind
        write_csv(directory / f"{stem}.csv", "trace", self.columns(), self.rows())
        write_json(
            directory / f"{stem}.json",
            {
                **self.metadata,
                "kind": self.kind,
                "points": int(self.times.size),
                "max_norm_drift": self.max_norm_drift,
                "correspondence_deviation": self.correspondence_deviation,
            },
        )


class _Observer:
    """Evaluates the trace observables at each grid point."""

    def __init__(self, sys, schedule, horizon, k_max, spectrum_states, keep_states):
        self.sys = sys
        self.schedule = schedule
        self.k_max = k_max
        self.with_spectrum = sys.n_states <= spectrum_states
        self.keep_states = keep_states
        self.final_boltzmann = boltzmann(sys, schedule.gamma(horizon))
        self.records = []
        self.rays = []

    def __call__(self, t, P, ray):
        sys, gamma = self.sys, self.schedule.gamma(t)
        if P is None:
            tv_inst = tv_final = math.nan
        else:
            tv_inst = tv_distance(P, boltzmann(sys, gamma))
            tv_final = tv_distance(P, self.final_boltzmann)
        overlap = abs(float(equilibrium_ray(sys, gamma) @ ray))

        coeffs = np.full(self.k_max, math.nan)
        gap = residual = math.nan
        if self.with_spectrum:
            eigenvalues, vectors = eigh(build_generator(sys, self.schedule, t))
            gap = float(eigenvalues[1] - eigenvalues[0])
            projections = vectors.T @ ray
            coeffs[: min(self.k_max, sys.n_states - 1)] = np.abs(projections[1 : self.k_max + 1])
            residual = float(np.linalg.norm(ray - projections[0] * vectors[:, 0]))

        self.records.append((t, tv_inst, tv_final, overlap, coeffs, gap, residual))
        if self.keep_states:
            self.rays.append(ray.copy())

    def trace(self, kind, final_state, drift, metadata):
        columns = list(zip(*self.records))
        return EvolutionTrace(
            kind=kind,
            times=np.array(columns[0]),
            tv_to_instantaneous_boltzmann=np.array(columns[1]),
            tv_to_final_boltzmann=np.array(columns[2]),
            overlap_with_ground=np.array(columns[3]),
            excitation_coeffs=np.vstack(columns[4]) if self.k_max else np.zeros((len(self.records), 0)),
            gap=np.array(columns[5]),
            excitation_residual=np.array(columns[6]),
            final_state=final_state,
            max_norm_drift=drift,
            rays=np.array(self.rays) if self.keep_states else None,
            metadata=metadata,
        )


def _integrate(fun, y0, grid, rtol, atol, renormalise, observe):
    """
    Step RK45 across each observation interval, renormalising after every
    accepted step. The step size carries over between intervals.
    """
    y = y0
    h = None
    observe(grid[0], y)
    for t0, t1 in pairwise(grid):
        first_step = min(h, t1 - t0) if h else None
        solver = RK45(fun, t0, y, t1, rtol=rtol, atol=atol, first_step=first_step)
        while solver.status == "running":
            message = solver.step()
            if solver.status == "failed":
                raise StiffIntegrationError(f"Integration stopped at t={solver.t:.6g}: {message}")
            solver.y = renormalise(solver.y)
            solver.f = fun(solver.t, solver.y)
            if solver.step_size:
                h = solver.step_size
        y = solver.y
        observe(t1, y)
    return y


def _metadata(sys, schedule, horizon, rtol, atol):
    return {
        "problem": sys.to_config(),
        "schedule": schedule.to_config(),
        "horizon": float(horizon),
        "rtol": rtol,
        "atol": atol,
    }


def integrate_master(
    sys,
    schedule,
    P0=None,
    horizon=1.0,
    rtol=DEFAULT_RTOL,
    atol=DEFAULT_ATOL,
    n_observations=DEFAULT_OBSERVATIONS,
    k_max=2,
    spectrum_states=SPECTRUM_STATES,
    keep_states=False,
):
    """
    dP/dt = W(t) P from P0 (uniform by default) over [0, horizon].

    W(t) is applied matrix-free at every Runge-Kutta stage. After each accepted
    step negative entries are clipped and P is rescaled to sum one; the largest
    pre-renormalisation drift of the sum is kept as max_norm_drift.
    """
    if P0 is None:
        P0 = np.full(sys.n_states, 1.0 / sys.n_states)
    P0 = check_probability_vector(P0)
    if P0.size != sys.n_states:
        raise ValueError(f"P0 has {P0.size} entries, the system has {sys.n_states} states")
    grid = observation_grid(horizon, n_observations)
    log.info(
        f"Master equation on {sys.n_states} states to t={horizon} under {schedule.name} "
        f"(rtol={rtol}, atol={atol})"
    )

    drift = 0.0

    def fun(t, P):
        return apply_W(sys, schedule.gamma(t), P)

    def renormalise(P):
        nonlocal drift
        total = P.sum()
        drift = max(drift, abs(total - 1.0))
        if P.min() < -1e-10:
            log.warning("Probability %.3g below zero; clipping", P.min())
        P = np.clip(P, 0.0, None)
        return P / P.sum()

    observer = _Observer(sys, schedule, horizon, k_max, spectrum_states, keep_states)

    def observe(t, P):
        check_probability_vector(P)
        observer(t, P, ray_from_distribution(sys, schedule.gamma(t), P))

    P = _integrate(fun, P0.copy(), grid, rtol, atol, renormalise, observe)
    if drift > NORM_DRIFT_TOL:
        log.warning(f"Probability drifted by {drift:.3g} within a step")
    return observer.trace("master", P, drift, _metadata(sys, schedule, horizon, rtol, atol))


def integrate_imaginary(
    sys,
    schedule,
    phi0=None,
    horizon=1.0,
    rtol=DEFAULT_RTOL,
    atol=DEFAULT_ATOL,
    n_observations=DEFAULT_OBSERVATIONS,
    k_max=2,
    spectrum_states=SPECTRUM_STATES,
    reference=None,
    verify=True,
):
    """
    -d(phi)/dt = G(t) phi from phi0, keeping only the ray: phi is rescaled to
    unit norm after every accepted step.

    With verify=True the ray is compared at every observation with
    exp(beta*H_0/2) P(t) from integrate_master (run here unless a reference
    trace with stored rays is passed); the largest deviation is stored as
    correspondence_deviation. phi0 defaults to the ray of the uniform
    distribution. A phi0 with mixed signs has no distribution counterpart and
    skips the comparison.
    """
    if phi0 is None:
        phi0 = ray_from_distribution(sys, schedule.gamma(0.0), np.full(sys.n_states, 1.0 / sys.n_states))
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (sys.n_states,):
        raise ValueError(f"phi0 must have {sys.n_states} entries")
    norm = np.linalg.norm(phi0)
    if norm == 0:
        raise ValueError("phi0 must be nonzero")
    phi0 = phi0 / norm
    grid = observation_grid(horizon, n_observations)
    log.info(f"Imaginary-time equation on {sys.n_states} states to t={horizon} under {schedule.name}")

    def fun(t, phi):
        return -apply_generator(sys, schedule.eval(t), phi)

    def renormalise(phi):
        return phi / np.linalg.norm(phi)

    observer = _Observer(sys, schedule, horizon, k_max, spectrum_states, keep_states=verify)

    def observe(t, phi):
        observer(t, distribution_from_ray(sys, schedule.gamma(t), phi), phi)

    phi = _integrate(fun, phi0, grid, rtol, atol, renormalise, observe)
    trace = observer.trace("imaginary", phi, 0.0, _metadata(sys, schedule, horizon, rtol, atol))

    if verify:
        if reference is None:
            P0 = distribution_from_ray(sys, schedule.gamma(0.0), phi0)
            if P0 is None:
                log.info("phi0 changes sign; skipping the master-equation comparison")
                return trace
            reference = integrate_master(
                sys,
                schedule,
                P0,
                horizon,
                rtol,
                atol,
                n_observations,
                k_max=0,
                spectrum_states=0,
                keep_states=True,
            )
        trace.correspondence_deviation = correspondence_deviation(trace, reference)
        if trace.correspondence_deviation > CORRESPONDENCE_TOL:
            log.warning(
                f"Imaginary-time ray deviates from exp(beta*H_0/2) P by {trace.correspondence_deviation:.3g}"
            )
        else:
            log.info(f"Master/imaginary-time correspondence holds to {trace.correspondence_deviation:.3g}")
    return trace


def correspondence_deviation(imaginary, master):
    """Largest entry-wise difference between the two traces' unit rays on their shared grid."""
    if imaginary.rays is None or master.rays is None:
        raise ValueError("both traces need stored rays")
    if not np.allclose(imaginary.times, master.times, rtol=1e-12, atol=0):
        raise ValueError("traces were recorded on different grids")
    return float(np.max(np.abs(imaginary.rays - master.rays)))


class ExcitationCoefficients(NamedTuple):
    measured: np.ndarray
    predicted: np.ndarray
    gaps: np.ndarray
    # norm of phi outside the ground state of G(t), measured and first-order predicted
    residual: float
    predicted_residual: float


def excitation_coefficients(phi, sys, schedule, t, k_max=1):
    """
    |c_j| = |<j|phi>| for the instantaneous eigenvectors of G(t), j = 1..k_max,
    next to the first-order adiabatic prediction |<j|dG/dt|0>| / Delta_j^2.

    The prediction does not depend on the total annealing time: dG/ds = tau dG/dt
    cancels the 1/tau prefactor. The residual fields sum over every excited
    level and stay well defined when excited levels are degenerate.
    """
    if sys.n_spins > EXCITATION_MAX_SPINS:
        raise ResourceCapError(f"excitation coefficients need N*M <= {EXCITATION_MAX_SPINS}")
    if not 0 <= k_max < sys.n_states:
        raise ValueError(f"k_max must lie in [0, {sys.n_states - 1}]")
    phi = np.asarray(phi, dtype=float)
    phi = phi / np.linalg.norm(phi)

    eigenvalues, vectors = eigh(build_generator(sys, schedule, t))
    spacing = np.diff(eigenvalues[: k_max + 1])
    if np.any(spacing <= DEGENERACY_TOL):
        level = int(np.argmax(spacing <= DEGENERACY_TOL))
        raise DegeneracyError(f"levels {level} and {level + 1} of G({t}) are degenerate")
    vectors = vectors * np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])])

    projections = vectors.T @ phi
    coupling = vectors.T @ (build_generator_derivative(sys, schedule, t) @ vectors[:, 0])
    gaps = eigenvalues - eigenvalues[0]
    predicted_all = np.abs(coupling[1:]) / gaps[1:] ** 2

    return ExcitationCoefficients(
        measured=np.abs(projections[1 : k_max + 1]),
        predicted=predicted_all[:k_max],
        gaps=gaps[1 : k_max + 1],
        residual=float(np.linalg.norm(phi - projections[0] * vectors[:, 0])),
        predicted_residual=float(np.linalg.norm(predicted_all)),
    )


class StiffIntegrationError(Exception):
    pass
