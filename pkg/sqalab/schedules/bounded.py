"""
Bounded-coefficient schedules H(t) = s(t) H_Ising - (1 - s(t)) sum_j sigma^x_j.

Dividing through by s(t) and switching to the clock t~ = int_0^t s gives a
transverse field Gamma(t~) = (1 - s) / s, to which the certified schedules apply.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

log = logging.getLogger(__name__)

QUAD_EPSREL = 1e-10
DEFAULT_POINTS = 513


@dataclass(frozen=True)
class BoundedCoefficientMap:
    times: np.ndarray
    t_tilde: np.ndarray
    s_values: np.ndarray
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "_forward", PchipInterpolator(self.times, self.t_tilde))
        object.__setattr__(self, "_inverse", PchipInterpolator(self.t_tilde, self.times))
        object.__setattr__(self, "_s_of_t", PchipInterpolator(self.times, self.s_values))

    def t_tilde_of(self, t):
        return self._forward(t)

    def t_of(self, t_tilde):
        return self._inverse(t_tilde)

    def s_of(self, t):
        return self._s_of_t(t)

    def Gamma_of(self, t_tilde):
        """Gamma(t~) = (1 - s)/s at the original time t(t~); infinite where s = 0."""
        s = np.clip(self.s_of(self.t_of(t_tilde)), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, (1.0 - s) / np.where(s > 0, s, 1.0), np.inf)

    @property
    def Gamma_values(self):
        """Gamma at each grid point, indexed like t_tilde."""
        with np.errstate(divide="ignore"):
            return np.where(self.s_values > 0, (1.0 - self.s_values) / np.where(self.s_values > 0, self.s_values, 1.0), np.inf)


def reparametrize(s, horizon, n_points=DEFAULT_POINTS):
    """
    Build the t <-> t~ map for a monotone coefficient function s on [0, horizon].

    s must be non-decreasing with values in [0, 1] and strictly positive on
    (0, horizon]. Raises ValueError otherwise.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    times = np.linspace(0.0, horizon, n_points)
    s_values = np.array([float(s(t)) for t in times])

    if np.any(s_values < 0) or np.any(s_values > 1):
        raise ValueError("s(t) must lie in [0, 1]")
    if np.any(np.diff(s_values) < -1e-12):
        raise ValueError("s(t) must be monotonically non-decreasing")
    if np.any(s_values[1:] <= 0):
        raise ValueError("s(t) must be strictly positive on (0, T]")

    t_tilde = np.zeros_like(times)
    for i in range(1, n_points):
        piece, err = quad(s, times[i - 1], times[i], epsrel=QUAD_EPSREL, epsabs=0.0)
        t_tilde[i] = t_tilde[i - 1] + piece

    log.debug("Reparametrized s(t) on [0, %s]: t~(T) = %s", horizon, t_tilde[-1])
    return BoundedCoefficientMap(times, t_tilde, s_values, float(horizon))


def s_from_Gamma(Gamma):
    return 1.0 / (1.0 + np.asarray(Gamma, dtype=float))


def bounded_power_law_s(t_tilde, c1, g_tilde):
    """s = 1 / (1 + c1 t~^(-g~)); 0 at t~ = 0."""
    t_tilde = np.asarray(t_tilde, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t_tilde > 0, 1.0 / (1.0 + c1 * np.power(np.where(t_tilde > 0, t_tilde, 1.0), -g_tilde)), 0.0)
