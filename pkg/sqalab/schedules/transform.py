import numpy as np

from sqalab.util import DomainError

# Below this argument log(coth x) is evaluated from its series.
SMALL_ARGUMENT = 1e-8


def half_log_coth(x):
    """
    (1/2) log(coth x) for x > 0.

    This map is its own inverse on (0, inf), so it serves both directions of the
    Gamma <-> gamma transform.
    """
    x = float(x)
    if not x > 0:
        raise DomainError(f"log coth is only defined for positive arguments, got {x}")
    if x < SMALL_ARGUMENT:
        return 0.5 * (-np.log(x) + x * x / 3.0)
    e = np.exp(-2.0 * x)
    if e < 0.5:
        return float(np.arctanh(e))
    return 0.5 * (np.log1p(e) - np.log(-np.expm1(-2.0 * x)))


def half_log_coth_from_log(log_x):
    """half_log_coth(exp(log_x)), usable when exp(log_x) underflows."""
    if log_x < np.log(SMALL_ARGUMENT):
        x = np.exp(log_x)
        return 0.5 * (-log_x + x * x / 3.0)
    return half_log_coth(np.exp(log_x))


def gamma_from_Gamma(Gamma, beta, M):
    if not Gamma > 0:
        raise DomainError(f"Gamma must be positive, got {Gamma} (gamma diverges at Gamma = 0)")
    return half_log_coth(beta * Gamma / M)


def Gamma_from_gamma(gamma, beta, M):
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return (M / beta) * half_log_coth(gamma)
