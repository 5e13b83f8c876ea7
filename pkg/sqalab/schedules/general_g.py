import logging
import math
from dataclasses import dataclass
from typing import Any

from sqalab.schedules.base import Schedule
from sqalab.util import DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneralG(Schedule):
    """
    Gamma(t) = (M/beta) artanh[(c1 t + c2)^(-g(t))], i.e.
    gamma(t) = (g(t)/2) log(c1 t + c2), for an exponent g with known g' and g''.
    """

    c1: float
    c2: float
    exponent: Any

    name = "general-g"
    title = "General exponent schedule"
    description = "Power law in c1 t + c2 with a time-dependent exponent g(t)"

    def __post_init__(self):
        super().__post_init__()
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if not self.c2 >= 1:
            raise ValueError("c2 must be at least 1")

    @property
    def derivative_source(self):
        return self.exponent.derivative_source

    def log_argument(self, t):
        return self.c1 * t + self.c2

    def g(self, t):
        return self.exponent.evaluate(t, self.c1, self.c2)

    def _gamma(self, t):
        c1 = self.c1
        u = c1 * t + self.c2
        if u <= 1:
            raise DomainError(f"c1 t + c2 = {u} at t={t}; gamma is not positive")
        L = math.log(u)
        g, dg, d2g = self.g(t)

        gamma = 0.5 * g * L
        if not gamma > 0:
            raise DomainError(f"gamma = {gamma} at t={t}; g(t) must be positive")
        dgamma = 0.5 * dg * L + 0.5 * g * c1 / u
        d2gamma = 0.5 * d2g * L + dg * c1 / u - 0.5 * g * c1 * c1 / (u * u)
        return gamma, dgamma, d2gamma

    def to_config(self):
        return {
            "family": self.name,
            "c1": self.c1,
            "c2": self.c2,
            "exponent": self.exponent.to_config(),
        }
