import logging
import math
from dataclasses import dataclass

from sqalab.schedules.base import Schedule
from sqalab.schedules.exponents import ConstantExponent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerLaw(Schedule):
    """
    Gamma(t) = (M/beta) artanh[(4N)^(-1/2N) (c1 t + c2)^(-1/2N)], the solution of
    |gamma'(t)| exp(4N gamma(t)) = c1.
    """

    c1: float
    c2: float = 1.0

    name = "power-law"
    title = "Power-law schedule"
    description = "Keeps |gamma'| exp(4N gamma) fixed at c1"

    def __post_init__(self):
        super().__post_init__()
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if not self.c2 >= 1:
            raise ValueError("c2 must be at least 1")

    def _gamma(self, t):
        four_n = 4 * self.n_sites
        u = self.c1 * t + self.c2
        gamma = (math.log(four_n) + math.log(u)) / four_n
        dgamma = self.c1 / (four_n * u)
        d2gamma = -self.c1 * self.c1 / (four_n * u * u)
        return gamma, dgamma, d2gamma

    def as_general_g(self):
        """The same schedule written as GeneralG with g = 1/(2N) and rescaled c1, c2."""
        from sqalab.schedules.general_g import GeneralG

        four_n = 4 * self.n_sites
        return GeneralG(
            self.n_sites,
            self.trotter_slices,
            self.inverse_temperature,
            c1=four_n * self.c1,
            c2=four_n * self.c2,
            exponent=ConstantExponent(1.0 / (2 * self.n_sites)),
        )


def asymptotic_power_law_Gamma(N, M, beta, c1, c2, t):
    """Large-t form (M/beta) (4N)^(-1/2N) (c1 t + c2)^(-1/2N) of the power-law schedule."""
    return (M / beta) * (4 * N) ** (-1.0 / (2 * N)) * (c1 * t + c2) ** (-1.0 / (2 * N))
