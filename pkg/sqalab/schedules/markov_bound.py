import math
from dataclasses import dataclass

from sqalab.schedules.base import Schedule


@dataclass(frozen=True)
class MarkovBound(Schedule):
    """
    Gamma(t) = (M/beta) artanh[(t + 2)^(-2/(R L1))], the discrete-step bound from
    inhomogeneous Markov chain theory. Time here counts Monte Carlo steps, so it
    is a comparison curve and not a certified continuous-time schedule.
    """

    R: float
    L1: float

    name = "markov-bound"
    title = "Inhomogeneous Markov chain bound"
    description = "Comparison schedule with gamma = log(t + 2) / (R L1)"

    def __post_init__(self):
        super().__post_init__()
        if not (self.R > 0 and self.L1 > 0):
            raise ValueError("R and L1 must be positive")

    def _gamma(self, t):
        k = 1.0 / (self.R * self.L1)
        u = t + 2.0
        return k * math.log(u), k / u, -k / (u * u)
