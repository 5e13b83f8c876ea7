import math
from dataclasses import dataclass

import numpy as np

from sqalab.schedules.base import Schedule, ScheduleValue
from sqalab.schedules.transform import half_log_coth_from_log

# Below this value of z = 2 beta Gamma / M the derivative ratios use series.
SERIES_CUTOFF = 0.1


@dataclass(frozen=True)
class ExponentialDecay(Schedule):
    """
    Gamma(t) = initial * exp(-rate * t). Decays too fast to carry any convergence
    guarantee; used as the control against certified schedules.
    """

    initial: float
    rate: float

    name = "exponential-decay"
    title = "Exponential decay"
    description = "Gamma falls off exponentially; non-convergent control"

    def __post_init__(self):
        super().__post_init__()
        if not self.initial > 0:
            raise ValueError("initial Gamma must be positive")
        if not self.rate > 0:
            raise ValueError("decay rate must be positive")

    def _log_y(self, t):
        # y = beta Gamma(t) / M
        return math.log(self.inverse_temperature * self.initial / self.trotter_slices) - self.rate * t

    def eval(self, t):
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        log_y = self._log_y(t)
        gamma = half_log_coth_from_log(log_y)
        dgamma, d2gamma = _derivatives(math.exp(log_y), self.rate)
        return ScheduleValue(self.initial * math.exp(-self.rate * t), gamma, dgamma, d2gamma)


def _derivatives(y, r):
    """
    With gamma = (1/2) log coth y and y' = -r y:
    gamma'  = r y / sinh(2y)
    gamma'' = -r^2 y (sinh z - z cosh z) / sinh^2 z,  z = 2y
    """
    z = 2.0 * y
    if z < 1e-8:
        return 0.5 * r, 0.0
    # y / sinh z without overflow
    y_over_sinh = z * math.exp(-z) / (-math.expm1(-2.0 * z))
    dgamma = r * y_over_sinh

    if z < SERIES_CUTOFF:
        z2 = z * z
        numerator = -z**3 * (1.0 / 3.0 + z2 / 30.0 + z2 * z2 / 840.0 + z2**3 / 45360.0)
        ratio = numerator / np.sinh(z) ** 2
    else:
        e2 = math.exp(-2.0 * z)
        ratio = 2.0 * math.exp(-z) * ((1.0 - z) - e2 * (1.0 + z)) / math.expm1(-2.0 * z) ** 2
    d2gamma = -r * r * y * ratio
    return dgamma, d2gamma
