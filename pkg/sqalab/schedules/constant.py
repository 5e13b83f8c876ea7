from dataclasses import dataclass

from sqalab.schedules.base import Schedule, ScheduleValue
from sqalab.schedules.transform import gamma_from_Gamma


@dataclass(frozen=True)
class Constant(Schedule):
    value: float

    name = "constant"
    title = "Constant transverse field"
    description = "Holds Gamma fixed; equilibrium sampling at one Trotter coupling"

    def __post_init__(self):
        super().__post_init__()
        if not self.value > 0:
            raise ValueError("constant Gamma must be positive")

    @property
    def is_time_dependent(self):
        return False

    def eval(self, t):
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        gamma = gamma_from_Gamma(self.value, self.inverse_temperature, self.trotter_slices)
        return ScheduleValue(self.value, gamma, 0.0, 0.0)
