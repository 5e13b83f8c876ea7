import logging
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from sqalab.schedules.transform import Gamma_from_gamma

log = logging.getLogger(__name__)


class ScheduleValue(NamedTuple):
    Gamma: float
    gamma: float
    dgamma: float
    d2gamma: float


@dataclass(frozen=True)
class Schedule:
    """
    A transverse-field schedule Gamma(t) together with the Trotter coupling
    gamma(t) and its first two time derivatives.

    Subclasses implement _gamma(t) -> (gamma, dgamma, d2gamma). Those that are
    naturally parametrised by Gamma override eval instead.
    """

    n_sites: int
    trotter_slices: int
    inverse_temperature: float

    name = None
    title = None
    description = None
    # "analytic" or "finite-difference"
    derivative_source = "analytic"

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be a positive integer")
        if self.trotter_slices < 2:
            raise ValueError("trotter_slices must be an integer >= 2")
        if not self.inverse_temperature > 0:
            raise ValueError("inverse_temperature must be positive")

    @classmethod
    def info(cls):
        return {
            "name": cls.name,
            "title": cls.title,
            "description": cls.description,
        }

    def _gamma(self, t):
        raise NotImplementedError

    def eval(self, t):
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        gamma, dgamma, d2gamma = self._gamma(t)
        Gamma = Gamma_from_gamma(gamma, self.inverse_temperature, self.trotter_slices)
        return ScheduleValue(Gamma, gamma, dgamma, d2gamma)

    def gamma(self, t):
        return self.eval(t).gamma

    def Gamma(self, t):
        return self.eval(t).Gamma

    def eval_many(self, times):
        """Returns an array of shape (len(times), 4) with the ScheduleValue columns."""
        return np.array([self.eval(float(t)) for t in times])

    def stretched(self, factor):
        return Stretched(
            self.n_sites,
            self.trotter_slices,
            self.inverse_temperature,
            base=self,
            factor=float(factor),
        )

    @property
    def is_time_dependent(self):
        return True

    def to_config(self):
        """Schedule parameters as a JSON-ready dict; N, M and beta come from the problem."""
        config = {"family": self.name}
        for f in fields(self):
            if f.name in ("n_sites", "trotter_slices", "inverse_temperature"):
                continue
            config[f.name] = getattr(self, f.name)
        return config


@dataclass(frozen=True)
class Stretched(Schedule):
    """The base schedule slowed down by factor: gamma_slow(t) = gamma(t / factor)."""

    base: Schedule = None
    factor: float = 1.0

    name = "stretched"
    title = "Stretched schedule"
    description = "Runs another schedule factor times more slowly"

    def __post_init__(self):
        super().__post_init__()
        if self.base is None:
            raise ValueError("a stretched schedule needs a base schedule")
        if not self.factor > 0:
            raise ValueError("stretch factor must be positive")

    @property
    def derivative_source(self):
        return self.base.derivative_source

    @property
    def is_time_dependent(self):
        return self.base.is_time_dependent

    def eval(self, t):
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        v = self.base.eval(t / self.factor)
        return ScheduleValue(v.Gamma, v.gamma, v.dgamma / self.factor, v.d2gamma / self.factor**2)

    def to_config(self):
        config = self.base.to_config()
        config["stretch"] = self.factor * config.get("stretch", 1.0)
        return config


def describe(schedule):
    """A flat dict for logs and run metadata."""
    return {**schedule.info(), "derivative_source": schedule.derivative_source, **schedule.to_config()}
