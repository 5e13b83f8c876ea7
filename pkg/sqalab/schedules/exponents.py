"""
Exponent functions g(t) for the general schedule family.

Each exponent evaluates (g, g', g'') at time t. Exponents that depend on the
schedule's log(c1 t + c2) receive c1 and c2 as arguments.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstantExponent:
    value: float

    name = "constant"
    derivative_source = "analytic"

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("exponent value must be positive")

    def evaluate(self, t, c1, c2):
        return self.value, 0.0, 0.0

    def to_config(self):
        return {"name": self.name, "value": self.value}


@dataclass(frozen=True)
class LogCorrectedExponent:
    """g(t) = a (1 - 1/log(c1 t + c2)); a defaults to 1/(2N) when built from config."""

    a: float

    name = "log-corrected"
    derivative_source = "analytic"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("log-corrected exponent needs a > 0")

    def evaluate(self, t, c1, c2):
        u = c1 * t + c2
        L = math.log(u)
        if L <= 0:
            raise ValueError(f"log(c1 t + c2) must be positive, got {L} at t={t}")
        g = self.a * (1.0 - 1.0 / L)
        dg = self.a * c1 / (u * L * L)
        d2g = -self.a * c1 * c1 * (2.0 + L) / (L**3 * u * u)
        return g, dg, d2g

    def to_config(self):
        return {"name": self.name, "a": self.a}


@dataclass(frozen=True)
class FiniteDifferenceExponent:
    """
    Wraps a plain callable g(t). Derivatives come from central differences with
    step 1e-5 * (1 + t), and schedules built on it report their derivatives as
    finite-difference.
    """

    func: Callable[[float], float]
    label: str = "user"

    name = "finite-difference"
    derivative_source = "finite-difference"

    def evaluate(self, t, c1, c2):
        h = 1e-5 * (1.0 + t)
        g = self.func(t)
        gp, gm = self.func(t + h), self.func(t - h)
        dg = (gp - gm) / (2.0 * h)
        d2g = (gp - 2.0 * g + gm) / (h * h)
        return g, dg, d2g

    def to_config(self):
        # arbitrary callables cannot be written to a schedule file
        return {"name": self.name, "label": self.label}


EXPONENTS = {
    "constant": ConstantExponent,
    "log-corrected": LogCorrectedExponent,
}


def exponent_from_config(config, n_sites):
    name = config.get("name")
    match name:
        case "constant":
            if "value" not in config:
                raise ValueError("constant exponent needs 'value'")
            return ConstantExponent(float(config["value"]))
        case "log-corrected":
            return LogCorrectedExponent(float(config.get("a", 1.0 / (2 * n_sites))))
        case _:
            raise ValueError(f"Unknown exponent {name!r}, expected one of {sorted(EXPONENTS)}")
