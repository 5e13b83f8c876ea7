"""
Checks of the convergence conditions on the exponent g(t) of a general schedule:

    (1) 0 < g(t) <= 1/(2N)
    (2) |g'(t)|  <= c'  / ((c1 t + c2) log(c1 t + c2))
    (3) |g''(t)| <= c'' / ((c1 t + c2) log(c1 t + c2))

plus the constant condition
    (3b c1/4N + 3b c'/2 + c''/2) M 2^(2N) exp(2N beta p(M) + 2N c) << 1
and the two derived bounds on |gamma'| exp(4N gamma) and |gamma''| exp(4N gamma).
Failures are reported in the returned report, never raised.
"""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from sqalab.lattice import p_of_M_details
from sqalab.schedules.general_g import GeneralG
from sqalab.schedules.power_law import PowerLaw

log = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 200
DEFAULT_GRID_END = 1e6
# log(c1 t0 + c2) > 1 on the default grid
DEFAULT_GRID_START_ARGUMENT = math.e + 0.1


@dataclass
class ScheduleConditionReport:
    condition1_ok: bool
    condition2_ok: bool
    condition3_ok: bool
    condition1_margin: float
    condition2_margin: float
    condition3_margin: float
    first_bound_ok: bool
    first_bound_margin: float
    second_bound_ok: bool
    second_bound_margin: float
    constant_condition_lhs: float
    log_constant_condition_lhs: float
    earliest_compliant_time: float | None
    b: int
    p_of_M: float
    p_of_M_method: str
    c: float
    cprime: float
    cdoubleprime: float
    derivative_source: str
    grid: list = field(default_factory=list)

    @property
    def all_ok(self):
        return self.condition1_ok and self.condition2_ok and self.condition3_ok

    def to_dict(self):
        return asdict(self)


def default_grid(schedule):
    """
    200 log-spaced points on [t0, 1e6] with c1 t0 + c2 = e + 0.1. When c2 already
    exceeds that, the grid starts at 0.
    """
    t0 = (DEFAULT_GRID_START_ARGUMENT - schedule.c2) / schedule.c1
    if t0 <= 0:
        return np.concatenate([[0.0], np.geomspace(1e-3, DEFAULT_GRID_END, DEFAULT_GRID_POINTS - 1)])
    return np.geomspace(t0, DEFAULT_GRID_END, DEFAULT_GRID_POINTS)


def _margins(bound, value):
    return bound - value


def check_schedule_conditions(schedule, sys, b=None, cprime=0.0, cdoubleprime=0.0, t_grid=None, c=0.0):
    """
    Evaluate the conditions pointwise on t_grid (default_grid when None). b
    defaults to the coordination number of the Trotter lattice.
    """
    if isinstance(schedule, PowerLaw):
        schedule = schedule.as_general_g()
    if not isinstance(schedule, GeneralG):
        raise ValueError(f"condition check needs a general-g schedule, got {schedule.name!r}")
    if cprime < 0 or cdoubleprime < 0:
        raise ValueError("c' and c'' must be non-negative")

    grid = default_grid(schedule) if t_grid is None else np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ValueError("grid must be a finite, non-empty list of times")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    u = schedule.c1 * grid + schedule.c2
    if np.any(u <= 1):
        raise ValueError("grid leaves the domain c1 t + c2 > 1")

    N = schedule.n_sites
    c1 = schedule.c1
    L = np.log(u)
    g, dg, d2g = np.array([schedule.g(t) for t in grid]).T
    derivs = np.array([schedule.eval(t) for t in grid])
    gamma, dgamma, d2gamma = derivs[:, 1], derivs[:, 2], derivs[:, 3]

    cond1 = np.minimum(_margins(1.0 / (2 * N), g), g)
    cond1_pointwise = (g > 0) & (g <= 1.0 / (2 * N))
    envelope = 1.0 / (u * L)
    cond2 = _margins(cprime * envelope, np.abs(dg))
    cond3 = _margins(cdoubleprime * envelope, np.abs(d2g))

    growth = np.exp(4 * N * gamma)
    first = _margins(c1 / (4 * N) + cprime / 2, np.abs(dgamma) * growth)
    second = _margins(
        c1 * cprime / (u * L) + c1 * c1 / (4 * N * u) + cdoubleprime / 2,
        np.abs(d2gamma) * growth,
    )

    if b is None:
        b = sys.coordination_number
    p, method = p_of_M_details(sys)
    M, beta = sys.trotter_slices, sys.inverse_temperature
    prefactor = 3 * b * c1 / (4 * N) + 3 * b * cprime / 2 + cdoubleprime / 2
    if prefactor > 0:
        log_lhs = math.log(prefactor) + math.log(M) + 2 * N * math.log(2) + 2 * N * beta * p + 2 * N * c
        lhs = math.exp(log_lhs) if log_lhs < 700 else math.inf
    else:
        log_lhs, lhs = -math.inf, 0.0

    pointwise = cond1_pointwise & (cond2 >= 0) & (cond3 >= 0)
    earliest = None
    failing = np.flatnonzero(~pointwise)
    if failing.size == 0:
        earliest = float(grid[0])
    elif failing[-1] + 1 < grid.size:
        earliest = float(grid[failing[-1] + 1])

    report = ScheduleConditionReport(
        condition1_ok=bool(np.all(cond1_pointwise)),
        condition2_ok=bool(np.all(cond2 >= 0)),
        condition3_ok=bool(np.all(cond3 >= 0)),
        condition1_margin=float(cond1.min()),
        condition2_margin=float(cond2.min()),
        condition3_margin=float(cond3.min()),
        first_bound_ok=bool(np.all(first >= -1e-12 * np.abs(first).max(initial=1.0))),
        first_bound_margin=float(first.min()),
        second_bound_ok=bool(np.all(second >= -1e-12 * np.abs(second).max(initial=1.0))),
        second_bound_margin=float(second.min()),
        constant_condition_lhs=lhs,
        log_constant_condition_lhs=log_lhs,
        earliest_compliant_time=earliest,
        b=int(b),
        p_of_M=float(p),
        p_of_M_method=method,
        c=float(c),
        cprime=float(cprime),
        cdoubleprime=float(cdoubleprime),
        derivative_source=schedule.derivative_source,
        grid=grid.tolist(),
    )
    log.info(
        f"Condition check on {grid.size} points: (1) {report.condition1_ok}, "
        f"(2) {report.condition2_ok}, (3) {report.condition3_ok}, constant lhs {lhs:.3g} (c = {c})"
    )
    if schedule.derivative_source != "analytic":
        log.warning("Exponent derivatives come from finite differences; margins on (2) and (3) are approximate")
    return report
