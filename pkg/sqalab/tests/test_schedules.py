import json
import math

import numpy as np
import pytest

from sqalab.lattice import CouplingGraph, TrotterSystem
from sqalab.schedules import (
    Constant,
    ConstantExponent,
    ExponentialDecay,
    FiniteDifferenceExponent,
    GeneralG,
    LogCorrectedExponent,
    MarkovBound,
    PowerLaw,
    Gamma_from_gamma,
    asymptotic_power_law_Gamma,
    bounded_power_law_s,
    check_schedule_conditions,
    default_grid,
    gamma_from_Gamma,
    reparametrize,
    s_from_Gamma,
    schedule_from_config,
    validate_schedule_config,
)
from sqalab.util import ConfigError, DomainError

LOG_GRID = np.geomspace(1e-2, 1e4, 25)


def _richardson(f, t):
    h = 1e-5 * (1 + t)

    def central(step):
        return (f(t + step) - f(t - step)) / (2 * step)

    return (4 * central(h / 2) - central(h)) / 3


class TestTransform:
    def test_known_value(self):
        assert gamma_from_Gamma(0.5, 1.0, 1) == pytest.approx(0.5 * math.log(1 / math.tanh(0.5)), rel=1e-14)
        assert gamma_from_Gamma(0.5, 1.0, 1) == pytest.approx(0.385997, abs=1e-6)

    def test_inverse_known_value(self):
        assert Gamma_from_gamma(gamma_from_Gamma(0.5, 1.0, 1), 1.0, 1) == pytest.approx(0.5, rel=1e-12)

    def test_large_Gamma_limit(self):
        assert gamma_from_Gamma(1e3, 1.0, 1) < 1e-12

    def test_large_gamma_limit(self):
        assert Gamma_from_gamma(40.0, 1.0, 2) < 1e-30

    def test_prefactor_scaling(self):
        assert Gamma_from_gamma(0.3, 2.0, 3) == pytest.approx(1.5 * Gamma_from_gamma(0.3, 1.0, 1), rel=1e-14)

    def test_small_argument_series(self):
        x = 1e-10
        assert gamma_from_Gamma(x, 1.0, 1) == pytest.approx(-0.5 * math.log(x), rel=1e-12)

    def test_round_trip(self, rng):
        for gamma in np.exp(rng.uniform(np.log(1e-6), np.log(20), 200)):
            beta, M = rng.uniform(0.1, 10), int(rng.integers(2, 16))
            again = gamma_from_Gamma(Gamma_from_gamma(gamma, beta, M), beta, M)
            assert again == pytest.approx(gamma, rel=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            gamma_from_Gamma(bad, 1.0, 2)
        with pytest.raises(DomainError):
            Gamma_from_gamma(bad, 1.0, 2)


class TestPowerLaw:
    def test_initial_Gamma(self):
        schedule = PowerLaw(1, 2, 1.0, c1=1.0, c2=1.0)
        # M = 2 doubles the M = 1 value artanh(1/2)
        assert schedule.eval(0.0).Gamma == pytest.approx(2 * math.atanh(0.5), rel=1e-12)

    def test_defining_ode(self):
        schedule = PowerLaw(3, 2, 1.5, c1=0.2, c2=1.0)
        for t in LOG_GRID:
            v = schedule.eval(t)
            assert abs(v.dgamma) * math.exp(12 * v.gamma) == pytest.approx(0.2, rel=1e-10)
            assert abs(v.d2gamma) * math.exp(12 * v.gamma) == pytest.approx(0.04 / (0.2 * t + 1), rel=1e-10)

    def test_asymptotic_form(self):
        schedule = PowerLaw(1, 4, 3.0, c1=1.0, c2=1.0)
        t = 1e4
        ratio = schedule.eval(t).Gamma / asymptotic_power_law_Gamma(1, 4, 3.0, 1.0, 1.0, t)
        assert ratio == pytest.approx(1.0, abs=1e-3)

    def test_monotone(self):
        schedule = PowerLaw(2, 2, 1.0, c1=0.5, c2=1.0)
        values = schedule.eval_many(LOG_GRID)
        assert np.all(np.diff(values[:, 0]) < 0)
        assert np.all(np.diff(values[:, 1]) > 0)

    def test_derivatives_against_finite_differences(self):
        schedule = PowerLaw(2, 3, 1.0, c1=1.0, c2=1.0)
        for t in LOG_GRID:
            v = schedule.eval(t)
            assert _richardson(schedule.gamma, t) == pytest.approx(v.dgamma, rel=1e-6)
            assert _richardson(lambda s: schedule.eval(s).dgamma, t) == pytest.approx(v.d2gamma, rel=1e-6)

    @pytest.mark.parametrize("c1,c2", [(0.0, 1.0), (1.0, 0.5)])
    def test_invalid_constants(self, c1, c2):
        with pytest.raises(ValueError):
            PowerLaw(1, 2, 1.0, c1=c1, c2=c2)


class TestGeneralG:
    def test_contains_power_law(self):
        N = 2
        power = PowerLaw(N, 2, 1.0, c1=0.3, c2=2.0)
        general = GeneralG(N, 2, 1.0, c1=0.3, c2=2.0, exponent=ConstantExponent(1 / (2 * N)))
        for t in LOG_GRID:
            p, g = power.eval(t), general.eval(t)
            assert p.gamma - g.gamma == pytest.approx(math.log(4 * N) / (4 * N), rel=1e-12)
            assert p.dgamma == pytest.approx(g.dgamma, rel=1e-14)
            assert p.d2gamma == pytest.approx(g.d2gamma, rel=1e-14)

    def test_as_general_g_is_the_same_schedule(self):
        power = PowerLaw(2, 2, 1.0, c1=0.3, c2=1.0)
        general = power.as_general_g()
        for t in LOG_GRID:
            assert general.eval(t).gamma == pytest.approx(power.eval(t).gamma, rel=1e-12)
            assert general.eval(t).dgamma == pytest.approx(power.eval(t).dgamma, rel=1e-12)

    def test_log_corrected_derivatives(self):
        schedule = GeneralG(2, 2, 1.0, c1=1.0, c2=3.0, exponent=LogCorrectedExponent(0.25))
        for t in LOG_GRID:
            v = schedule.eval(t)
            assert _richardson(schedule.gamma, t) == pytest.approx(v.dgamma, rel=1e-6)
            assert _richardson(lambda s: schedule.eval(s).dgamma, t) == pytest.approx(v.d2gamma, rel=1e-6)
            g, dg, d2g = schedule.g(t)
            assert _richardson(lambda s: schedule.g(s)[0], t) == pytest.approx(dg, rel=1e-6)
            assert _richardson(lambda s: schedule.g(s)[1], t) == pytest.approx(d2g, rel=1e-6)

    def test_domain_error(self):
        schedule = GeneralG(1, 2, 1.0, c1=1.0, c2=1.0, exponent=ConstantExponent(0.5))
        with pytest.raises(DomainError):
            schedule.eval(0.0)

    def test_finite_difference_exponent_is_flagged(self):
        exponent = FiniteDifferenceExponent(lambda t: 0.25 * (1 - 1 / math.log(t + 3.0)))
        schedule = GeneralG(2, 2, 1.0, c1=1.0, c2=3.0, exponent=exponent)
        analytic = GeneralG(2, 2, 1.0, c1=1.0, c2=3.0, exponent=LogCorrectedExponent(0.25))
        assert schedule.derivative_source == "finite-difference"
        assert schedule.eval(5.0).dgamma == pytest.approx(analytic.eval(5.0).dgamma, rel=1e-6)


class TestOtherFamilies:
    def test_exponential_decay_gamma(self):
        schedule = ExponentialDecay(2, 3, 2.0, initial=1.5, rate=0.5)
        for t in [0.0, 1.0, 10.0, 100.0]:
            v = schedule.eval(t)
            Gamma = 1.5 * math.exp(-0.5 * t)
            assert v.Gamma == pytest.approx(Gamma, rel=1e-12)
            assert v.gamma == pytest.approx(gamma_from_Gamma(Gamma, 2.0, 3), rel=1e-10)

    def test_exponential_decay_derivatives(self):
        schedule = ExponentialDecay(1, 2, 1.0, initial=3.0, rate=1.0)
        for t in [0.0, 0.5, 1.0, 2.0, 3.4, 5.0]:
            v = schedule.eval(t)
            assert _richardson(schedule.gamma, t + 1e-3) == pytest.approx(schedule.eval(t + 1e-3).dgamma, rel=1e-6)
            assert _richardson(lambda s: schedule.eval(s).dgamma, t + 1e-3) == pytest.approx(
                schedule.eval(t + 1e-3).d2gamma, rel=1e-5
            )
            assert v.dgamma > 0

    def test_exponential_decay_far_tail(self):
        v = ExponentialDecay(2, 3, 2.0, initial=1.0, rate=1.0).eval(1e4)
        assert v.gamma == pytest.approx(0.5 * (1e4 - math.log(2.0 / 3)), rel=1e-12)
        assert v.dgamma == pytest.approx(0.5)

    def test_constant(self):
        v = Constant(2, 2, 1.0, value=0.8).eval(123.0)
        assert v.dgamma == 0.0 and v.d2gamma == 0.0
        assert v.gamma == pytest.approx(gamma_from_Gamma(0.8, 1.0, 2))

    def test_constant_zero_rejected(self):
        with pytest.raises(ValueError):
            Constant(2, 2, 1.0, value=0.0)

    def test_markov_bound(self):
        schedule = MarkovBound(2, 3, 2.0, R=2.0, L1=1.5)
        t = 50.0
        expected = 3 / 2.0 * math.atanh((t + 2) ** (-2 / (2.0 * 1.5)))
        assert schedule.eval(t).Gamma == pytest.approx(expected, rel=1e-12)

    def test_stretched(self):
        base = PowerLaw(1, 3, 1.0, c1=0.5, c2=1.0)
        slow = base.stretched(2)
        v, w = base.eval(10.0), slow.eval(20.0)
        assert w.gamma == v.gamma
        assert w.dgamma == pytest.approx(v.dgamma / 2)
        assert w.d2gamma == pytest.approx(v.d2gamma / 4)


class TestConditions:
    @pytest.fixture
    def sys(self):
        return TrotterSystem(CouplingGraph.ring(3), 2, 1.0)

    def test_boundary_exponent_passes(self, sys):
        schedule = GeneralG(3, 2, 1.0, c1=0.1, c2=1.0, exponent=ConstantExponent(1 / 6))
        report = check_schedule_conditions(schedule, sys, cprime=0.01, cdoubleprime=0.01)
        assert report.all_ok
        assert report.condition1_margin == 0.0
        assert report.condition2_margin > 0 and report.condition3_margin > 0
        assert report.first_bound_ok and report.second_bound_ok

    def test_exponent_too_large_fails_everywhere(self, sys):
        schedule = GeneralG(3, 2, 1.0, c1=0.1, c2=1.0, exponent=ConstantExponent(1 / 3))
        report = check_schedule_conditions(schedule, sys, cprime=0.01, cdoubleprime=0.01)
        assert not report.condition1_ok
        assert report.condition1_margin < 0
        assert report.earliest_compliant_time is None

    def test_log_corrected_exponent_passes(self, sys):
        N, c1 = 3, 0.1
        schedule = GeneralG(N, 2, 1.0, c1=c1, c2=1.0, exponent=LogCorrectedExponent(1 / (2 * N)))
        grid = default_grid(schedule)
        assert c1 * grid[0] + 1.0 > math.e
        cprime = c1 / (2 * N * math.log(c1 * grid[0] + 1.0))
        report = check_schedule_conditions(schedule, sys, cprime=cprime * 1.01, cdoubleprime=c1 * c1 / N)
        assert report.condition1_ok and report.condition2_ok and report.condition3_ok
        assert report.condition1_margin > 0
        assert report.condition2_margin > 0
        assert report.condition3_margin > 0
        assert report.earliest_compliant_time == grid[0]

    def test_constant_condition_reports_assumptions(self, sys):
        schedule = PowerLaw(3, 2, 1.0, c1=1e-3, c2=1.0)
        report = check_schedule_conditions(schedule, sys, c=0.5)
        assert report.b == sys.coordination_number
        assert report.c == 0.5
        assert report.p_of_M == pytest.approx(1.0)
        expected = (3 * report.b * 4 * 3 * 1e-3 / 12) * 2 * 2**6 * math.exp(6 * 1.0 + 3.0)
        assert report.constant_condition_lhs == pytest.approx(expected, rel=1e-12)

    def test_grid_outside_domain(self, sys):
        schedule = GeneralG(3, 2, 1.0, c1=1.0, c2=1.0, exponent=ConstantExponent(0.1))
        with pytest.raises(ValueError):
            check_schedule_conditions(schedule, sys, t_grid=[0.0, 1.0])


class TestReparametrize:
    def test_identity(self):
        mapping = reparametrize(lambda t: 1.0, 10.0)
        assert np.allclose(mapping.t_tilde, mapping.times, atol=1e-12)
        assert np.all(mapping.Gamma_values == 0.0)
        assert mapping.t_of(5.0) == pytest.approx(5.0)

    def test_tanh(self):
        mapping = reparametrize(math.tanh, 20.0)
        assert mapping.t_tilde[-1] == pytest.approx(math.log(math.cosh(20.0)), rel=1e-10)
        assert abs(mapping.t_tilde[-1] - (20.0 - math.log(2))) < 1e-6
        assert math.isinf(mapping.Gamma_values[0])

    def test_power_law_round_trip(self):
        mapping = reparametrize(lambda t: float(bounded_power_law_s(t, 0.5, 0.25)), 50.0)
        recovered = s_from_Gamma(mapping.Gamma_values)
        assert np.allclose(recovered, mapping.s_values, atol=1e-8)

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError):
            reparametrize(lambda t: 0.5 + 0.4 * math.sin(t), 10.0)

    def test_zero_after_start_rejected(self):
        with pytest.raises(ValueError):
            reparametrize(lambda t: 0.0, 1.0)


class TestScheduleConfig:
    @pytest.fixture
    def sys(self):
        return TrotterSystem(CouplingGraph.ring(3), 2, 2.0)

    def test_power_law(self, sys):
        schedule = schedule_from_config({"family": "power-law", "c1": 0.5, "c2": 2.0}, sys)
        assert isinstance(schedule, PowerLaw)
        assert schedule.n_sites == 3 and schedule.inverse_temperature == 2.0

    def test_general_g_with_registry_exponent(self, sys):
        config = {"family": "general-g", "c1": 1.0, "c2": 3.0, "exponent": {"name": "log-corrected"}}
        schedule = schedule_from_config(config, sys)
        assert schedule.exponent == LogCorrectedExponent(1 / 6)

    def test_stretch(self, sys):
        schedule = schedule_from_config({"family": "constant", "value": 1.0, "stretch": 2.0}, sys)
        assert schedule.eval(4.0).Gamma == 1.0
        assert schedule.to_config() == {"family": "constant", "value": 1.0, "stretch": 2.0}

    def test_round_trip(self, sys):
        config = {"family": "exponential-decay", "initial": 2.0, "rate": 1.0}
        assert schedule_from_config(config, sys).to_config() == config

    @pytest.mark.parametrize(
        "config,key",
        [
            ({"family": "cosine"}, "family"),
            ({"family": "power-law"}, "c1"),
            ({"family": "constant", "value": "big"}, "value"),
            ({"family": "general-g", "c1": 1.0, "c2": 3.0, "exponent": {"name": "sqrt"}}, "exponent"),
        ],
    )
    def test_invalid(self, config, key):
        with pytest.raises(ConfigError, match=key):
            validate_schedule_config(json.dumps(config))

    def test_bad_value_is_config_error(self, sys):
        with pytest.raises(ConfigError):
            schedule_from_config({"family": "power-law", "c1": -1.0}, sys)
