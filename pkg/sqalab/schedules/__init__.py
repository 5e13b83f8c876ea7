import json

from sqalab.schedules.base import Schedule, ScheduleValue, Stretched, describe
from sqalab.schedules.bounded import (
    BoundedCoefficientMap,
    bounded_power_law_s,
    reparametrize,
    s_from_Gamma,
)
from sqalab.schedules.conditions import ScheduleConditionReport, check_schedule_conditions, default_grid
from sqalab.schedules.constant import Constant
from sqalab.schedules.exponential import ExponentialDecay
from sqalab.schedules.exponents import (
    ConstantExponent,
    FiniteDifferenceExponent,
    LogCorrectedExponent,
    exponent_from_config,
)
from sqalab.schedules.general_g import GeneralG
from sqalab.schedules.markov_bound import MarkovBound
from sqalab.schedules.power_law import PowerLaw, asymptotic_power_law_Gamma
from sqalab.schedules.transform import Gamma_from_gamma, gamma_from_Gamma
from sqalab.util import ConfigError

SCHEDULE_FAMILIES = {
    cls.name: cls for cls in (PowerLaw, GeneralG, ExponentialDecay, Constant, MarkovBound)
}

_REQUIRED = {
    "power-law": ("c1",),
    "general-g": ("c1", "c2", "exponent"),
    "exponential-decay": ("initial", "rate"),
    "constant": ("value",),
    "markov-bound": ("R", "L1"),
}


def validate_schedule_config(config_str):
    """
    Validate a schedule spec (JSON). Returns the string, raises ConfigError
    naming the offending key.
    """
    if not config_str:
        raise ConfigError("schedule config is empty")
    try:
        config_obj = json.loads(config_str)
    except json.JSONDecodeError as e:
        raise ConfigError(f"schedule config is not valid JSON: {e}")
    if not isinstance(config_obj, dict):
        raise ConfigError("schedule config must be an object")

    family = config_obj.get("family")
    if family not in SCHEDULE_FAMILIES:
        raise ConfigError(f"schedule 'family' must be one of {sorted(SCHEDULE_FAMILIES)}, got {family!r}")

    for key in _REQUIRED[family]:
        if key not in config_obj:
            raise ConfigError(f"{family} schedule is missing '{key}'")

    for key, value in config_obj.items():
        if key in ("family", "exponent"):
            continue
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"schedule parameter '{key}' must be a number")

    if "stretch" in config_obj and not config_obj["stretch"] > 0:
        raise ConfigError("'stretch' must be positive")

    if family == "general-g":
        exponent = config_obj["exponent"]
        if not isinstance(exponent, dict) or exponent.get("name") not in ("constant", "log-corrected"):
            raise ConfigError("general-g 'exponent' must name 'constant' or 'log-corrected'")

    return config_str


def schedule_from_config(config, sys):
    """Build a schedule from a validated spec dict and the problem's N, M and beta."""
    validate_schedule_config(json.dumps(config))
    base = (sys.n_sites, sys.trotter_slices, sys.inverse_temperature)
    params = {k: v for k, v in config.items() if k not in ("family", "stretch")}

    try:
        match config["family"]:
            case "general-g":
                params["exponent"] = exponent_from_config(params["exponent"], sys.n_sites)
                schedule = GeneralG(*base, **params)
            case family:
                schedule = SCHEDULE_FAMILIES[family](*base, **params)
    except TypeError as e:
        raise ConfigError(f"bad schedule parameters: {e}")
    except ValueError as e:
        raise ConfigError(str(e))

    if config.get("stretch", 1.0) != 1.0:
        schedule = schedule.stretched(config["stretch"])
    return schedule
