"""
Experiment harness: `sqalab <mode> --config experiment.json --out runs/`.

Every run gets its own directory <out>/<timestamp>-<mode>-<hash8> holding the
resolved config.json next to the mode's CSV and JSON outputs, so a run can be
repeated from its own directory.
"""
import argparse
import json
import logging
import logging.config
import math
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from sqalab.evolve import (
    DEFAULT_ATOL,
    DEFAULT_OBSERVATIONS,
    DEFAULT_RTOL,
    boltzmann,
    integrate_imaginary,
    integrate_master,
    ray_from_distribution,
)
from sqalab.generator import spectral_sweep
from sqalab.lattice import TrotterSystem, validate_problem_config
from sqalab.mcmc import SITE_SELECTIONS, estimate_tv, run_annealed
from sqalab.schedules import check_schedule_conditions, describe, schedule_from_config, validate_schedule_config
from sqalab.util import (
    CSV_SCHEMAS,
    DEFAULT_DENSE_CAP,
    ConfigError,
    ResourceCapError,
    config_hash,
    default_threads,
    parse_grid,
    write_csv,
    write_json,
)

log = logging.getLogger(__name__)

MODES = ("spectrum", "evolve", "sample", "schedule-check", "compare")
# Modes that never build dense tables, so the problem's dense cap does not apply.
UNCAPPED_MODES = ("sample",)
INITIAL_STATES = ("uniform", "all-up", "boltzmann")
DEFAULT_SPECTRUM_GRID = "log:1e-2,1e4,60"
LOG_FORMAT = "%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s"
LOG_CONFIG = "logging.ini"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE_CAP = 3


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    # the resolved problem file contents, inlined so config.json stands alone
    problem: dict
    schedule: dict | None = None
    schedules: list | None = None
    horizon: float = 100.0
    horizons: list | None = None
    grid: str | None = None
    replicas: int = 100
    seed: int = 0
    samples: int = 1
    sample_spacing: float = 1.0
    site_selection: str = "random"
    initial: str = "uniform"
    n_observations: int = DEFAULT_OBSERVATIONS
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    k_max: int = 2
    b: int | None = None
    c: float = 0.0
    cprime: float = 0.0
    cdoubleprime: float = 0.0
    progress_every: int | None = None

    @classmethod
    def from_dict(cls, config):
        return cls(**config)

    def to_dict(self):
        return asdict(self)

    @property
    def hash(self):
        return config_hash(self.to_dict())

    def system(self, lift_cap=False):
        problem = dict(self.problem)
        if lift_cap:
            n_spins = problem["n_sites"] * problem["trotter_slices"]
            problem["dense_cap"] = max(problem.get("dense_cap", n_spins), n_spins)
        return TrotterSystem.from_config(problem)

    def build_schedule(self, sys, spec=None):
        return schedule_from_config(spec if spec is not None else self.schedule, sys)


_NUMBERS = ("horizon", "sample_spacing", "rtol", "atol", "c", "cprime", "cdoubleprime")
_COUNTS = {"replicas": 1, "samples": 1, "n_observations": 2, "k_max": 0}


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_count(value):
    return isinstance(value, int) and not isinstance(value, bool)


def validate_experiment_config(config_str):
    """
    Validate an experiment config (JSON). Returns the string, raises
    ConfigError naming the offending key.
    """
    if not config_str:
        raise ConfigError("experiment config is empty")
    try:
        config_obj = json.loads(config_str)
    except json.JSONDecodeError as e:
        raise ConfigError(f"experiment config is not valid JSON: {e}")
    if not isinstance(config_obj, dict):
        raise ConfigError("experiment config must be an object")

    known = set(ExperimentConfig.__dataclass_fields__)
    for key in config_obj:
        if key not in known:
            raise ConfigError(f"unknown experiment key '{key}'")

    mode = config_obj.get("mode")
    if mode not in MODES:
        raise ConfigError(f"'mode' must be one of {MODES}, got {mode!r}")

    problem = config_obj.get("problem")
    if isinstance(problem, dict):
        validate_problem_config(json.dumps(problem))
    elif not isinstance(problem, str):
        raise ConfigError("'problem' must be a path to a problem file or an inline problem object")

    if mode == "compare":
        schedules = config_obj.get("schedules")
        if not isinstance(schedules, list) or not schedules:
            raise ConfigError("compare mode needs a non-empty 'schedules' list")
        for spec in schedules:
            validate_schedule_config(json.dumps(spec))
    else:
        if "schedule" not in config_obj:
            raise ConfigError(f"{mode} mode needs a 'schedule'")
        validate_schedule_config(json.dumps(config_obj["schedule"]))

    for key in _NUMBERS:
        if key in config_obj and not _is_number(config_obj[key]):
            raise ConfigError(f"'{key}' must be a number")
    for key in ("horizon", "sample_spacing", "rtol", "atol"):
        if key in config_obj and not config_obj[key] > 0:
            raise ConfigError(f"'{key}' must be positive")
    for key in ("cprime", "cdoubleprime"):
        if key in config_obj and config_obj[key] < 0:
            raise ConfigError(f"'{key}' must be non-negative")

    for key, least in _COUNTS.items():
        if key in config_obj and (not _is_count(config_obj[key]) or config_obj[key] < least):
            raise ConfigError(f"'{key}' must be an integer >= {least}")

    seed = config_obj.get("seed", 0)
    if not _is_count(seed) or not 0 <= seed < 2**64:
        raise ConfigError("'seed' must be an unsigned 64-bit integer")

    for key in ("b", "progress_every"):
        value = config_obj.get(key)
        if value is not None and (not _is_count(value) or value < 1):
            raise ConfigError(f"'{key}' must be a positive integer")

    horizons = config_obj.get("horizons")
    if horizons is not None:
        if not isinstance(horizons, list) or not horizons:
            raise ConfigError("'horizons' must be a non-empty list")
        if not all(_is_number(h) and h > 0 for h in horizons):
            raise ConfigError("every entry of 'horizons' must be a positive number")

    grid = config_obj.get("grid")
    if grid is not None:
        if not isinstance(grid, str):
            raise ConfigError("'grid' must be a string such as 'log:1e-2,1e4,60'")
        try:
            parse_grid(grid)
        except ValueError as e:
            raise ConfigError(f"'grid': {e}")

    if config_obj.get("site_selection", "random") not in SITE_SELECTIONS:
        raise ConfigError(f"'site_selection' must be one of {SITE_SELECTIONS}")
    initial = config_obj.get("initial", "uniform")
    if initial not in INITIAL_STATES:
        raise ConfigError(f"'initial' must be one of {INITIAL_STATES}")
    if mode == "sample" and initial == "boltzmann":
        raise ConfigError("'initial' cannot be 'boltzmann' when sampling")

    return config_str


def load_experiment(path, mode, seed=None, grid=None):
    """
    Read an experiment config, apply command-line overrides and inline the
    problem file (a relative path is taken from the config file's directory).
    """
    path = Path(path)
    try:
        config_obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"experiment config is not valid JSON: {e}")
    except OSError as e:
        raise ConfigError(f"cannot read experiment config: {e}")
    if not isinstance(config_obj, dict):
        raise ConfigError("experiment config must be an object")

    if config_obj.setdefault("mode", mode) != mode:
        raise ConfigError(f"config 'mode' is {config_obj['mode']!r} but the subcommand is {mode!r}")
    if seed is not None:
        config_obj["seed"] = seed
    if grid is not None:
        config_obj["grid"] = grid

    problem = config_obj.get("problem")
    if isinstance(problem, str):
        problem_path = Path(problem)
        if not problem_path.is_absolute():
            problem_path = path.parent / problem_path
        try:
            problem_str = problem_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read problem file: {e}")
        validate_problem_config(problem_str)
        config_obj["problem"] = json.loads(problem_str)

    validate_experiment_config(json.dumps(config_obj))
    return ExperimentConfig.from_dict(config_obj)


def make_run_dir(out, config, now=None):
    now = now or datetime.now(timezone.utc)
    base = f"{now:%Y%m%dT%H%M%S}-{config.mode}-{config.hash[:8]}"
    run_dir = Path(out) / base
    suffix = 1
    while run_dir.exists():
        run_dir = Path(out) / f"{base}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    write_json(run_dir / "config.json", config.to_dict())
    log.info(f"Writing run to {run_dir}")
    return run_dir


def _initial_distribution(sys, schedule, initial):
    match initial:
        case "uniform":
            return np.full(sys.n_states, 1.0 / sys.n_states)
        case "all-up":
            P0 = np.zeros(sys.n_states)
            P0[0] = 1.0
            return P0
        case "boltzmann":
            return boltzmann(sys, schedule.gamma(0.0))


def cmd_spectrum(config, sys, run_dir, threads=1):
    """
    Sweep the gap, the norm of dG/dt, its bound and the adiabatic ratio over
    the time grid; writes spectrum.csv and a summary of the worst margins.
    """
    schedule = config.build_schedule(sys)
    times = parse_grid(config.grid or DEFAULT_SPECTRUM_GRID)
    reports = spectral_sweep(sys, schedule, times, threads=threads, b=config.b)
    write_csv(run_dir / "spectrum.csv", "spectrum", CSV_SCHEMAS["spectrum"], [r.row() for r in reports])

    worst = min(reports, key=lambda r: r.bound_margin)
    violations = [r for r in reports if not r.bound_ok]
    restoring = max((r.restoring_b for r in violations if r.restoring_b is not None), default=None)
    summary = {
        "config_hash": config.hash,
        "schedule": describe(schedule),
        "points": len(reports),
        "b": worst.b,
        "worst_bound_margin": worst.bound_margin,
        "worst_bound_t": worst.t,
        "bound_violations": len(violations),
        "restoring_b": restoring,
        "min_gap": min(r.gap for r in reports),
        "max_adiabatic_ratio": max(r.adiabatic_ratio for r in reports),
        "q_infimum": min(r.q for r in reports),
    }
    write_json(run_dir / "spectrum.json", summary)

    print(f"worst norm-bound margin {worst.bound_margin:.6g} at t={worst.t:.6g} (b={worst.b})")
    print(f"smallest gap {summary['min_gap']:.6g}, largest adiabatic ratio {summary['max_adiabatic_ratio']:.6g}")
    if violations:
        print(f"{len(violations)} bound violation(s); b={restoring} restores the bound")
    return reports


def cmd_evolve(config, sys, run_dir, threads=1):
    """Master equation and imaginary-time equation from the same start, with their correspondence."""
    schedule = config.build_schedule(sys)
    P0 = _initial_distribution(sys, schedule, config.initial)
    options = dict(
        horizon=config.horizon,
        rtol=config.rtol,
        atol=config.atol,
        n_observations=config.n_observations,
        k_max=config.k_max,
    )
    master = integrate_master(sys, schedule, P0, keep_states=True, **options)
    phi0 = ray_from_distribution(sys, schedule.gamma(0.0), P0)
    imaginary = integrate_imaginary(sys, schedule, phi0, reference=master, **options)

    for trace in (master, imaginary):
        trace.metadata["config_hash"] = config.hash
        trace.write(run_dir)
    write_json(
        run_dir / "evolve.json",
        {
            "config_hash": config.hash,
            "schedule": describe(schedule),
            "final_tv_inst": master.tv_to_instantaneous_boltzmann[-1],
            "final_tv_final": master.tv_to_final_boltzmann[-1],
            "correspondence_deviation": imaginary.correspondence_deviation,
            "max_norm_drift": master.max_norm_drift,
        },
    )
    print(f"final TV to the instantaneous equilibrium {master.tv_to_instantaneous_boltzmann[-1]:.6g}")
    print(f"master/imaginary-time deviation {imaginary.correspondence_deviation:.3g}")
    return master, imaginary


def cmd_sample(config, sys, run_dir, threads=1):
    """
    Annealed replicas at every horizon (the `horizons` list, or `horizon`);
    writes sample.json and one histogram CSV per horizon. Time-independent
    schedules are also scored against the exact equilibrium distribution.
    """
    schedule = config.build_schedule(sys)
    exact_ok = not schedule.is_time_dependent and sys.n_spins <= config.problem.get("dense_cap", DEFAULT_DENSE_CAP)
    horizons = config.horizons or [config.horizon]

    runs = []
    for i, horizon in enumerate(horizons):
        summary = run_annealed(
            sys,
            schedule,
            horizon,
            config.replicas,
            config.seed,
            threads=threads,
            samples=config.samples,
            sample_spacing=config.sample_spacing,
            site_selection=config.site_selection,
            initial=config.initial,
            progress_every=config.progress_every,
        )
        run = summary.to_dict()
        if summary.replica_states is not None:
            name = "histogram.csv" if len(horizons) == 1 else f"histogram-{i + 1}.csv"
            write_csv(run_dir / name, "histogram", CSV_SCHEMAS["histogram"], summary.histogram_rows())
            run["histogram"] = name
            if exact_ok:
                tv, stderr = estimate_tv(summary, boltzmann(sys, schedule.gamma(0.0)), seed=config.seed)
                run["tv_to_boltzmann"] = tv
                run["tv_stderr"] = stderr
        runs.append(run)
        print(f"horizon {horizon:g}: ground hit rate {summary.ground_hit_rate}")

    result = {"config_hash": config.hash, "seed": config.seed, "schedule": describe(schedule), "runs": runs}
    write_json(run_dir / "sample.json", result)
    return result


def cmd_schedule_check(config, sys, run_dir, threads=1):
    schedule = config.build_schedule(sys)
    t_grid = parse_grid(config.grid) if config.grid else None
    report = check_schedule_conditions(
        schedule, sys, b=config.b, cprime=config.cprime, cdoubleprime=config.cdoubleprime, t_grid=t_grid, c=config.c
    )
    write_json(run_dir / "schedule_check.json", {"config_hash": config.hash, "all_ok": report.all_ok, **report.to_dict()})
    print(
        f"conditions: {report.condition1_ok}/{report.condition2_ok}/{report.condition3_ok}, "
        f"constant condition lhs {report.constant_condition_lhs:.6g}"
    )
    return report


def cmd_compare(config, sys, run_dir, threads=1):
    """Final TV under each schedule on one instance, and its ratio to the first schedule's."""
    rows = []
    first = None
    for spec in config.schedules:
        schedule = config.build_schedule(sys, spec)
        P0 = _initial_distribution(sys, schedule, config.initial)
        trace = integrate_master(
            sys,
            schedule,
            P0,
            horizon=config.horizon,
            rtol=config.rtol,
            atol=config.atol,
            n_observations=config.n_observations,
            k_max=0,
            spectrum_states=0,
        )
        tv_inst = float(trace.tv_to_instantaneous_boltzmann[-1])
        first = tv_inst if first is None else first
        ratio = tv_inst / first if first > 0 else (1.0 if tv_inst == 0 else math.inf)
        rows.append([schedule.name, tv_inst, float(trace.tv_to_final_boltzmann[-1]), ratio])
        print(f"{schedule.name}: final TV {tv_inst:.6g} ({ratio:.3g}x the first)")

    write_csv(run_dir / "compare.csv", "compare", CSV_SCHEMAS["compare"], rows)
    return rows


COMMANDS = {
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "sample": cmd_sample,
    "schedule-check": cmd_schedule_check,
    "compare": cmd_compare,
}


def setup_logging(log_config=None):
    """fileConfig from log_config or ./logging.ini when present, else a stderr handler."""
    path = Path(log_config or LOG_CONFIG)
    if path.exists():
        logging.config.fileConfig(path, disable_existing_loggers=False)
    else:
        if log_config:
            raise ConfigError(f"logging config {log_config} does not exist")
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)


def build_parser():
    parser = argparse.ArgumentParser(prog="sqalab", description="Simulated quantum annealing lab")
    subparsers = parser.add_subparsers(dest="mode", required=True)
    for mode, command in COMMANDS.items():
        sub = subparsers.add_parser(mode, help=command.__doc__.strip().splitlines()[0] if command.__doc__ else None)
        sub.add_argument("--config", required=True, help="Experiment config (JSON)")
        sub.add_argument("--out", default="runs", help="Directory that receives the run directory")
        sub.add_argument("--seed", type=int, help="Overrides the config's seed")
        sub.add_argument("--threads", type=int, help="Worker threads (default from SQALAB_THREADS)")
        sub.add_argument("--grid", help="Time grid such as 'log:1e-2,1e4,60'")
        sub.add_argument("--log-config", help="Logging ini file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_config)
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        config = load_experiment(args.config, args.mode, seed=args.seed, grid=args.grid)
        log.debug(f"Resolved config: {config.to_dict()}")
        sys = config.system(lift_cap=args.mode in UNCAPPED_MODES)
        run_dir = make_run_dir(args.out, config)
        COMMANDS[args.mode](config, sys, run_dir, threads)
    except ResourceCapError as e:
        log.error(str(e))
        return EXIT_RESOURCE_CAP
    except ValueError as e:
        log.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    print(run_dir)
    return EXIT_OK
