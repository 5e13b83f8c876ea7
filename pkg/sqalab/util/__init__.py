import csv
import hashlib
import json
import os

import numpy as np

DEFAULT_DENSE_CAP = 14
THREADS_ENV = "SQALAB_THREADS"

# Eigenvalue spacing below which two levels are treated as degenerate.
DEGENERACY_TOL = 1e-10

CSV_SCHEMA_VERSION = 1
CSV_SCHEMAS = {
    "spectrum": [
        "t",
        "Gamma",
        "gamma",
        "dgamma",
        "d2gamma",
        "gap",
        "norm_dH",
        "bound_rhs_norm",
        "adiabatic_ratio",
        "q",
        "bound_margin",
    ],
    "trace": ["t", "tv_inst", "tv_final", "overlap0"],
    "histogram": ["state", "count"],
    "compare": ["schedule", "final_tv_inst", "final_tv_final", "ratio_to_first"],
}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def config_hash(config):
    """md5 over the canonical JSON of a config dict, used to name and tag runs."""
    md5 = hashlib.md5()
    md5.update(canonical_json(config).encode())
    return md5.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path, obj):
    with open(path, mode="w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_csv(path, schema, columns, rows):
    """
    Write rows under a '# schema: sqalab.<schema>/<version>' header line.

    Floats are written with repr so files are byte-identical across re-runs.
    """
    with open(path, mode="w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema: sqalab.{schema}/{CSV_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    """Returns (schema, columns, rows) for a file written by write_csv."""
    with open(path, mode="r", encoding="utf-8") as fh:
        schema = fh.readline().strip().removeprefix("# schema: ")
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [row for row in reader]
    return schema, columns, rows


def parse_grid(spec):
    """
    Parse a grid spec "log:t0,t1,n" or "lin:t0,t1,n" into an increasing array.
    """
    try:
        kind, _, body = spec.partition(":")
        t0, t1, n = body.split(",")
        t0, t1, n = float(t0), float(t1), int(n)
    except ValueError:
        raise ValueError(f"grid must look like 'log:t0,t1,n', got {spec!r}")

    if n < 1:
        raise ValueError("grid must have at least one point")
    if t1 < t0:
        raise ValueError("grid end must not precede grid start")

    match kind:
        case "log":
            if t0 <= 0:
                raise ValueError("log grid must start at a positive time")
            return np.geomspace(t0, t1, n)
        case "lin":
            return np.linspace(t0, t1, n)
        case _:
            raise ValueError(f"Unknown grid kind {kind!r}, expected 'log' or 'lin'")


def default_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {value!r}")
    return max(1, threads)


def check_probability_vector(p, atol=1e-9):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > atol:
        raise ValueError("not a probability vector")
    return p


class ConfigError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ResourceCapError(Exception):
    pass


class ConsistencyError(Exception):
    pass
