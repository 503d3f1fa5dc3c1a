"""Reading and writing datasets, chains, summaries and run manifests.

Floats are written with 17 significant digits so that reruns diff clean.
"""
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .model import SurvivalDataset
from .sampler import ChainOutput


class DataValidationError(ValueError):
    pass


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataValidationError(f"{path}: empty file")
    return rows[0], rows[1:]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_dataset(path, short_followup=False):
    """Read a ``time,event,x_*,z_*`` CSV into a :class:`SurvivalDataset`.

    With ``short_followup`` the cure and latency designs may not share a
    covariate, by name or by identical values.
    """
    header, rows = read_csv(path)
    header = [h.strip() for h in header]
    for col in ("time", "event"):
        if col not in header:
            raise DataValidationError(f"{path}: missing column {col!r}")
    x_cols = [h for h in header if h.startswith("x_")]
    z_cols = [h for h in header if h.startswith("z_")]
    unknown = [h for h in header if h not in ("time", "event") and h not in x_cols + z_cols]
    if unknown:
        raise DataValidationError(f"{path}: unexpected columns {unknown}")
    idx = {h: i for i, h in enumerate(header)}
    values = np.empty((len(rows), len(header)))
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataValidationError(f"{path}: row {r} has {len(row)} fields")
        try:
            values[r - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise DataValidationError(f"{path}: row {r}: {exc}") from None
    events = values[:, idx["event"]]
    bad = np.flatnonzero((events != 0) & (events != 1))
    if bad.size:
        raise DataValidationError(
            f"{path}: row {bad[0] + 2}: event must be 0 or 1, got {events[bad[0]]:g}")
    X = values[:, [idx[c] for c in x_cols]]
    Z = values[:, [idx[c] for c in z_cols]]
    x_names = [c[2:] for c in x_cols]
    z_names = [c[2:] for c in z_cols]
    if short_followup:
        shared = sorted(set(x_names) & set(z_names))
        for i, xn in enumerate(x_names):
            for j, zn in enumerate(z_names):
                if xn != zn and np.array_equal(X[:, i], Z[:, j]):
                    shared.append(f"{xn}/{zn}")
        if shared:
            raise DataValidationError(
                f"{path}: cure and latency covariates must be disjoint under short "
                f"follow up; shared: {shared}")
    try:
        return SurvivalDataset(values[:, idx["time"]], events, X, Z, x_names, z_names)
    except ValueError as exc:
        raise DataValidationError(f"{path}: {exc}") from None


def write_dataset(path, data, extra=None):
    """Write a dataset in the format read by :func:`parse_dataset`.

    ``extra`` maps additional column names to arrays appended at the right.
    """
    extra = extra or {}
    header = (["time", "event"] + [f"x_{v}" for v in data.x_names]
              + [f"z_{v}" for v in data.z_names] + list(extra))
    cols = [data.times, data.events.astype(int)] + list(data.X.T) + list(data.Z.T) \
        + [np.asarray(v) for v in extra.values()]
    write_csv(path, header, zip(*cols))


def write_draws(path, chain):
    write_csv(path, chain.names, chain.draws)


def read_draws(path):
    """Rebuild a :class:`ChainOutput` (draws and names only) from ``draws.csv``."""
    header, rows = read_csv(path)
    draws = np.array([[float(v) for v in row] for row in rows])
    K = sum(1 for h in header if h.startswith("phi_"))
    x_names = [h[5:] for h in header if h.startswith("beta_")]
    z_names = [h[6:] for h in header if h.startswith("gamma_")]
    expected = ([f"phi_{k + 1}" for k in range(K)] + ["beta0"]
                + [f"beta_{v}" for v in x_names] + [f"gamma_{v}" for v in z_names]
                + ["tau", "delta"])
    if header != expected:
        raise DataValidationError(f"{path}: unexpected draws header")
    return ChainOutput(draws, header, {}, {}, None, K, x_names, z_names)


SUMMARY_COLUMNS = ["parameter", "median", "hpd95_low", "hpd95_high", "sd"]


def write_summary(out_dir, summaries):
    out_dir = Path(out_dir)
    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS,
              [(s.name, s.median, s.hpd_low, s.hpd_high, s.sd) for s in summaries])
    doc = {s.name: {"median": s.median, "hpd95": [s.hpd_low, s.hpd_high], "sd": s.sd}
           for s in summaries}
    write_json(out_dir / "summary.json", doc)


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_curve(path, band):
    write_csv(path, ["time", "median", "lower", "upper"],
              zip(band.times, band.median, band.lower, band.upper))


def parse_scenario(path):
    """Read a ``key = value`` scenario file; lists are comma separated."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, value = (s.strip() for s in line.split(sep, 1))
                    break
            else:
                raise DataValidationError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = _scenario_value(key, value)
    return out


_INT_KEYS = {"n", "replicates", "cure_pct", "setting", "seed"}
_LIST_KEYS = {"beta", "gamma"}


def _scenario_value(key, value):
    try:
        if key in _LIST_KEYS:
            return [float(v) for v in value.split(",") if v.strip()]
        if key in _INT_KEYS:
            return int(value)
        return float(value)
    except ValueError:
        raise DataValidationError(f"bad value for {key}: {value!r}") from None


def write_scenario(path, scenario):
    with open(path, "w") as fh:
        for key, value in scenario.items():
            if value is None:
                continue
            if isinstance(value, (list, tuple)):
                value = ", ".join(fmt(float(v)) for v in value)
            else:
                value = fmt(value)
            fh.write(f"{key} = {value}\n")
