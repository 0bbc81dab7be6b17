"""JSON documents, the seed store and CSV export.

Floats are written with ``repr`` (shortest string that round-trips), so a
document read back and written again is byte-identical. Non-finite numbers
are stored as ``null``.
"""

import csv
import hashlib
import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .baselines import Schedule, perfect_transfer_time, stepwise_time
from .chain import ChainSpec
from .errors import ChecksumError, SchemaError
from .oracle import OracleReport
from .solver import ShootingParams, Solution

FORMAT_VERSION = 1
SEED_STORE_ENV = "BRACHISTOCHRONE_SEED_STORE"
SEED_FIDELITY = 1 - 1e-8

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX
    fcntl = None


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(doc):
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _field(doc, name, kind=None, where="document"):
    if not isinstance(doc, dict) or name not in doc:
        raise SchemaError(f"{where}: missing field '{name}'")
    value = doc[name]
    if kind is float:
        if value is None:
            return float("nan")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: field '{name}' must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: field '{name}' must be an integer")
        return value
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{where}: field '{name}' must be of type {kind.__name__}")
    return value


def _floats(doc, name, where):
    seq = _field(doc, name, list, where)
    out = []
    for i, v in enumerate(seq):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}: field '{name}[{i}]' must be a number")
        out.append(float(v))
    return np.array(out)


def _check_header(doc, kind):
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    version = _field(doc, "format_version", int)
    if version != FORMAT_VERSION:
        raise SchemaError(f"field 'format_version': unsupported version {version}")
    got = _field(doc, "kind", str)
    if kind is not None and got != kind:
        raise SchemaError(f"field 'kind': expected '{kind}', got '{got}'")
    return got


# -- solutions -------------------------------------------------------------

def solution_to_dict(sol):
    meta = {k: v for k, v in sol.metadata.items()
            if k not in ("method", "iterations", "converged")}
    return {
        "format_version": FORMAT_VERSION,
        "kind": "solution",
        "n_sites": sol.spec.n_sites,
        "j0": _num(sol.spec.j0),
        "tau": _num(sol.tau),
        "tau_j0": _num(sol.params.j1_initial),
        "multipliers": _jsonable(sol.multipliers),
        "fidelity": _num(sol.fidelity),
        "residual_norm": _num(sol.residual_norm),
        "converged": sol.converged,
        "method": sol.method,
        "iterations": int(sol.metadata.get("iterations", 0)),
        "metadata": _jsonable(meta),
    }


def solution_from_dict(doc):
    _check_header(doc, "solution")
    w = "solution"
    N = _field(doc, "n_sites", int, w)
    j0 = _field(doc, "j0", float, w)
    try:
        spec = ChainSpec(N, j0)
    except ValueError as exc:
        raise SchemaError(f"{w}: fields 'n_sites'/'j0': {exc}") from exc
    tau_j0 = _field(doc, "tau_j0", float, w)
    lam = _floats(doc, "multipliers", w)
    if lam.shape[0] != N - 2:
        raise SchemaError(f"{w}: field 'multipliers' must have {N - 2} entries")
    if not tau_j0 > 0:
        raise SchemaError(f"{w}: field 'tau_j0' must be positive")
    converged = _field(doc, "converged", bool, w)
    fidelity = _field(doc, "fidelity", float, w)
    tau = _field(doc, "tau", float, w)
    if converged:
        if not -1e-12 <= fidelity <= 1 + 1e-12:
            raise SchemaError(f"{w}: field 'fidelity' outside [0, 1]")
        if abs(tau * j0 - tau_j0) > 1e-12 * tau_j0:
            raise SchemaError(f"{w}: field 'tau' inconsistent with 'tau_j0' and 'j0'")
    meta = dict(_field(doc, "metadata", dict, w))
    meta.update(method=_field(doc, "method", str, w),
                iterations=_field(doc, "iterations", int, w),
                converged=converged)
    params = ShootingParams.from_normalized(tau_j0, lam)
    return Solution(spec, params, tau, fidelity, _field(doc, "residual_norm", float, w),
                    None, meta)


# -- schedules and reports ---------------------------------------------------

def schedule_to_dict(schedule):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "schedule",
        "n_sites": schedule.spec.n_sites,
        "j0": _num(schedule.spec.j0),
        "label": schedule.label,
        "segments": [{"duration": _num(d), "couplings": _jsonable(J)}
                     for d, J in schedule.segments],
    }


def schedule_from_dict(doc):
    _check_header(doc, "schedule")
    w = "schedule"
    try:
        spec = ChainSpec(_field(doc, "n_sites", int, w), _field(doc, "j0", float, w))
    except ValueError as exc:
        raise SchemaError(f"{w}: fields 'n_sites'/'j0': {exc}") from exc
    label = _field(doc, "label", str, w)
    segs = []
    for i, seg in enumerate(_field(doc, "segments", list, w)):
        where = f"{w}: segments[{i}]"
        segs.append((_field(seg, "duration", float, where), _floats(seg, "couplings", where)))
    try:
        return Schedule(tuple(segs), spec, label)
    except ValueError as exc:
        raise SchemaError(f"{w}: field 'segments': {exc}") from exc


def oracle_report_to_dict(report):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "oracle_report",
        "name": report.name,
        "max_abs_deviation": _num(report.max_abs_deviation),
        "threshold": _num(report.threshold),
        "cases_run": int(report.cases_run),
        "passed": report.passed,
        "worst_case_input": _jsonable(report.worst_case_input),
    }


def oracle_report_from_dict(doc):
    _check_header(doc, "oracle_report")
    w = "oracle_report"
    return OracleReport(_field(doc, "name", str, w), _field(doc, "max_abs_deviation", float, w),
                        _field(doc, "cases_run", int, w), _field(doc, "threshold", float, w),
                        dict(_field(doc, "worst_case_input", dict, w)))


_WRITERS = {Solution: solution_to_dict, Schedule: schedule_to_dict,
            OracleReport: oracle_report_to_dict}
_READERS = {"solution": solution_from_dict, "schedule": schedule_from_dict,
            "oracle_report": oracle_report_from_dict}


def to_json(obj):
    try:
        return dumps(_WRITERS[type(obj)](obj))
    except KeyError:
        raise TypeError(f"cannot serialise {type(obj).__name__}") from None


def from_json(text, kind=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    got = _check_header(doc, kind)
    if got not in _READERS:
        raise SchemaError(f"field 'kind': unknown document kind '{got}'")
    return _READERS[got](doc)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path, obj):
    _atomic_write(path, to_json(obj))


def read_json(path, kind=None):
    return from_json(Path(path).read_text(encoding="utf-8"), kind)


# -- seed store ----------------------------------------------------------------

def _checksum(entry):
    body = {k: v for k, v in entry.items() if k != "checksum"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SeedEntry:
    n_sites: int
    tau_j0: float
    multipliers: tuple
    fidelity: float
    method: str
    iterations: int

    @property
    def params(self):
        return ShootingParams.from_normalized(self.tau_j0, self.multipliers)

    def to_dict(self):
        d = {"n_sites": self.n_sites, "tau_j0": self.tau_j0,
             "multipliers": list(self.multipliers), "fidelity": self.fidelity,
             "method": self.method, "iterations": self.iterations}
        d["checksum"] = _checksum(d)
        return d

    @classmethod
    def from_dict(cls, d, key):
        w = f"seed store entry {key}"
        if _field(d, "checksum", str, w) != _checksum(d):
            raise ChecksumError(f"{w}: checksum mismatch")
        entry = cls(_field(d, "n_sites", int, w), _field(d, "tau_j0", float, w),
                    tuple(_floats(d, "multipliers", w).tolist()), _field(d, "fidelity", float, w),
                    _field(d, "method", str, w), _field(d, "iterations", int, w))
        if str(entry.n_sites) != key:
            raise SchemaError(f"{w}: field 'n_sites' does not match its key")
        if len(entry.multipliers) != entry.n_sites - 2:
            raise SchemaError(f"{w}: field 'multipliers' must have {entry.n_sites - 2} entries")
        if not entry.tau_j0 > 0:
            raise SchemaError(f"{w}: field 'tau_j0' must be positive")
        if not 0 <= entry.fidelity <= 1 + 1e-12:
            raise SchemaError(f"{w}: field 'fidelity' outside [0, 1]")
        if entry.multipliers and entry.multipliers[0] > 0:
            raise SchemaError(f"{w}: field 'multipliers' is not sign-canonical")
        return entry


@contextmanager
def _locked(path):
    if fcntl is None:
        yield
        return
    lock = Path(str(path) + ".lock")
    lock.parent.mkdir(parents=True, exist_ok=True)
    with open(lock, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class SeedStore:
    """Canonical converged solutions keyed by chain length, one per ``N``."""

    def __init__(self, entries=None, path=None):
        self.entries = dict(entries or {})
        self.path = None if path is None else Path(path)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, n):
        return int(n) in self.entries

    def get(self, n):
        return self.entries.get(int(n))

    def seeds(self):
        """Starting points for :func:`~brachistochrone.solver.sweep`."""
        return {n: e.params for n, e in sorted(self.entries.items())}

    def put(self, sol, min_fidelity=SEED_FIDELITY):
        """Record ``sol`` if it converged with fidelity at least ``min_fidelity``.

        An existing entry with a shorter time is kept. Returns whether the
        store changed.
        """
        if not sol.converged or not sol.fidelity >= min_fidelity:
            return False
        N = sol.spec.n_sites
        old = self.entries.get(N)
        tau_j0 = float(sol.params.j1_initial)
        if old is not None and old.tau_j0 < tau_j0 * (1 - 1e-9):
            return False
        self.entries[N] = SeedEntry(N, tau_j0, tuple(float(v) for v in sol.multipliers),
                                    float(sol.fidelity), sol.method,
                                    int(sol.metadata.get("iterations", 0)))
        return True

    def to_text(self):
        doc = {"format_version": FORMAT_VERSION, "kind": "seed_store",
               "entries": {str(n): e.to_dict() for n, e in sorted(self.entries.items())}}
        return dumps(doc)

    @classmethod
    def from_text(cls, text, path=None):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"seed store: invalid JSON: {exc}") from exc
        _check_header(doc, "seed_store")
        raw = _field(doc, "entries", dict, "seed store")
        entries = {}
        for key, d in raw.items():
            e = SeedEntry.from_dict(d, key)
            entries[e.n_sites] = e
        return cls(entries, path)

    @classmethod
    def load(cls, path, missing_ok=True):
        path = Path(path)
        if not path.exists():
            if missing_ok:
                return cls(path=path)
            raise FileNotFoundError(path)
        return cls.from_text(path.read_text(encoding="utf-8"), path)

    def save(self, path=None):
        path = Path(path or self.path)
        with _locked(path):
            _atomic_write(path, self.to_text())
        self.path = path

    def merge_save(self, path=None):
        """Re-read the file under the lock, fold in this store's entries, and write."""
        path = Path(path or self.path)
        with _locked(path):
            disk = SeedStore.load(path)
            for n, e in self.entries.items():
                old = disk.entries.get(n)
                if old is None or e.tau_j0 <= old.tau_j0 * (1 + 1e-9):
                    disk.entries[n] = e
            _atomic_write(path, disk.to_text())
        self.entries = disk.entries
        self.path = path


def bundled_seed_store():
    """The seed store shipped with the package (N = 3..10)."""
    text = resources.files("brachistochrone").joinpath("data/seeds.json").read_text("utf-8")
    return SeedStore.from_text(text)


def default_seed_store_path():
    value = os.environ.get(SEED_STORE_ENV)
    return Path(value) if value else None


# -- CSV -----------------------------------------------------------------------

def _csv_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_value(v) for v in row])


def write_trajectory_csv(path, times, couplings, probabilities):
    """Columns ``t, J_1..J_{N-1}, p_1..p_N, x`` with 1-based mean position ``x``."""
    times = np.asarray(times, dtype=float)
    J = np.asarray(couplings, dtype=float)
    P = np.asarray(probabilities, dtype=float)
    N = P.shape[1]
    x = P @ np.arange(1, N + 1) / P.sum(axis=1)
    header = (["t"] + [f"J_{m}" for m in range(1, N)] + [f"p_{n}" for n in range(1, N + 1)]
              + ["x"])
    rows = (np.concatenate([[t], j, p, [xi]]) for t, j, p, xi in zip(times, J, P, x))
    _write_csv(path, header, ([float(v) for v in r] for r in rows))


SWEEP_COLUMNS = ["N", "j0", "tau", "tau_j0", "fidelity", "residual_norm", "method",
                 "iterations", "converged", "tau_st", "tau_p", "ratio_st", "ratio_p"]


def sweep_rows(solutions):
    for s in solutions:
        t_st, t_p = stepwise_time(s.spec), perfect_transfer_time(s.spec)
        yield [s.spec.n_sites, float(s.spec.j0), float(s.tau), float(s.params.j1_initial),
               float(s.fidelity), float(s.residual_norm), s.method,
               int(s.metadata.get("iterations", 0)), s.converged, float(t_st), float(t_p),
               float(t_st / s.tau), float(t_p / s.tau)]


def write_sweep_csv(path, solutions):
    _write_csv(path, SWEEP_COLUMNS, sweep_rows(solutions))


def read_sweep_points(path):
    """``(N, tau * J0)`` pairs from converged rows of a sweep CSV."""
    points = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.DictReader(fh)):
                try:
                    if row["converged"] == "true":
                        points.append((int(row["N"]), float(row["tau_j0"])))
                except (KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"sweep CSV row {i + 1}: bad or missing field ({exc})")
    except UnicodeDecodeError as exc:
        raise SchemaError(f"sweep CSV is not text: {exc}") from exc
    return points
