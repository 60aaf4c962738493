"""Watt-meter time series + scheduler records -> per-run standardized energy.

Pipeline:

1. join each job to its nodes' power samples and integrate the piecewise
   linear power curve over the job window (endpoints interpolated),
2. flag runs with 0 W readings or no overlapping samples,
3. drop runs longer than 75,000 s and log-runtime outliers (> 4 sigma) within
   (dataset, NTP, hardware class) groups,
4. subtract each node type's idle-power excess over a reference node type,
   integrated over the runtime.

Quantiles are lower nearest-rank throughout.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Iterable

import numpy as np
import yaml

from .errors import InsufficientSamples, MissingData, NoReferenceRuns, ParseError

POWER_COLUMNS = ("node_id", "timestamp_s", "watts")
JOB_COLUMNS = (
    "run_id", "node_id", "node_type", "start_s", "end_s", "dataset", "shape", "depth",
    "ntp", "hardware_class", "epochs", "train_batches", "test_batches",
)
# optional task columns carried from the jobs file into the run table
TASK_COLUMNS = ("n_features", "n_outputs", "n_train", "n_test", "batch_size", "dtype_bytes")

MAX_RUNTIME_S = 75_000.0
SIGMA_LIMIT = 4.0
IDLE_QUANTILE = 0.02
OVERHEAD_QUANTILE = 0.05
MIN_IDLE_SAMPLES = 50

ZERO_W = "zero_w"
MISSING = "missing"
LONG = "long"
SIGMA = "sigma"
NEGATIVE = "negative_energy"
FILTERS = (ZERO_W, MISSING, LONG, SIGMA)


@dataclass(frozen=True)
class PowerTrace:
    """One node's samples, sorted by time with duplicate timestamps removed."""

    node_id: str
    times: np.ndarray
    watts: np.ndarray


@dataclass(frozen=True)
class JobRecord:
    run_id: str
    node_id: str
    node_type: str
    start: float
    end: float
    dataset: str = ""
    shape: str = ""
    depth: int = 0
    ntp: int = 0
    hardware_class: str = "cpu"
    epochs: int = 0
    train_batches: int = 0
    test_batches: int = 0
    extra: tuple = ()  # (column, value) pairs passed through untouched

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"job {self.run_id}: end must be after start")


@dataclass(frozen=True)
class MeasuredRun:
    run_id: str
    raw_energy: float | None
    runtime: float
    node_type: str
    job: JobRecord
    flags: frozenset = frozenset()
    standardized_energy: float | None = None
    net_energy: float | None = None
    net_runtime: float | None = None

    @property
    def group_key(self) -> tuple:
        return (self.job.dataset, self.job.ntp, self.job.hardware_class)


@dataclass
class FilterReport:
    n_input: int = 0
    n_output: int = 0
    counts: dict = field(default_factory=lambda: dict.fromkeys(FILTERS, 0))
    skipped_groups: list = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return sum(self.counts.values())


def nearest_rank(values: Iterable[float], q: float) -> float:
    """Lower nearest-rank quantile: sorted[ceil(q N) - 1], 0-based."""
    v = np.sort(np.asarray(list(values), dtype=float))
    if v.size == 0:
        raise ValueError("quantile of an empty sample")
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    # tolerance keeps q*N that is integral in exact arithmetic from rounding up
    idx = max(math.ceil(q * v.size - 1e-9) - 1, 0)
    return float(v[idx])


# -- readers ---------------------------------------------------------------

def _open_rows(path, required):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", location=str(path)) from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], []
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing columns: {', '.join(missing)}", location=f"{path}:1")
        return list(reader), list(reader.fieldnames)


def _num(row, key, path, lineno, cast=float):
    try:
        return cast(row[key])
    except (TypeError, ValueError):
        raise ParseError(f"bad {key} value {row.get(key)!r}", location=f"{path}:{lineno}") from None


def _int(text):
    return int(float(text))


def read_power_csv(path) -> dict[str, PowerTrace]:
    rows, _ = _open_rows(path, POWER_COLUMNS)
    by_node: dict[str, dict[float, float]] = defaultdict(dict)
    for lineno, row in enumerate(rows, start=2):
        t = _num(row, "timestamp_s", path, lineno)
        w = _num(row, "watts", path, lineno)
        if w < 0 or not math.isfinite(w) or not math.isfinite(t):
            raise ParseError(f"invalid sample ({t}, {w})", location=f"{path}:{lineno}")
        by_node[row["node_id"]][t] = w  # later rows win on duplicate timestamps
    return {node: make_trace(node, s.keys(), s.values()) for node, s in by_node.items()}


def make_trace(node_id, times, watts) -> PowerTrace:
    """Sort by time; on duplicate timestamps the last sample wins."""
    dedup = dict(zip((float(t) for t in times), (float(w) for w in watts)))
    t = np.array(sorted(dedup), dtype=float)
    return PowerTrace(node_id, t, np.array([dedup[x] for x in t], dtype=float))


def read_jobs_csv(path) -> list[JobRecord]:
    rows, fields = _open_rows(path, JOB_COLUMNS)
    extras = [c for c in fields if c in TASK_COLUMNS]
    jobs = []
    for lineno, row in enumerate(rows, start=2):
        start = _num(row, "start_s", path, lineno)
        end = _num(row, "end_s", path, lineno)
        if not end > start:
            raise ParseError("end_s must be after start_s", location=f"{path}:{lineno}")
        jobs.append(
            JobRecord(
                run_id=row["run_id"],
                node_id=row["node_id"],
                node_type=row["node_type"],
                start=start,
                end=end,
                dataset=row["dataset"],
                shape=row["shape"],
                depth=_num(row, "depth", path, lineno, _int),
                ntp=_num(row, "ntp", path, lineno, _int),
                hardware_class=row["hardware_class"].strip().lower(),
                epochs=_num(row, "epochs", path, lineno, _int),
                train_batches=_num(row, "train_batches", path, lineno, _int),
                test_batches=_num(row, "test_batches", path, lineno, _int),
                extra=tuple((c, row[c]) for c in extras if row.get(c) not in (None, "")),
            )
        )
    return jobs


# -- integration -----------------------------------------------------------

def _window_bounds(times: np.ndarray, start: float, end: float) -> tuple[int, int]:
    """Index range of samples inside [start, end] plus the bracketing neighbours."""
    lo = max(int(np.searchsorted(times, start, side="right")) - 1, 0)
    hi = min(int(np.searchsorted(times, end, side="left")) + 1, times.size)
    return lo, hi


def integrate_energy(times, watts, start: float, end: float) -> float:
    """Trapezoidal integral of the piecewise-linear power curve over [start, end].

    Power at the window edges is interpolated between the bracketing samples,
    and held at the first/last sample value outside the recorded span.
    """
    times = np.asarray(times, dtype=float)
    watts = np.asarray(watts, dtype=float)
    if not end > start:
        raise ValueError("end must be after start")
    if times.size == 0 or end < times[0] or start > times[-1]:
        raise MissingData(f"no power samples overlap [{start}, {end}]")
    inner = times[(times > start) & (times < end)]
    t = np.concatenate(([start], inner, [end]))
    p = np.interp(t, times, watts)
    return float(np.trapezoid(p, t))


def measure_runs(traces: dict[str, PowerTrace], jobs: Iterable[JobRecord]) -> list[MeasuredRun]:
    """Integrate every run, summing over the nodes it used."""
    by_run: dict[str, list[JobRecord]] = defaultdict(list)
    for job in jobs:
        by_run[job.run_id].append(job)
    runs = []
    for run_id in sorted(by_run):
        parts = by_run[run_id]
        flags = set()
        energy = 0.0
        for job in parts:
            trace = traces.get(job.node_id)
            if trace is None:
                flags.add(MISSING)
                continue
            try:
                energy += integrate_energy(trace.times, trace.watts, job.start, job.end)
            except MissingData:
                flags.add(MISSING)
                continue
            lo, hi = _window_bounds(trace.times, job.start, job.end)
            if np.any(trace.watts[lo:hi] == 0):
                flags.add(ZERO_W)
        first = parts[0]
        runs.append(
            MeasuredRun(
                run_id=run_id,
                raw_energy=None if MISSING in flags else energy,
                runtime=max(j.end for j in parts) - min(j.start for j in parts),
                node_type=first.node_type,
                job=first,
                flags=frozenset(flags),
            )
        )
    return runs


# -- filters ---------------------------------------------------------------

def apply_filters(
    runs: list[MeasuredRun],
    max_runtime: float = MAX_RUNTIME_S,
    sigma_limit: float = SIGMA_LIMIT,
    group_key: Callable[[MeasuredRun], tuple] = lambda r: r.group_key,
) -> tuple[list[MeasuredRun], list[MeasuredRun], FilterReport]:
    """Returns (kept, dropped, report). Each dropped run is counted once, by
    the first filter that rejects it, in the order 0 W, missing, long, sigma."""
    report = FilterReport(n_input=len(runs))
    kept, dropped = [], []

    def drop(run, reason):
        report.counts[reason] += 1
        dropped.append(replace(run, flags=run.flags | {reason}))

    survivors = []
    for run in runs:
        if ZERO_W in run.flags:
            drop(run, ZERO_W)
        elif MISSING in run.flags:
            drop(run, MISSING)
        elif run.runtime > max_runtime:
            drop(run, LONG)
        else:
            survivors.append(run)

    groups: dict[tuple, list[MeasuredRun]] = defaultdict(list)
    for run in survivors:
        groups[group_key(run)].append(run)
    for key in sorted(groups, key=repr):
        members = groups[key]
        if len(members) < 2:
            report.skipped_groups.append(key)
            kept.extend(members)
            continue
        logs = np.log([r.runtime for r in members])
        mu, sd = logs.mean(), logs.std(ddof=1)
        for run, lr in zip(members, logs):
            if sd > 0 and abs(lr - mu) > sigma_limit * sd:
                drop(run, SIGMA)
            else:
                kept.append(run)
    kept.sort(key=lambda r: r.run_id)
    dropped.sort(key=lambda r: r.run_id)
    report.n_output = len(kept)
    return kept, dropped, report


# -- standardization -------------------------------------------------------

def bundled_node_types() -> tuple[dict[str, float], dict[str, str]]:
    """(idle watts per node type, reference node type per hardware class)."""
    text = (resources.files("mlpenergy") / "data" / "node_types.yaml").read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    return dict(doc["idle_power_w"]), dict(doc["reference"])


def idle_power(samples_by_type: dict[str, Iterable[float]], q: float = IDLE_QUANTILE,
               min_samples: int = MIN_IDLE_SAMPLES) -> dict[str, float]:
    out = {}
    for node_type, samples in samples_by_type.items():
        samples = list(samples)
        if len(samples) < min_samples:
            raise InsufficientSamples(
                f"node type {node_type}: {len(samples)} samples, need at least {min_samples}"
            )
        out[node_type] = nearest_rank(samples, q)
    return out


def standardize(run: MeasuredRun, node_idle: float, reference_idle: float) -> float:
    return run.raw_energy - (node_idle - reference_idle) * run.runtime


def standardize_runs(runs, idle: dict[str, float], reference: dict[str, str]) -> list[MeasuredRun]:
    out = []
    for run in runs:
        ref_type = reference[run.job.hardware_class]
        e = standardize(run, idle[run.node_type], idle[ref_type])
        flags = run.flags | {NEGATIVE} if e <= 0 else run.flags
        out.append(replace(run, standardized_energy=e, flags=frozenset(flags)))
    return out


def default_reference_predicate(runs: list[MeasuredRun], max_ntp: int = 2**10) -> Callable[[MeasuredRun], bool]:
    """Runs on the smallest dataset (fewest training batches per epoch) with
    NTP <= ``max_ntp``."""
    per_dataset: dict[str, list[int]] = defaultdict(list)
    for r in runs:
        per_dataset[r.job.dataset].append(r.job.train_batches)
    if not per_dataset:
        return lambda r: False
    smallest = min(per_dataset, key=lambda d: (float(np.median(per_dataset[d])), d))
    return lambda r: r.job.dataset == smallest and r.job.ntp <= max_ntp


def estimate_overheads(runs: Iterable[MeasuredRun], q: float = OVERHEAD_QUANTILE) -> tuple[float, float]:
    """(energy J, runtime s) overheads: q-quantiles over the reference runs."""
    runs = [r for r in runs if r.standardized_energy is not None]
    if not runs:
        raise NoReferenceRuns("no reference runs to estimate overheads from")
    return (
        nearest_rank([r.standardized_energy for r in runs], q),
        nearest_rank([r.runtime for r in runs], q),
    )


def subtract_overheads(runs, overheads: dict[str, tuple[float, float]]) -> list[MeasuredRun]:
    out = []
    for r in runs:
        oh = overheads.get(r.job.hardware_class)
        if oh is None or r.standardized_energy is None:
            out.append(r)
            continue
        out.append(replace(r, net_energy=r.standardized_energy - oh[0], net_runtime=r.runtime - oh[1]))
    return out


# -- run table -------------------------------------------------------------

RUN_TABLE_COLUMNS = (
    "run_id", "node_type", "dataset", "shape", "depth", "ntp", "hardware_class",
    "epochs", "train_batches", "test_batches", "runtime_s", "raw_energy_j",
    "standardized_energy_j", "net_energy_j", "net_runtime_s", "flags",
)


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def run_table_rows(runs: Iterable[MeasuredRun]) -> tuple[list[str], list[dict]]:
    runs = sorted(runs, key=lambda r: r.run_id)
    extra_cols = [c for c in TASK_COLUMNS if any(c in dict(r.job.extra) for r in runs)]
    cols = list(RUN_TABLE_COLUMNS) + extra_cols
    rows = []
    for r in runs:
        j = r.job
        row = {
            "run_id": r.run_id,
            "node_type": r.node_type,
            "dataset": j.dataset,
            "shape": j.shape,
            "depth": fmt(j.depth),
            "ntp": fmt(j.ntp),
            "hardware_class": j.hardware_class,
            "epochs": fmt(j.epochs),
            "train_batches": fmt(j.train_batches),
            "test_batches": fmt(j.test_batches),
            "runtime_s": fmt(r.runtime),
            "raw_energy_j": fmt(r.raw_energy),
            "standardized_energy_j": fmt(r.standardized_energy),
            "net_energy_j": fmt(r.net_energy),
            "net_runtime_s": fmt(r.net_runtime),
            "flags": ";".join(sorted(r.flags)),
        }
        row.update({c: dict(j.extra).get(c, "") for c in extra_cols})
        rows.append(row)
    return cols, rows


def write_run_table(runs: Iterable[MeasuredRun], fh) -> None:
    cols, rows = run_table_rows(runs)
    writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


def read_run_table(path) -> list[dict]:
    """Rows of a run table as dicts of strings, with ``_line`` set to the file line."""
    rows, _ = _open_rows(path, ("run_id", "shape", "depth", "ntp", "hardware_class", "epochs",
                                "train_batches", "test_batches", "standardized_energy_j", "flags"))
    for lineno, row in enumerate(rows, start=2):
        row["_line"] = lineno
    return rows


# -- whole pipeline --------------------------------------------------------

@dataclass
class IngestResult:
    runs: list[MeasuredRun]  # kept and dropped, sorted by run_id
    report: FilterReport
    idle: dict[str, float]
    idle_source: dict[str, str]
    overheads: dict[str, tuple[float, float]]
    notes: list[str] = field(default_factory=list)


def samples_by_node_type(traces: dict[str, PowerTrace], jobs: Iterable[JobRecord]) -> dict[str, np.ndarray]:
    node_type = {}
    for j in jobs:
        node_type.setdefault(j.node_id, j.node_type)
    pooled: dict[str, list[np.ndarray]] = defaultdict(list)
    for node, trace in traces.items():
        if node in node_type:
            pooled[node_type[node]].append(trace.watts)
    return {t: np.concatenate(v) for t, v in pooled.items()}


def run_pipeline(
    traces: dict[str, PowerTrace],
    jobs: list[JobRecord],
    reference: dict[str, str] | None = None,
    subtract: bool = False,
    reference_predicate: Callable[[MeasuredRun], bool] | None = None,
) -> IngestResult:
    """Measure, filter and standardize. ``reference`` maps hardware class to
    the node type every run of that class is standardized to."""
    table_idle, table_ref = bundled_node_types()
    reference = {**table_ref, **(reference or {})}
    notes = []

    measured = measure_runs(traces, jobs)
    kept, dropped, report = apply_filters(measured)

    idle, source = {}, {}
    pooled = samples_by_node_type(traces, jobs)
    needed = {r.node_type for r in kept} | {reference[r.job.hardware_class] for r in kept
                                            if r.job.hardware_class in reference}
    for node_type in sorted(needed):
        samples = pooled.get(node_type, ())
        if len(samples) >= MIN_IDLE_SAMPLES:
            idle[node_type] = idle_power({node_type: samples})[node_type]
            source[node_type] = "measured"
        elif node_type in table_idle:
            idle[node_type] = float(table_idle[node_type])
            source[node_type] = "table"
            notes.append(f"idle power for {node_type}: {len(samples)} samples, using table value")
        else:
            raise InsufficientSamples(
                f"node type {node_type}: {len(samples)} samples and no table value"
            )
    for hw_class in sorted({r.job.hardware_class for r in kept}):
        if hw_class not in reference:
            raise NoReferenceRuns(f"no reference node type for hardware class {hw_class!r}")
    kept = standardize_runs(kept, idle, reference)

    overheads = {}
    predicate = reference_predicate or default_reference_predicate(kept)
    for hw_class in sorted({r.job.hardware_class for r in kept}):
        subset = [r for r in kept if r.job.hardware_class == hw_class and predicate(r)]
        try:
            overheads[hw_class] = estimate_overheads(subset)
        except NoReferenceRuns:
            if subtract:
                raise NoReferenceRuns(f"no reference runs for {hw_class} overheads") from None
            notes.append(f"no reference runs for {hw_class}; overheads not estimated")
    if subtract:
        kept = subtract_overheads(kept, overheads)

    runs = sorted(kept + dropped, key=lambda r: r.run_id)
    return IngestResult(runs=runs, report=report, idle=idle, idle_source=source,
                        overheads=overheads, notes=notes)
