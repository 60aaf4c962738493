"""Command-line entry point.

Exit codes: 0 success, 2 unreadable or malformed input, 3 inconsistent
configuration, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .advisor import EpochModel, fit_epoch_model, isoloss_energy, recommend_ntp
from .arch import NetworkArchitecture, ShapeFamily, TaskSpec, count_parameters, solve_widths
from .energy_model import (
    RunCounts,
    coefficient_names,
    energy_breakdown,
    model_run,
)
from .errors import ConfigMismatch, InvalidMeasurement, MLPEnergyError, ParseError
from .fitting import FitConfig, FitProblem, error_metrics, fit, holdout_split
from .ingest import (
    TASK_COLUMNS,
    read_jobs_csv,
    read_power_csv,
    read_run_table,
    run_pipeline,
    write_run_table,
)
from .specfiles import check_compatible, dump_coefficients, load_coefficients, load_hardware
from .worksets import fmt_bytes

log = logging.getLogger("mlpenergy")

TASK_KEYS = {
    "features": "n_features", "n_features": "n_features",
    "outputs": "n_outputs", "n_outputs": "n_outputs",
    "train": "n_train", "n_train": "n_train",
    "test": "n_test", "n_test": "n_test",
    "batch": "batch_size", "batch_size": "batch_size",
    "dtype": "dtype_bytes", "dtype_bytes": "dtype_bytes",
}


def fmt_num(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(f"{float(x):.9g}")
    return x


def _cell(x) -> str:
    x = fmt_num(x)
    if isinstance(x, float):
        return f"{x:.9g}"
    return "" if x is None else str(x)


def emit(records: list[dict], fmt: str, out) -> None:
    if fmt == "json-lines":
        for rec in records:
            out.write(json.dumps({k: fmt_num(v) for k, v in rec.items()}) + "\n")
        return
    if not records:
        return
    cols = list(records[0])
    for rec in records[1:]:
        cols += [k for k in rec if k not in cols]
    cells = [[_cell(rec.get(c)) for c in cols] for rec in records]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    out.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")


# -- argument helpers ------------------------------------------------------

def parse_task(text: str) -> TaskSpec:
    """``features=16,outputs=1,train=1000,test=200[,batch=256,dtype=4]`` or a YAML file."""
    path = Path(text)
    if "=" not in text and path.exists():
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ParseError(str(exc), location=str(path)) from None
        items = (doc or {}).items()
        where = str(path)
    elif "=" in text:
        items = [part.split("=", 1) for part in text.split(",") if part.strip()]
        where = "--task"
    else:
        raise ParseError(f"task file not found: {text}", location="--task")
    kw = {}
    for key, value in items:
        key = str(key).strip()
        if key not in TASK_KEYS:
            raise ParseError(f"unknown task key {key!r}", location=where)
        try:
            kw[TASK_KEYS[key]] = int(str(value).strip())
        except ValueError:
            raise ParseError(f"task key {key!r} needs an integer, got {value!r}", location=where) from None
    try:
        return TaskSpec(**kw)
    except TypeError as exc:
        raise ParseError(f"incomplete task: {exc}", location=where) from None
    except ValueError as exc:
        raise ParseError(str(exc), location=where) from None


def parse_arch(text: str, residual: bool = False) -> NetworkArchitecture:
    """``IN:W1,W2,...,OUT``."""
    try:
        head, tail = text.split(":", 1)
        return NetworkArchitecture(int(head), tuple(int(w) for w in tail.split(",")), residual)
    except ValueError:
        raise ParseError(f"bad --arch {text!r}; expected IN:W1,W2,...,OUT", location="--arch") from None


def resolve_arch(args, task: TaskSpec) -> NetworkArchitecture:
    if args.arch:
        arch = parse_arch(args.arch)
        if arch.input_width != task.n_features or arch.layer_widths[-1] != task.n_outputs:
            raise ConfigMismatch(
                f"architecture {args.arch} does not match task ({task.n_features} features, "
                f"{task.n_outputs} outputs)"
            )
        return arch
    if args.shape is None or args.depth is None or args.ntp is None:
        raise ParseError("give --arch or all of --shape, --depth, --ntp", location="arguments")
    return solve_widths(ShapeFamily.parse(args.shape), args.depth, args.ntp, task)


def _add_arch_args(p):
    p.add_argument("--arch", help="explicit widths IN:W1,...,OUT")
    p.add_argument("--shape", help="shape family, e.g. rectangle or wide_first_4x")
    p.add_argument("--depth", type=int)
    p.add_argument("--ntp", type=int, help="target number of trainable parameters")


def _add_format(p):
    p.add_argument("--format", choices=("table", "json-lines"), default="table")


# -- commands --------------------------------------------------------------

def cmd_worksets(args, out):
    task = parse_task(args.task)
    hw = load_hardware(args.hardware)
    arch = resolve_arch(args, task)
    run = model_run(arch, task, hw, mode=args.placement)
    ws, pl = run.ws, run.placement
    lab = hw.labels
    records = [
        {"set": "d", "bytes": ws.s_d, "size": fmt_bytes(ws.s_d), "level": lab[pl.c_d]},
        {"set": "f", "bytes": ws.s_f, "size": fmt_bytes(ws.s_f), "level": lab[pl.c_f]},
        {"set": "f'", "bytes": ws.s_f_prime, "size": fmt_bytes(ws.s_f_prime), "level": lab[pl.c_f_prime]},
        {"set": "b", "bytes": ws.s_b, "size": fmt_bytes(ws.s_b), "level": lab[pl.c_b]},
        {"set": "t_max", "bytes": ws.s_t_max, "size": fmt_bytes(ws.s_t_max), "level": lab[pl.c_t_max]},
    ]
    ordering = (
        f"c_t={lab[pl.c_t_max]} <= c_f'={lab[pl.c_f_prime]} <= c_f={lab[pl.c_f]} "
        f"= c_b={lab[pl.c_b]} <= c_d={lab[pl.c_d]}"
    )
    if args.format == "json-lines":
        emit(records, "json-lines", out)
        emit([{"ordering": ordering, "holds": pl.ordering_holds(), "ntp": count_parameters(arch),
               "widths": list(arch.layer_widths)}], "json-lines", out)
    else:
        out.write(f"network: {arch.input_width} -> {list(arch.layer_widths)}  NTP={count_parameters(arch)}\n")
        emit(records, "table", out)
        out.write(f"ordering: {ordering}\n")
    return 0


def cmd_predict(args, out):
    task = parse_task(args.task)
    hw = load_hardware(args.hardware)
    coeffs, _ = load_coefficients(args.coeffs)
    check_compatible(coeffs, hw)
    arch = resolve_arch(args, task)
    counts = RunCounts(
        n=args.epochs,
        h_t=args.train_batches if args.train_batches is not None else task.train_batches,
        h_s=args.test_batches if args.test_batches is not None else task.test_batches,
    )
    run = model_run(arch, task, hw, counts, mode=args.placement)
    total = run.energy(coeffs)
    parts = energy_breakdown(run.design_row(coeffs.n_levels), coeffs)
    records = [{"term": k, "energy_j": v} for k, v in parts.items()]
    records.append({"term": "total", "energy_j": total})
    emit(records, args.format, out)
    return 0


def _reference_map(values) -> dict[str, str]:
    ref = {}
    for v in values or ():
        if "=" in v:
            cls, node_type = v.split("=", 1)
            ref[cls.strip().lower()] = node_type.strip()
        else:
            cls = "gpu" if v.lower().startswith("gpu") else "cpu"
            ref[cls] = v.strip()
    return ref


def cmd_ingest(args, out):
    traces = read_power_csv(args.power)
    jobs = read_jobs_csv(args.jobs)
    result = run_pipeline(traces, jobs, _reference_map(args.reference_node_type), subtract=args.subtract_overheads)
    buf = io.StringIO()
    write_run_table(result.runs, buf)
    report = [{"filter": k, "dropped": v} for k, v in result.report.counts.items()]
    report.append({"filter": "total", "dropped": result.report.n_dropped})
    report.append({"filter": "retained", "dropped": result.report.n_output})
    extra = [{"node_type": t, "idle_w": w, "source": result.idle_source[t]} for t, w in sorted(result.idle.items())]
    extra += [{"hardware_class": c, "overhead_energy_j": e, "overhead_runtime_s": s}
              for c, (e, s) in sorted(result.overheads.items())]
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        report_out = out
    else:
        out.write(buf.getvalue())
        report_out = sys.stderr
    emit(report, args.format, report_out)
    if extra:
        for rec in extra:
            emit([rec], args.format, report_out)
    for note in result.notes:
        report_out.write(f"note: {note}\n")
    return 0


def _read_tasks(path) -> dict[str, TaskSpec]:
    tasks = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", location=str(path)) from None
    with fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                kw = {c: int(row[c]) for c in TASK_COLUMNS if row.get(c) not in (None, "")}
                tasks[row["dataset"]] = TaskSpec(**kw)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad task row: {exc}", location=f"{path}:{lineno}") from None
    return tasks


def _row_task(row, tasks, where) -> TaskSpec:
    inline = {c: row.get(c) for c in TASK_COLUMNS if row.get(c) not in (None, "")}
    if {"n_features", "n_outputs", "n_train", "n_test"} <= inline.keys():
        try:
            return TaskSpec(**{k: int(float(v)) for k, v in inline.items()})
        except ValueError as exc:
            raise ParseError(str(exc), location=where) from None
    if row.get("dataset") in tasks:
        return tasks[row["dataset"]]
    raise ConfigMismatch(f"{where}: no task dimensions for dataset {row.get('dataset')!r}; pass --tasks")


def build_fit_rows(rows, hw, tasks, energy_column="standardized_energy_j"):
    """(run_ids, design rows, measured energies) for unflagged runs of hw's class."""
    ids, X, E = [], [], []
    for row in rows:
        if row.get("flags"):
            continue
        if row["hardware_class"].strip().lower() != hw.hardware_class:
            continue
        where = f"runs:{row['_line']}"
        try:
            energy = float(row[energy_column])
            depth, ntp = int(float(row["depth"])), int(float(row["ntp"]))
            counts = RunCounts(int(float(row["epochs"])), int(float(row["train_batches"])),
                               int(float(row["test_batches"])))
            shape = ShapeFamily.parse(row["shape"])
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad run row: {exc}", location=where) from None
        if not energy > 0:
            raise InvalidMeasurement(f"run {row['run_id']}: measured energy {energy} is not positive",
                                     run_id=row["run_id"])
        task = _row_task(row, tasks, where)
        arch = solve_widths(shape, depth, ntp, task)
        ids.append(row["run_id"])
        X.append(model_run(arch, task, hw, counts).design_row(len(hw.levels)))
        E.append(energy)
    return ids, np.array(X).reshape(len(X), 4 + 2 * len(hw.levels)), np.array(E)


def cmd_fit(args, out):
    hw = load_hardware(args.hardware)
    rows = read_run_table(args.runs)
    tasks = _read_tasks(args.tasks) if args.tasks else {}
    ids, X, E = build_fit_rows(rows, hw, tasks)
    if not ids:
        raise ConfigMismatch(f"no usable {hw.hardware_class} runs in {args.runs}")
    train, hold = holdout_split(len(ids), args.holdout or 0.0, seed=args.seed)
    problem = FitProblem(X[train], E[train], hw.labels, run_ids=tuple(ids[i] for i in train))
    result = fit(problem, FitConfig(seed=args.seed))
    coeff_text = dump_coefficients(result.coefficients, hw.hardware_class)
    if args.out:
        Path(args.out).write_text(coeff_text, encoding="utf-8")

    pred = X @ result.coefficients.as_vector()
    summary = [{"split": "train", "runs": len(train), "mean_abs_rel_error": result.mean_abs_rel_error,
                "rms_log_ratio": result.rms_log_ratio, "converged": result.converged,
                "iterations": result.iterations}]
    if len(hold):
        mare, rms = error_metrics(pred[hold], E[hold])
        summary.append({"split": "holdout", "runs": len(hold), "mean_abs_rel_error": mare,
                        "rms_log_ratio": rms})
    emit(summary, args.format, out)
    emit([{"coefficient": n, "value": v} for n, v in
          zip(coefficient_names(hw.labels), result.coefficients.as_vector())], args.format, out)
    if args.residuals:
        split = np.full(len(ids), "train", dtype=object)
        split[hold] = "holdout"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run_id", "split", "measured_j", "predicted_j", "ratio"])
        for i in np.argsort(np.array(ids, dtype=object), kind="stable"):
            w.writerow([ids[i], split[i], _cell(E[i]), _cell(pred[i]), _cell(pred[i] / E[i])])
        Path(args.residuals).write_text(buf.getvalue(), encoding="utf-8")
    if not args.out:
        out.write(coeff_text)
    return 0


def _read_epoch_table(path) -> EpochModel:
    ntps, epochs = [], []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", location=str(path)) from None
    with fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                ntps.append(float(row["ntp"]))
                epochs.append(float(row["epoch"]))
            except (KeyError, TypeError, ValueError):
                raise ParseError("expected columns ntp,epoch", location=f"{path}:{lineno}") from None
    return fit_epoch_model(ntps, epochs)


def _isoloss_points(runs_path, loss_path, shape, depth, hw_class):
    runs = {}
    for row in read_run_table(runs_path):
        if row.get("flags") or row["hardware_class"].strip().lower() != hw_class:
            continue
        if ShapeFamily.parse(row["shape"]) != shape or int(float(row["depth"])) != depth:
            continue
        energy = row.get("net_energy_j") or row["standardized_energy_j"]
        runs[row["run_id"]] = (int(float(row["ntp"])), float(energy), int(float(row["epochs"])))
    curves = defaultdict(list)
    try:
        fh = open(loss_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", location=str(loss_path)) from None
    with fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rid, epoch, loss = row["run_id"], int(float(row["epoch"])), float(row["test_loss"])
            except (KeyError, TypeError, ValueError):
                raise ParseError("expected columns run_id,epoch,test_loss",
                                 location=f"{loss_path}:{lineno}") from None
            if rid in runs:
                ntp, energy, n = runs[rid]
                curves[rid].append((ntp, loss, energy * epoch / n))
    return curves


def cmd_advise(args, out):
    task = parse_task(args.task)
    hw = load_hardware(args.hardware)
    coeffs, _ = load_coefficients(args.coeffs)
    check_compatible(coeffs, hw)
    shape = ShapeFamily.parse(args.shape)
    epoch_model = _read_epoch_table(args.epoch_table) if args.epoch_table else None
    iso = None
    if args.loss_table:
        if args.runs is None or args.target_loss is None:
            raise ParseError("--loss-table needs --runs and --target-loss", location="arguments")
        curves = _isoloss_points(args.runs, args.loss_table, shape, args.depth, hw.hardware_class)
        per_ntp = defaultdict(list)
        for points in curves.values():
            for ntp, e in isoloss_energy(points, args.target_loss):
                per_ntp[ntp].append(e)
        iso = [{"ntp": ntp, "isoloss_energy_j": float(np.median(v)), "runs": len(v)}
               for ntp, v in sorted(per_ntp.items())]

    recs, note = recommend_ntp(task, shape, args.depth, hw, coeffs, epoch_model)
    records = [
        {
            "rank": i + 1,
            "ntp": r.ntp,
            "anchor_set": r.anchor_set,
            "anchor_level": r.anchor_level,
            "fill_ratio": r.fill_ratio,
            "energy_per_datum_j": r.energy_per_datum,
            "energy_to_loss_j": r.energy_to_loss,
            "rationale": r.rationale,
        }
        for i, r in enumerate(recs)
    ]
    emit(records, args.format, out)
    if note:
        out.write(f"note: {note}\n")
    if iso is not None:
        if iso:
            emit(iso, args.format, out)
        else:
            out.write(f"note: no NTP reaches test loss {args.target_loss:.9g}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlpenergy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("worksets", help="working-set sizes and memory placement")
    _add_arch_args(p)
    p.add_argument("--task", required=True)
    p.add_argument("--hardware", required=True, help="hardware YAML or bundled name (cpu1, gpu1, ...)")
    p.add_argument("--placement", choices=("whole-set", "per-layer"), default="whole-set")
    _add_format(p)
    p.set_defaults(func=cmd_worksets)

    p = sub.add_parser("predict", help="modeled energy of one training run")
    _add_arch_args(p)
    p.add_argument("--task", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--coeffs", required=True, help="coefficient YAML or bundled name (cpu-coeffs, gpu-coeffs)")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--train-batches", type=int)
    p.add_argument("--test-batches", type=int)
    p.add_argument("--placement", choices=("whole-set", "per-layer"), default="whole-set")
    _add_format(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ingest", help="power + job records -> run table")
    p.add_argument("--power", required=True)
    p.add_argument("--jobs", required=True)
    p.add_argument("--reference-node-type", action="append",
                   help="NAME or CLASS=NAME; repeatable (defaults cpu=cpu1, gpu=gpu1)")
    p.add_argument("--subtract-overheads", action="store_true")
    p.add_argument("--out", help="run table path (default stdout, report then goes to stderr)")
    _add_format(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit energy coefficients to a run table")
    p.add_argument("--runs", required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--tasks", help="CSV of dataset,n_features,n_outputs,n_train,n_test[,batch_size,dtype_bytes]")
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="coefficient YAML to write (default stdout)")
    p.add_argument("--residuals", help="residual report CSV to write")
    _add_format(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("advise", help="cache-aware NTP recommendations")
    p.add_argument("--task", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--hardware", required=True)
    p.add_argument("--coeffs", required=True)
    p.add_argument("--epoch-table", help="CSV with columns ntp,epoch")
    p.add_argument("--loss-table", help="CSV with columns run_id,epoch,test_loss")
    p.add_argument("--runs", help="run table joined with --loss-table")
    p.add_argument("--target-loss", type=float)
    _add_format(p)
    p.set_defaults(func=cmd_advise)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    buf = io.StringIO()
    try:
        code = args.func(args, buf)
    except MLPEnergyError as exc:
        print(f"mlpenergy {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    out.write(buf.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
