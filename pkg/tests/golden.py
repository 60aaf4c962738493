"""Constructed ingest fixture with one run for each filter.

Every node idles for 10 samples before its run, then draws a constant power,
so raw energy is exactly P * runtime.
"""
import csv

SAMPLE_S = 60
RUN_W = 300.0
CPU4_RUN_W = 500.0
JOB_HEADER = ["run_id", "node_id", "node_type", "start_s", "end_s", "dataset", "shape", "depth", "ntp",
              "hardware_class", "epochs", "train_batches", "test_batches",
              "n_features", "n_outputs", "n_train", "n_test"]


def _job(run_id, node, node_type, start, runtime, dataset="tiny", ntp=64, batches=4):
    return [run_id, node, node_type, start, start + runtime, dataset, "rectangle", 2, ntp, "cpu", 5,
            batches, 1, 8, 1, batches * 256, 256]


def build(directory):
    """Write power.csv and jobs.csv; returns (power path, jobs path, expected)."""
    jobs, power = [], []
    t0 = 1_000_000

    def add(run_id, node_type, runtime, watts, idle, zero_at=None, node=None, **kw):
        nonlocal t0
        node = node or f"n-{run_id}"
        jobs.append(_job(run_id, node, node_type, t0, runtime, **kw))
        for i in range(10, 0, -1):
            power.append([node, t0 - i * SAMPLE_S, idle])
        for t in range(t0, t0 + runtime + 1, SAMPLE_S):
            power.append([node, t, 0.0 if zero_at is not None and t == t0 + zero_at else watts])
        t0 += runtime + 3600

    for i in range(30):
        add(f"r{i:02d}", "cpu1", 600 + 60 * (i % 3), RUN_W, 220.0)
    add("r30", "cpu1", 30000, RUN_W, 220.0)  # log-runtime outlier
    add("r31", "cpu1", 80000, RUN_W, 220.0)  # longer than the cutoff
    add("r32", "cpu1", 600, RUN_W, 220.0, zero_at=120)
    jobs.append(_job("r33", "ghost", "cpu1", t0, 600))  # no samples at all
    add("r34", "cpu4", 3600, CPU4_RUN_W, 388.0, dataset="big", ntp=4096, batches=40)

    power_path = directory / "power.csv"
    jobs_path = directory / "jobs.csv"
    with open(power_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "timestamp_s", "watts"])
        w.writerows(power)
    with open(jobs_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JOB_HEADER)
        w.writerows(jobs)
    expected = {
        "counts": {"zero_w": 1, "missing": 1, "long": 1, "sigma": 1},
        "dropped": {"r30": "sigma", "r31": "long", "r32": "zero_w", "r33": "missing"},
        "n_input": 35,
        "n_output": 31,
        "cpu4_standardized": CPU4_RUN_W * 3600 - (388 - 220) * 3600,
        "overhead": (RUN_W * 600, 600.0),
    }
    return power_path, jobs_path, expected
