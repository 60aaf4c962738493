"""Affine memory-access energy model for MLP training runs.

Per pass:

    E_f  = k_p + k_o o_f + k_d |L| + phi(d) + phi(f)  + sum_l phi(t_l)
    E_f' = k_p + k_o o_f + k_d |L| + phi(d) + phi(f') + sum_l phi(t_l)
    E_b  = k_p + k_o o_b + k_d |L|          + phi(b)  + sum_l phi(t_l)

with phi(x) = a[c_x] + m[c_x] * s_x, and per run

    E_t = k_e + n (h_t (E_f + E_b) + h_s E_f')

Everything is linear in k = [k_e, k_p, k_o, k_d, a_1..a_C, m_1..m_C], which
:func:`build_design_row` exploits.

Units are SI throughout: J/FLOP for ``k_o`` and J/byte for ``m``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import NetworkArchitecture, OpCounts, TaskSpec, count_ops
from .worksets import HardwareSpec, Placement, WorkingSets, compute_working_sets, place_working_sets

PASS_KINDS = ("train_forward", "train_backward", "test_forward")
SCALAR_NAMES = ("k_e", "k_p", "k_o", "k_d")


@dataclass(frozen=True)
class EnergyCoefficients:
    k_e: float
    k_p: float
    k_o: float
    k_d: float
    a: tuple[float, ...]
    m: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        for name in SCALAR_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "m", tuple(float(x) for x in self.m))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not len(self.a) == len(self.m) == len(self.labels):
            raise ValueError("a, m and labels must have one entry per memory level")
        if any(v < 0 for v in self.as_vector()):
            raise ValueError("energy coefficients must be nonnegative")

    @property
    def n_levels(self) -> int:
        return len(self.labels)

    def as_vector(self) -> np.ndarray:
        return np.array([self.k_e, self.k_p, self.k_o, self.k_d, *self.a, *self.m], dtype=float)

    @classmethod
    def from_vector(cls, k, labels) -> "EnergyCoefficients":
        k = np.asarray(k, dtype=float)
        c = len(labels)
        if k.shape != (4 + 2 * c,):
            raise ValueError(f"expected {4 + 2 * c} coefficients, got {k.shape}")
        return cls(*k[:4], a=tuple(k[4:4 + c]), m=tuple(k[4 + c:]), labels=tuple(labels))

    @classmethod
    def zeros(cls, labels) -> "EnergyCoefficients":
        return cls.from_vector(np.zeros(4 + 2 * len(labels)), labels)


def coefficient_names(labels) -> list[str]:
    return [*SCALAR_NAMES, *(f"a_{lb}" for lb in labels), *(f"m_{lb}" for lb in labels)]


@dataclass(frozen=True)
class RunCounts:
    n: int
    h_t: int
    h_s: int = 0

    def __post_init__(self):
        if self.n < 0 or self.h_t < 1 or self.h_s < 0:
            raise ValueError(f"invalid run counts {self}")

    @property
    def passes(self) -> int:
        return self.n * (2 * self.h_t + self.h_s)


def phi(size: float, level: int, coeffs: EnergyCoefficients) -> float:
    return coeffs.a[level] + coeffs.m[level] * size


def _t_cost(ws: WorkingSets, placement: Placement, coeffs: EnergyCoefficients) -> float:
    return sum(phi(s, c, coeffs) for s, c in zip(ws.s_t, placement.c_t))


def pass_energy(
    kind: str,
    ws: WorkingSets,
    placement: Placement,
    ops: OpCounts,
    depth: int,
    coeffs: EnergyCoefficients,
) -> float:
    base = coeffs.k_p + coeffs.k_d * depth + _t_cost(ws, placement, coeffs)
    if kind == "train_forward":
        return base + coeffs.k_o * ops.o_f + phi(ws.s_d, placement.c_d, coeffs) + phi(ws.s_f, placement.c_f, coeffs)
    if kind == "test_forward":
        return (
            base
            + coeffs.k_o * ops.o_f
            + phi(ws.s_d, placement.c_d, coeffs)
            + phi(ws.s_f_prime, placement.c_f_prime, coeffs)
        )
    if kind == "train_backward":
        return base + coeffs.k_o * ops.o_b + phi(ws.s_b, placement.c_b, coeffs)
    raise ValueError(f"pass kind must be one of {PASS_KINDS}")


def total_energy(
    counts: RunCounts,
    ws: WorkingSets,
    placement: Placement,
    ops: OpCounts,
    depth: int,
    coeffs: EnergyCoefficients,
) -> float:
    e_f = pass_energy("train_forward", ws, placement, ops, depth, coeffs)
    e_b = pass_energy("train_backward", ws, placement, ops, depth, coeffs)
    e_fp = pass_energy("test_forward", ws, placement, ops, depth, coeffs)
    return coeffs.k_e + counts.n * (counts.h_t * (e_f + e_b) + counts.h_s * e_fp)


def build_design_row(
    counts: RunCounts,
    ws: WorkingSets,
    placement: Placement,
    ops: OpCounts,
    depth: int,
    n_levels: int,
) -> np.ndarray:
    """Feature vector w such that ``w @ k`` is the modeled run energy."""
    n, h_t, h_s = counts.n, counts.h_t, counts.h_s
    row = np.zeros(4 + 2 * n_levels)
    row[0] = 1.0
    row[1] = n * (2 * h_t + h_s)
    row[2] = n * ((h_t + h_s) * ops.o_f + h_t * ops.o_b)
    row[3] = n * (2 * h_t + h_s) * depth
    acc = row[4:4 + n_levels]
    byt = row[4 + n_levels:]

    def touch(times, level, size):
        acc[level] += times
        byt[level] += times * size

    touch(n * (h_t + h_s), placement.c_d, ws.s_d)
    touch(n * h_t, placement.c_f, ws.s_f)
    touch(n * h_t, placement.c_b, ws.s_b)
    touch(n * h_s, placement.c_f_prime, ws.s_f_prime)
    for s, c in zip(ws.s_t, placement.c_t):
        touch(n * (2 * h_t + h_s), c, s)
    return row


def energy_breakdown(row: np.ndarray, coeffs: EnergyCoefficients) -> dict[str, float]:
    """Split ``row @ k`` into overhead, compute and per-level access terms."""
    k = coeffs.as_vector()
    c = coeffs.n_levels
    terms = row * k
    out = {
        "experiment_overhead": terms[0],
        "pass_overhead": terms[1],
        "operations": terms[2],
        "layer_overhead": terms[3],
    }
    for i, label in enumerate(coeffs.labels):
        out[f"access_{label}"] = terms[4 + i] + terms[4 + c + i]
    return {key: float(v) for key, v in out.items()}


@dataclass(frozen=True)
class ModeledRun:
    """Everything the energy equations need about one configuration."""

    arch: NetworkArchitecture
    task: TaskSpec
    counts: RunCounts
    ws: WorkingSets
    placement: Placement
    ops: OpCounts

    @property
    def depth(self) -> int:
        return self.arch.depth

    def design_row(self, n_levels: int) -> np.ndarray:
        return build_design_row(self.counts, self.ws, self.placement, self.ops, self.depth, n_levels)

    def energy(self, coeffs: EnergyCoefficients) -> float:
        return total_energy(self.counts, self.ws, self.placement, self.ops, self.depth, coeffs)


def model_run(
    arch: NetworkArchitecture,
    task: TaskSpec,
    hw: HardwareSpec,
    counts: RunCounts | None = None,
    mode: str = "whole-set",
) -> ModeledRun:
    """Working sets, placement and op counts; ``counts`` defaults to one epoch
    over the task's train and test splits."""
    if counts is None:
        counts = RunCounts(n=1, h_t=task.train_batches, h_s=task.test_batches)
    ws = compute_working_sets(arch, task)
    return ModeledRun(
        arch=arch,
        task=task,
        counts=counts,
        ws=ws,
        placement=place_working_sets(ws, hw, mode),
        ops=count_ops(arch, task),
    )


def energy_per_datum(run: ModeledRun, coeffs: EnergyCoefficients) -> float:
    """Modeled joules per training datum per epoch, run overhead k_e excluded."""
    if run.counts.n == 0:
        return 0.0
    per_epoch = (run.energy(coeffs) - coeffs.k_e) / run.counts.n
    return per_epoch / run.task.n_train
