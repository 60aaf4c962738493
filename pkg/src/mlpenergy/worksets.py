"""Working-set sizes and their placement in a memory hierarchy.

Four sets matter during training:

* ``d``  - the train and test data,
* ``f``/``f'`` - the parameters during the training / test forward pass,
* ``b``  - parameters, parameter gradients and one value per unit per datum,
* ``t_l`` - the input and output activations (or their gradients) of layer l.

Parameters and parameter gradients are replicated on every processing unit.
Unit values, inter-layer sets and the data are split evenly across units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import NetworkArchitecture, TaskSpec, count_parameters

PER_UNIT = "per-unit"
SHARED = "shared"

PLACEMENT_MODES = ("whole-set", "per-layer")


@dataclass(frozen=True)
class MemoryLevel:
    label: str
    capacity: float | None  # bytes; None means unbounded
    scope: str = PER_UNIT
    shared_by: int = 1

    def __post_init__(self):
        if self.scope not in (PER_UNIT, SHARED):
            raise ValueError(f"scope must be {PER_UNIT!r} or {SHARED!r}, got {self.scope!r}")
        if self.capacity is not None and self.capacity <= 0:
            raise ValueError(f"level {self.label}: capacity must be > 0")
        if self.shared_by < 1:
            raise ValueError(f"level {self.label}: shared_by must be >= 1")

    @property
    def sharers(self) -> int:
        return self.shared_by if self.scope == SHARED else 1


@dataclass(frozen=True)
class HardwareSpec:
    name: str
    n_units: int
    levels: tuple[MemoryLevel, ...]
    idle_power: float = 0.0
    hardware_class: str = "cpu"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise ValueError("hardware needs at least one memory level")
        if self.n_units < 1:
            raise ValueError("n_units must be >= 1")
        for lvl in self.levels[:-1]:
            if lvl.capacity is None:
                raise ValueError(f"only the last level may be unbounded ({lvl.label})")
            if lvl.sharers > self.n_units:
                raise ValueError(f"level {lvl.label} shared by more units than exist")
        labels = [lvl.label for lvl in self.levels]
        if len(set(labels)) != len(labels):
            raise ValueError("level labels must be unique")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lvl.label for lvl in self.levels)

    def demand(self, level: int, replicated: float, distributed: float) -> float:
        """Bytes a footprint occupies in one instance of ``level``.

        A per-unit cache holds one replica plus that unit's share of the
        distributed data; a shared cache holds one replica plus the shares of
        every unit attached to it.
        """
        return replicated + self.levels[level].sharers * distributed / self.n_units

    def fits(self, level: int, replicated: float, distributed: float) -> bool:
        if level == len(self.levels) - 1:
            return True
        return self.demand(level, replicated, distributed) <= self.levels[level].capacity

    def lowest_fit(self, replicated: float, distributed: float, start: int = 0) -> int:
        for i in range(start, len(self.levels)):
            if self.fits(i, replicated, distributed):
                return i
        return len(self.levels) - 1  # unreachable: the top level always fits


@dataclass(frozen=True)
class WorkingSets:
    s_f: float
    s_f_prime: float
    s_b: float
    s_t: tuple[float, ...]
    s_d: float
    total_units: int
    # bytes of the largest single layer's parameters; only the per-layer mode reads it
    s_layer_max: float = 0.0
    # bytes of the largest layer's per-unit values; only the per-layer mode reads it
    s_units_layer_max: float = 0.0

    @property
    def s_t_max(self) -> float:
        return max(self.s_t)

    @property
    def b_replicated(self) -> float:
        return min(2 * self.s_f, self.s_b)

    @property
    def b_distributed(self) -> float:
        return self.s_b - self.b_replicated

    @property
    def depth(self) -> int:
        return len(self.s_t)


@dataclass(frozen=True)
class Placement:
    c_t: tuple[int, ...]  # one level per layer
    c_f_prime: int
    c_f: int
    c_b: int
    c_d: int

    @property
    def c_t_max(self) -> int:
        return max(self.c_t)

    def ordering_holds(self) -> bool:
        return self.c_t_max <= self.c_f_prime <= self.c_f == self.c_b <= self.c_d


def compute_working_sets(arch: NetworkArchitecture, task: TaskSpec) -> WorkingSets:
    dt = task.dtype_bytes
    ntp = count_parameters(arch)
    bs = task.batch_size
    s_f = ntp * dt
    return WorkingSets(
        s_f=s_f,
        s_f_prime=s_f,
        s_b=(2 * ntp + arch.total_units * bs) * dt,
        s_t=tuple((w + fi) * bs * dt for w, fi in zip(arch.layer_widths, arch.fan_ins)),
        s_d=(task.n_train + task.n_test) * (task.n_features + task.n_outputs) * dt,
        total_units=arch.total_units,
        s_layer_max=max(arch.layer_parameters()) * dt,
        s_units_layer_max=max(arch.layer_widths) * bs * dt,
    )


def place_working_sets(ws: WorkingSets, hw: HardwareSpec, mode: str = "whole-set") -> Placement:
    """Assign each working set to the lowest level that holds it.

    ``mode="whole-set"`` sizes f, f' and b by the entire parameter set;
    ``mode="per-layer"`` uses only the largest layer's slice of it.
    """
    if mode not in PLACEMENT_MODES:
        raise ValueError(f"placement mode must be one of {PLACEMENT_MODES}")
    t_max = ws.s_t_max
    c_t = tuple(hw.lowest_fit(0.0, s) for s in ws.s_t)
    c_t_max = max(c_t)

    if mode == "whole-set":
        f_rep = ws.s_f_prime
        b_rep, b_dist = ws.b_replicated, ws.b_distributed
    else:
        f_rep = ws.s_layer_max
        b_rep, b_dist = 2 * ws.s_layer_max, ws.s_units_layer_max

    c_b = hw.lowest_fit(b_rep, t_max + b_dist, start=c_t_max)
    c_f = c_b
    c_f_prime = min(hw.lowest_fit(f_rep, t_max, start=c_t_max), c_f)
    c_d = hw.lowest_fit(b_rep, t_max + b_dist + ws.s_d, start=c_b)
    return Placement(c_t=c_t, c_f_prime=c_f_prime, c_f=c_f, c_b=c_b, c_d=c_d)


def effective_size(ws: WorkingSets, hw: HardwareSpec, level: int, which: str) -> float:
    """Bytes set ``which`` (``f``, ``b``, ``t`` or ``d``) alone occupies at ``level``."""
    if which in ("f", "f_prime"):
        return hw.demand(level, ws.s_f, 0.0)
    if which == "b":
        return hw.demand(level, ws.b_replicated, ws.b_distributed)
    if which == "t":
        return hw.demand(level, 0.0, ws.s_t_max)
    if which == "d":
        return hw.demand(level, 0.0, ws.s_d)
    raise ValueError(f"unknown working set {which!r}")


def level_index(hw: HardwareSpec, label: str) -> int:
    try:
        return hw.labels.index(label)
    except ValueError:
        raise KeyError(f"{hw.name} has no level {label!r}") from None


def fmt_bytes(n: float) -> str:
    if n is None or math.isinf(n):
        return "unbounded"
    for unit, scale in (("GiB", 2**30), ("MiB", 2**20), ("KiB", 2**10)):
        if n >= scale:
            return f"{n / scale:.3g} {unit}"
    return f"{n:.0f} B"
