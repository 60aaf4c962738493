"""Cache-aware network sizing.

Energy to reach a target loss tends to bottom out where a key working set
(usually the backward-pass set) equals or barely exceeds a cache level. The
recommender therefore looks, for every cache level, for sizes whose anchor set
occupies between 1x and 2x of that level.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .arch import NetworkArchitecture, ShapeFamily, TaskSpec, count_parameters, solve_widths
from .energy_model import EnergyCoefficients, RunCounts, energy_per_datum, model_run
from .errors import InfeasibleTarget, InvalidEpochModel
from .worksets import HardwareSpec, effective_size

ANCHORS = ("b", "f", "t")  # primary first
GRID_EXPONENTS = range(5, 26)
GRID_REFINEMENTS = (1.0, 1.25, 1.5, 1.75)


@dataclass(frozen=True)
class EpochModel:
    """(minimizing epoch) ** (-1/3) ~= alpha * ln(NTP) + c."""

    alpha: float
    c: float

    def base(self, ntp: float) -> float:
        return self.alpha * math.log(ntp) + self.c

    def minimizing_epoch(self, ntp: float) -> float:
        b = self.base(ntp)
        if b <= 0:
            raise InvalidEpochModel(f"epoch model base {b:.6g} <= 0 at NTP={ntp}")
        return b ** -3

    def epochs(self, ntp: float) -> int:
        return max(1, math.floor(self.minimizing_epoch(ntp) + 0.5))


def fit_epoch_model(ntps, epochs) -> EpochModel:
    """Ordinary least squares of epoch**(-1/3) on ln(NTP)."""
    x = np.log(np.asarray(ntps, dtype=float))
    y = np.asarray(epochs, dtype=float) ** (-1.0 / 3.0)
    if x.size < 2 or np.ptp(x) == 0:
        raise InvalidEpochModel("need at least two distinct NTP values to fit an epoch model")
    alpha, c = np.polyfit(x, y, 1)
    return EpochModel(alpha=float(alpha), c=float(c))


@dataclass(frozen=True)
class Recommendation:
    ntp: int
    arch: NetworkArchitecture
    anchor_level: str
    anchor_set: str
    fill_ratio: float  # anchor size / level capacity, in [1, 2]
    energy_per_datum: float
    energy_to_loss: float | None
    rationale: str


def candidate_grid() -> list[int]:
    out = set()
    for e in GRID_EXPONENTS:
        for r in GRID_REFINEMENTS:
            if e == GRID_EXPONENTS[-1] and r > 1:
                continue
            out.add(int(round(2**e * r)))
    return sorted(out)


def energy_to_loss(task: TaskSpec, arch: NetworkArchitecture, hw: HardwareSpec,
                   coeffs: EnergyCoefficients, epoch_model: EpochModel) -> float:
    """Modeled run energy when training stops at the predicted loss-minimizing epoch."""
    n = epoch_model.epochs(count_parameters(arch))
    counts = RunCounts(n=n, h_t=task.train_batches, h_s=task.test_batches)
    return model_run(arch, task, hw, counts).energy(coeffs)


def recommend_ntp(
    task: TaskSpec,
    shape: ShapeFamily,
    depth: int,
    hw: HardwareSpec,
    coeffs: EnergyCoefficients,
    epoch_model: EpochModel | None = None,
    candidates: list[int] | None = None,
) -> tuple[list[Recommendation], str]:
    """Ranked recommendations plus a note (non-empty when nothing qualified)."""
    scored = []
    for target in candidates or candidate_grid():
        try:
            arch = solve_widths(shape, depth, target, task)
        except InfeasibleTarget:
            continue
        run = model_run(arch, task, hw)
        scored.append((arch, run))

    best: dict[tuple[int, str], Recommendation] = {}
    for arch, run in scored:
        ntp = count_parameters(arch)
        epd = energy_per_datum(run, coeffs)
        etl = energy_to_loss(task, arch, hw, coeffs, epoch_model) if epoch_model else None
        for level in range(len(hw.levels) - 1):
            cap = hw.levels[level].capacity
            for anchor in ANCHORS:
                ratio = effective_size(run.ws, hw, level, anchor) / cap
                if not 1.0 <= ratio <= 2.0:
                    continue
                key = (level, anchor)
                score = etl if etl is not None else epd
                prev = best.get(key)
                if prev is not None:
                    prev_score = prev.energy_to_loss if etl is not None else prev.energy_per_datum
                    if (prev_score, prev.ntp) <= (score, ntp):
                        continue
                label = hw.levels[level].label
                best[key] = Recommendation(
                    ntp=ntp,
                    arch=arch,
                    anchor_level=label,
                    anchor_set=anchor,
                    fill_ratio=ratio,
                    energy_per_datum=epd,
                    energy_to_loss=etl,
                    rationale=(
                        f"{_SET_NAMES[anchor]} fills {ratio:.2f}x of {label}"
                        + (" (primary anchor)" if anchor == "b" else "")
                    ),
                )

    recs = list(best.values())
    if epoch_model is not None:
        recs.sort(key=lambda r: (r.energy_to_loss, ANCHORS.index(r.anchor_set), r.ntp))
    else:
        recs.sort(key=lambda r: (r.energy_per_datum, ANCHORS.index(r.anchor_set), r.ntp))
    note = ""
    if not recs:
        note = (
            f"no candidate NTP puts a working set between 1x and 2x of any cache level on {hw.name}; "
            "every candidate either fits entirely or spills far past each boundary"
        )
    return recs, note


_SET_NAMES = {"b": "backward-pass set", "f": "forward-pass set", "t": "largest inter-layer set"}


def isoloss_energy(points, target_loss: float) -> list[tuple[int, float]]:
    """Energy needed to reach ``target_loss`` for each NTP.

    ``points`` is an iterable of (ntp, loss, energy). Each NTP's points are
    taken in order of increasing energy (the training trajectory) and the first
    segment whose loss crosses the target is interpolated linearly in
    (log loss, log energy). NTPs that never reach the target are omitted.
    """
    curves: dict[int, list[tuple[float, float]]] = defaultdict(list)
    for ntp, loss, energy in points:
        curves[int(ntp)].append((float(energy), float(loss)))
    out = []
    for ntp in sorted(curves):
        e = _crossing(sorted(curves[ntp]), target_loss)
        if e is not None:
            out.append((ntp, e))
    return out


def _crossing(curve, target):
    for i, (e0, l0) in enumerate(curve):
        if l0 == target:
            return e0
        if i + 1 == len(curve):
            break
        e1, l1 = curve[i + 1]
        if l0 > target > l1:
            frac = (math.log(target) - math.log(l0)) / (math.log(l1) - math.log(l0))
            return math.exp(math.log(e0) + frac * (math.log(e1) - math.log(e0)))
    return None
