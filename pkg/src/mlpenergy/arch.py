"""MLP architectures: width reconstruction from (shape, depth, NTP) and counts.

Depth counts every parameterized layer, output layer included, so a depth-2
network has one hidden layer. Users joining against external sweep exports
whose depth convention differs should shift depth by one before calling
:func:`solve_widths`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

from .errors import InfeasibleTarget, InvalidArchitecture

SHAPE_KINDS = ("rectangle", "rectangle_residual", "trapezoid", "exponential", "wide_first")

# hard ceiling on the first hidden width searched
MAX_WIDTH = 2**32


@dataclass(frozen=True)
class ShapeFamily:
    kind: str
    factor: int | None = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidArchitecture(f"unknown shape {self.kind!r}")
        if self.kind == "wide_first":
            if self.factor is None or self.factor < 2:
                raise InvalidArchitecture("wide_first needs an integer factor >= 2")
        elif self.factor is not None:
            raise InvalidArchitecture(f"shape {self.kind!r} takes no factor")

    @classmethod
    def parse(cls, text: str) -> "ShapeFamily":
        """Accepts ``rectangle``, ``wide_first_4x``, ``wide_first(4)`` and similar."""
        text = text.strip().lower()
        m = re.fullmatch(r"wide_first(?:_(\d+)x|\((\d+)\)|_(\d+))", text)
        if m:
            return cls("wide_first", int(next(g for g in m.groups() if g)))
        return cls(text)

    def __str__(self):
        if self.kind == "wide_first":
            return f"wide_first_{self.factor}x"
        return self.kind


@dataclass(frozen=True)
class TaskSpec:
    n_features: int
    n_outputs: int
    n_train: int
    n_test: int
    batch_size: int = 256
    dtype_bytes: int = 4

    def __post_init__(self):
        for name in ("n_features", "n_outputs", "n_train", "n_test", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dtype_bytes not in (2, 4, 8):
            raise ValueError("dtype_bytes must be 2, 4 or 8")

    @property
    def train_batches(self) -> int:
        return math.ceil(self.n_train / self.batch_size)

    @property
    def test_batches(self) -> int:
        return math.ceil(self.n_test / self.batch_size)


@dataclass(frozen=True)
class NetworkArchitecture:
    input_width: int
    layer_widths: tuple[int, ...]
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_width < 1 or any(w < 1 for w in self.layer_widths):
            raise InvalidArchitecture("every width must be >= 1")
        if not self.layer_widths:
            raise InvalidArchitecture("architecture needs at least one layer")

    @property
    def depth(self) -> int:
        return len(self.layer_widths)

    @property
    def fan_ins(self) -> tuple[int, ...]:
        return (self.input_width,) + self.layer_widths[:-1]

    @property
    def total_units(self) -> int:
        return sum(self.layer_widths)

    def layer_parameters(self) -> list[int]:
        return [(fan_in + 1) * width for fan_in, width in zip(self.fan_ins, self.layer_widths)]


@dataclass(frozen=True)
class OpCounts:
    o_f: int
    o_b: int


def count_parameters(arch: NetworkArchitecture) -> int:
    """Weights plus biases; residual links are parameter-free."""
    return sum(arch.layer_parameters())


def count_ops(arch: NetworkArchitecture, task: TaskSpec) -> OpCounts:
    """FLOPs per batch: one multiply-accumulate (2 FLOPs) per parameter per datum
    forward, and two matrix products backward. Activation and optimizer work is
    not counted."""
    o_f = 2 * count_parameters(arch) * task.batch_size
    return OpCounts(o_f=o_f, o_b=2 * o_f)


def _round(x: float) -> int:
    return max(1, math.floor(x + 0.5))


def family_widths(shape: ShapeFamily, depth: int, width: int, n_outputs: int) -> list[int]:
    """Hidden widths (then the output width) for first-hidden-width ``width``."""
    n_hidden = depth - 1
    if shape.kind in ("rectangle", "rectangle_residual"):
        hidden = [width] * n_hidden
    elif shape.kind == "wide_first":
        hidden = [shape.factor * width] + [width] * (n_hidden - 1)
    elif shape.kind == "trapezoid":
        hidden = [_round(width + (n_outputs - width) * i / n_hidden) for i in range(n_hidden)]
    else:  # exponential
        ratio = n_outputs / width
        hidden = [_round(width * ratio ** (i / n_hidden)) for i in range(n_hidden)]
    return hidden + [n_outputs]


def build_architecture(shape: ShapeFamily, depth: int, width: int, task: TaskSpec) -> NetworkArchitecture:
    if depth < 2:
        raise InvalidArchitecture(f"depth must be >= 2, got {depth}")
    return NetworkArchitecture(
        input_width=task.n_features,
        layer_widths=tuple(family_widths(shape, depth, width, task.n_outputs)),
        residual=shape.kind == "rectangle_residual",
    )


@lru_cache(maxsize=65536)
def solve_widths(shape: ShapeFamily, depth: int, target_ntp: int, task: TaskSpec) -> NetworkArchitecture:
    """Architecture of ``shape`` whose parameter count is nearest ``target_ntp``.

    Parameter count is non-decreasing in the first hidden width for every
    family, so the nearest width is found by bisection. Distance ties go to the
    smaller network.
    """
    if depth < 2:
        raise InvalidArchitecture(f"depth must be >= 2, got {depth}")

    def ntp(w):
        return count_parameters(build_architecture(shape, depth, w, task))

    if target_ntp < ntp(1):
        raise InfeasibleTarget(
            f"target NTP {target_ntp} is below the minimum {ntp(1)} for {shape} depth {depth}"
        )
    # bracket, then bisect for the smallest w with ntp(w) >= target
    hi = 1
    while ntp(hi) < target_ntp:
        if hi >= MAX_WIDTH:
            raise InfeasibleTarget(f"target NTP {target_ntp} needs a width above {MAX_WIDTH}")
        hi *= 2
    lo = max(1, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if ntp(mid) >= target_ntp:
            hi = mid
        else:
            lo = mid + 1
    above = lo
    if above == 1 or ntp(above) == target_ntp:
        return build_architecture(shape, depth, above, task)
    below_ntp = ntp(above - 1)
    if target_ntp - below_ntp <= ntp(above) - target_ntp:
        # several widths can share below_ntp on rounded families; take the narrowest
        lo, hi = 1, above - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if ntp(mid) >= below_ntp:
                hi = mid
            else:
                lo = mid + 1
        return build_architecture(shape, depth, lo, task)
    return build_architecture(shape, depth, above, task)
