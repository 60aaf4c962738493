import pytest
from hypothesis import given, settings, strategies as st

from mlpenergy.arch import (
    NetworkArchitecture,
    ShapeFamily,
    TaskSpec,
    build_architecture,
    count_ops,
    count_parameters,
    family_widths,
    solve_widths,
)
from mlpenergy.errors import InfeasibleTarget, InvalidArchitecture
from synthetic import SHAPES, architectures


def enumerate_weights(arch):
    """Brute force: one entry per weight and bias."""
    params = []
    for layer, (fan_in, width) in enumerate(zip(arch.fan_ins, arch.layer_widths)):
        for j in range(width):
            params.extend((layer, i, j) for i in range(fan_in))
            params.append((layer, "bias", j))
    return len(params)


def test_count_parameters_examples():
    assert count_parameters(NetworkArchitecture(4, (3, 3, 1))) == 31
    assert count_parameters(NetworkArchitecture(1, (1, 1))) == 4
    assert count_parameters(NetworkArchitecture(17, (1,))) == 18


def test_residual_links_add_no_parameters():
    assert count_parameters(NetworkArchitecture(4, (3, 3, 1), residual=True)) == 31


@given(architectures())
def test_count_parameters_matches_enumeration(arch):
    assert count_parameters(arch) == enumerate_weights(arch)


def test_count_ops_examples():
    task2 = TaskSpec(4, 1, 10, 5, batch_size=2)
    ops = count_ops(NetworkArchitecture(4, (3, 3, 1)), task2)
    assert (ops.o_f, ops.o_b) == (124, 248)
    ops = count_ops(NetworkArchitecture(1, (1,)), TaskSpec(1, 1, 1, 1, batch_size=1))
    assert (ops.o_f, ops.o_b) == (4, 8)


def test_count_ops_one_parameter_net():
    # a net with NTP=1 cannot exist (bias alone needs fan_in 0); check the formula directly
    ops = count_ops(NetworkArchitecture(1, (1,)), TaskSpec(1, 1, 1, 1, batch_size=1))
    assert ops.o_f == 2 * count_parameters(NetworkArchitecture(1, (1,)))
    assert ops.o_b == 2 * ops.o_f


def test_solve_widths_examples():
    task = TaskSpec(n_features=16, n_outputs=1, n_train=100, n_test=10)
    rect = ShapeFamily.parse("rectangle")
    a = solve_widths(rect, 2, 32, task)
    assert a.layer_widths == (2, 1) and count_parameters(a) == 37
    b = solve_widths(rect, 2, 19, task)
    assert b.layer_widths == (1, 1) and count_parameters(b) == 19


def test_solve_widths_errors():
    task = TaskSpec(16, 1, 100, 10)
    with pytest.raises(InvalidArchitecture):
        solve_widths(ShapeFamily("rectangle"), 1, 100, task)
    with pytest.raises(InfeasibleTarget):
        solve_widths(ShapeFamily("rectangle"), 2, 18, task)


@pytest.mark.parametrize("text,expected", [
    ("rectangle", ShapeFamily("rectangle")),
    ("wide_first_4x", ShapeFamily("wide_first", 4)),
    ("wide_first(8)", ShapeFamily("wide_first", 8)),
    ("Wide_First_16", ShapeFamily("wide_first", 16)),
])
def test_shape_parse(text, expected):
    assert ShapeFamily.parse(text) == expected
    assert ShapeFamily.parse(str(expected)) == expected


def test_shape_parse_rejects_unknown():
    with pytest.raises(InvalidArchitecture):
        ShapeFamily.parse("pyramid")


def test_family_widths_shapes():
    assert family_widths(ShapeFamily("rectangle"), 4, 10, 2) == [10, 10, 10, 2]
    assert family_widths(ShapeFamily("wide_first", 4), 3, 10, 2) == [40, 10, 2]
    assert family_widths(ShapeFamily("trapezoid"), 3, 10, 2) == [10, 6, 2]
    assert family_widths(ShapeFamily("exponential"), 3, 16, 1) == [16, 4, 1]


def test_residual_shape_sets_flag():
    arch = build_architecture(ShapeFamily("rectangle_residual"), 3, 8, TaskSpec(4, 1, 10, 10))
    assert arch.residual


@settings(max_examples=60, deadline=None)
@given(
    shape=st.sampled_from(SHAPES),
    depth=st.integers(2, 6),
    features=st.integers(1, 40),
    outputs=st.integers(1, 5),
    target=st.integers(1, 6000),
)
def test_solve_widths_matches_exhaustive_scan(shape, depth, features, outputs, target):
    task = TaskSpec(features, outputs, 100, 10)
    fam = ShapeFamily.parse(shape)

    def ntp(w):
        return count_parameters(build_architecture(fam, depth, w, task))

    if target < ntp(1):
        with pytest.raises(InfeasibleTarget):
            solve_widths(fam, depth, target, task)
        return
    # exhaustive: nearest NTP, ties to the smaller network, then the narrower width
    widths = [1]
    while ntp(widths[-1]) < target:
        widths.append(widths[-1] + 1)
    best = min(widths, key=lambda w: (abs(ntp(w) - target), ntp(w), w))
    got = solve_widths(fam, depth, target, task)
    assert count_parameters(got) == ntp(best)
    assert got == build_architecture(fam, depth, best, task)


def test_solve_widths_reaches_large_targets_at_depth_two():
    task = TaskSpec(16, 1, 100, 10)
    arch = solve_widths(ShapeFamily("rectangle"), 2, 2**25, task)
    assert abs(count_parameters(arch) - 2**25) <= 18


def test_taskspec_batches():
    t = TaskSpec(4, 1, n_train=1000, n_test=200, batch_size=256)
    assert (t.train_batches, t.test_batches) == (4, 1)
    with pytest.raises(ValueError):
        TaskSpec(0, 1, 1, 1)
