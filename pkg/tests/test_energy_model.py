import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlpenergy.arch import NetworkArchitecture, TaskSpec, count_ops
from mlpenergy.energy_model import (
    EnergyCoefficients,
    RunCounts,
    build_design_row,
    coefficient_names,
    energy_breakdown,
    energy_per_datum,
    model_run,
    pass_energy,
    phi,
    total_energy,
)
from mlpenergy.worksets import Placement, compute_working_sets, place_working_sets
from synthetic import random_arch, random_hardware, random_task, seeds

MiB = 2**20


def test_phi_examples(cpu_coeffs):
    assert phi(MiB, 1, cpu_coeffs) == pytest.approx(82.3, rel=1e-12)
    assert phi(2 * MiB, 3, cpu_coeffs) == pytest.approx(377.6, rel=1e-12)
    for level in range(4):
        assert phi(0, level, cpu_coeffs) == cpu_coeffs.a[level]


def _tiny():
    arch = NetworkArchitecture(4, (3, 3, 1))
    task = TaskSpec(4, 1, 10, 5, batch_size=2)
    ws = compute_working_sets(arch, task)
    return arch, task, ws, count_ops(arch, task)


def test_zero_coefficients_cost_nothing(cpu1):
    arch, task, ws, ops = _tiny()
    pl = place_working_sets(ws, cpu1)
    zero = EnergyCoefficients.zeros(cpu1.labels)
    for kind in ("train_forward", "train_backward", "test_forward"):
        assert pass_energy(kind, ws, pl, ops, arch.depth, zero) == 0


def test_backward_minus_forward_is_op_difference(cpu1):
    arch, task, ws, ops = _tiny()
    pl = place_working_sets(ws, cpu1)
    k = EnergyCoefficients(0, 3.0, 0.5, 0, (0,) * 4, (0,) * 4, cpu1.labels)
    diff = pass_energy("train_backward", ws, pl, ops, 3, k) - pass_energy("train_forward", ws, pl, ops, 3, k)
    assert diff == pytest.approx(0.5 * ops.o_f)


def test_layer_term_only(cpu1):
    arch = NetworkArchitecture(3, (1,))
    task = TaskSpec(3, 1, 10, 10)
    ws, ops = compute_working_sets(arch, task), count_ops(arch, task)
    pl = place_working_sets(ws, cpu1)
    k = EnergyCoefficients(0, 0, 0, 1.0, (0,) * 4, (0,) * 4, cpu1.labels)
    for kind in ("train_forward", "train_backward", "test_forward"):
        assert pass_energy(kind, ws, pl, ops, 1, k) == 1


def test_zero_epochs_costs_k_e(cpu1, cpu_coeffs):
    arch, task, ws, ops = _tiny()
    pl = place_working_sets(ws, cpu1)
    assert total_energy(RunCounts(0, 5, 3), ws, pl, ops, 3, cpu_coeffs) == cpu_coeffs.k_e


def test_design_row_hand_count():
    arch = NetworkArchitecture(2, (1,))
    task = TaskSpec(2, 1, 4, 1, batch_size=1)
    ws, ops = compute_working_sets(arch, task), count_ops(arch, task)
    pl = Placement(c_t=(0,), c_f_prime=0, c_f=0, c_b=0, c_d=0)
    row = build_design_row(RunCounts(1, 1, 0), ws, pl, ops, 1, n_levels=2)
    assert row[0] == 1 and row[1] == 2 and row[3] == 2
    assert row[2] == ops.o_f + ops.o_b
    assert row[4] == 5 and row[5] == 0
    assert row[6] == 2 * ws.s_t[0] + ws.s_f + ws.s_b + ws.s_d

    with_test = build_design_row(RunCounts(1, 1, 1), ws, pl, ops, 1, n_levels=2)
    # one test pass adds f' once and d once more
    assert with_test[4] - row[4] == 1 + 1 + 1  # f', d, t
    assert with_test[6] - row[6] == ws.s_f_prime + ws.s_d + ws.s_t[0]


def _random_config(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, max_layers=8, max_width=4000)
    task = random_task(rng, arch)
    hw = random_hardware(rng)
    ws = compute_working_sets(arch, task)
    counts = RunCounts(int(rng.integers(0, 500)), int(rng.integers(1, 5000)), int(rng.integers(0, 500)))
    c = len(hw.levels)
    k = EnergyCoefficients.from_vector(rng.exponential(1.0, 4 + 2 * c) * 10.0 ** rng.uniform(-12, 4, 4 + 2 * c),
                                       hw.labels)
    return arch, task, hw, ws, place_working_sets(ws, hw), count_ops(arch, task), counts, k, rng


@settings(max_examples=200)
@given(seeds)
def test_design_row_dot_equals_direct(seed):
    arch, task, hw, ws, pl, ops, counts, k, _ = _random_config(seed)
    row = build_design_row(counts, ws, pl, ops, arch.depth, len(hw.levels))
    direct = total_energy(counts, ws, pl, ops, arch.depth, k)
    assert row @ k.as_vector() == pytest.approx(direct, rel=1e-9)


@settings(max_examples=100)
@given(seeds, st.sampled_from(["n", "h_t", "h_s"]))
def test_affine_in_each_count(seed, field):
    arch, task, hw, ws, pl, ops, counts, k, _ = _random_config(seed)
    base = getattr(counts, field)

    def energy(v):
        return total_energy(dataclasses.replace(counts, **{field: v}), ws, pl, ops, arch.depth, k)

    e0, e1, e2 = energy(base + 1), energy(base + 2), energy(base + 3)
    assert e2 - e1 == pytest.approx(e1 - e0, rel=1e-9, abs=1e-9 * abs(e2))


@settings(max_examples=100)
@given(seeds, st.integers(0, 9), st.floats(1.0, 100.0))
def test_monotone_in_coefficients(seed, index, factor):
    arch, task, hw, ws, pl, ops, counts, k, _ = _random_config(seed)
    v = k.as_vector()
    i = index % v.size
    bumped = v.copy()
    bumped[i] = v[i] * factor + 1e-3
    k2 = EnergyCoefficients.from_vector(bumped, hw.labels)
    assert total_energy(counts, ws, pl, ops, arch.depth, k2) >= total_energy(counts, ws, pl, ops, arch.depth, k)


@settings(max_examples=100)
@given(seeds, st.sampled_from(["s_f", "s_b", "s_d", "s_t"]), st.floats(1.0, 10.0))
def test_monotone_in_set_sizes_with_fixed_placement(seed, which, factor):
    arch, task, hw, ws, pl, ops, counts, k, _ = _random_config(seed)
    if which == "s_t":
        grown = dataclasses.replace(ws, s_t=tuple(s * factor for s in ws.s_t))
    elif which == "s_f":
        grown = dataclasses.replace(ws, s_f=ws.s_f * factor, s_f_prime=ws.s_f * factor)
    else:
        grown = dataclasses.replace(ws, **{which: getattr(ws, which) * factor})
    e = total_energy(counts, ws, pl, ops, arch.depth, k)
    assert total_energy(counts, grown, pl, ops, arch.depth, k) >= e * (1 - 1e-12)


@settings(max_examples=100)
@given(seeds, st.sampled_from(["c_f_prime", "c_f", "c_b", "c_d", "c_t"]))
def test_higher_level_never_cheaper_with_sorted_costs(seed, which):
    arch, task, hw, ws, pl, ops, counts, k, rng = _random_config(seed)
    c = len(hw.levels)
    k = EnergyCoefficients(k.k_e, k.k_p, k.k_o, k.k_d, tuple(sorted(k.a)), tuple(sorted(k.m)), hw.labels)
    if which == "c_t":
        moved = dataclasses.replace(pl, c_t=tuple(min(x + 1, c - 1) for x in pl.c_t))
    else:
        moved = dataclasses.replace(pl, **{which: min(getattr(pl, which) + 1, c - 1)})
    e = total_energy(counts, ws, pl, ops, arch.depth, k)
    assert total_energy(counts, ws, moved, ops, arch.depth, k) >= e * (1 - 1e-12)


def test_breakdown_sums_to_total(cpu1, cpu_coeffs):
    arch, task, ws, ops = _tiny()
    run = model_run(arch, task, cpu1, RunCounts(7, 5, 3))
    parts = energy_breakdown(run.design_row(4), cpu_coeffs)
    assert sum(parts.values()) == pytest.approx(run.energy(cpu_coeffs), rel=1e-9)


def test_energy_per_datum_scales_out_epochs(gpu1, gpu_coeffs):
    arch = NetworkArchitecture(16, (64, 64, 1))
    task = TaskSpec(16, 1, 10000, 2000)
    one = model_run(arch, task, gpu1, RunCounts(1, task.train_batches, task.test_batches))
    ten = model_run(arch, task, gpu1, RunCounts(10, task.train_batches, task.test_batches))
    assert energy_per_datum(one, gpu_coeffs) == pytest.approx(energy_per_datum(ten, gpu_coeffs))


def test_coefficient_vector_roundtrip():
    labels = ("L1", "L2", "RAM")
    v = np.arange(10, dtype=float)
    k = EnergyCoefficients.from_vector(v, labels)
    assert np.array_equal(k.as_vector(), v)
    assert coefficient_names(labels) == ["k_e", "k_p", "k_o", "k_d", "a_L1", "a_L2", "a_RAM",
                                         "m_L1", "m_L2", "m_RAM"]
    with pytest.raises(ValueError):
        EnergyCoefficients.from_vector(-v, labels)


def test_run_counts_validation():
    with pytest.raises(ValueError):
        RunCounts(1, 0, 0)
    with pytest.raises(ValueError):
        RunCounts(-1, 1, 0)
