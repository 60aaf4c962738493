import numpy as np
import pytest
from hypothesis import given, settings

from mlpenergy.energy_model import EnergyCoefficients
from mlpenergy.errors import ConfigMismatch, ParseError
from mlpenergy.specfiles import (
    BUNDLED,
    check_compatible,
    dump_coefficients,
    dump_hardware,
    load_coefficients,
    load_hardware,
)
from synthetic import random_hardware, seeds


@pytest.mark.parametrize("name", ["cpu1", "cpu1-l1-32k", "cpu1-dual-l3", "gpu1"])
def test_bundled_hardware_roundtrips(name, tmp_path):
    hw = load_hardware(name)
    path = tmp_path / "hw.yaml"
    path.write_text(dump_hardware(hw))
    assert load_hardware(path) == hw


def test_bundled_hardware_values(cpu1, gpu1):
    assert cpu1.n_units == 36 and cpu1.idle_power == 220
    assert cpu1.labels == ("L1", "L2", "L3", "RAM")
    assert cpu1.levels[0].capacity == 64 * 1024
    assert load_hardware("cpu1-l1-32k").levels[0].capacity == 32 * 1024
    assert gpu1.n_units == 168 and gpu1.idle_power == 374 and gpu1.hardware_class == "gpu"
    assert gpu1.levels[1].capacity == 6 * 2**20 and gpu1.levels[1].shared_by == 84


def test_bundled_coefficients_units(cpu_coeffs, gpu_coeffs):
    assert cpu_coeffs.k_p == 1460
    assert cpu_coeffs.k_o == pytest.approx(744e-9)
    assert cpu_coeffs.a == (0, 59.3, 215, 305)
    assert cpu_coeffs.m[1] == pytest.approx(23.0 / 2**20)
    assert gpu_coeffs.k_e == 272000 and gpu_coeffs.k_d == 33
    assert gpu_coeffs.m[2] == pytest.approx(5.7 / 2**20)
    assert gpu_coeffs.labels == ("L1", "L2", "RAM")


@pytest.mark.parametrize("name", ["cpu-coeffs", "gpu-coeffs"])
def test_coefficients_roundtrip(name, tmp_path):
    coeffs, cls = load_coefficients(name)
    path = tmp_path / "k.yaml"
    path.write_text(dump_coefficients(coeffs, cls))
    again, cls2 = load_coefficients(path)
    assert again == coeffs and cls2 == cls


@settings(max_examples=50)
@given(seed=seeds)
def test_random_specs_roundtrip(seed, tmp_path_factory):
    rng = np.random.default_rng(seed)
    hw = random_hardware(rng)
    k = EnergyCoefficients.from_vector(rng.exponential(size=4 + 2 * len(hw.levels)), hw.labels)
    d = tmp_path_factory.mktemp("rt")
    (d / "hw.yaml").write_text(dump_hardware(hw))
    (d / "k.yaml").write_text(dump_coefficients(k, "cpu"))
    assert load_hardware(d / "hw.yaml") == hw
    assert load_coefficients(d / "k.yaml")[0] == k


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError) as err:
        load_hardware(tmp_path / "nope.yaml")
    assert err.value.exit_code == 2


def test_malformed_yaml_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: x\nn_units: 4\nlevels: [\n  {label: L1\n")
    with pytest.raises(ParseError) as err:
        load_hardware(path)
    assert f"{path}:" in str(err.value)


def test_missing_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: x\nlevels: []\n")
    with pytest.raises(ParseError):
        load_hardware(path)


def test_level_mismatch(cpu1, gpu_coeffs, cpu_coeffs):
    check_compatible(cpu_coeffs, cpu1)
    with pytest.raises(ConfigMismatch) as err:
        check_compatible(gpu_coeffs, cpu1)
    assert err.value.exit_code == 3


def test_every_bundled_name_loads():
    for name in BUNDLED:
        (load_coefficients if "coeffs" in name else load_hardware)(name)
