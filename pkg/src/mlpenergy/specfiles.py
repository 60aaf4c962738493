"""YAML readers and writers for hardware specs and coefficient sets."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from .energy_model import EnergyCoefficients
from .errors import ConfigMismatch, ParseError
from .worksets import HardwareSpec, MemoryLevel

K_O_UNITS = {"J/FLOP": 1.0, "J/GFLOP": 1e-9}
M_UNITS = {"J/byte": 1.0, "J/KiB": 2.0**-10, "J/MiB": 2.0**-20}

BUNDLED = {
    "cpu1": "cpu1.yaml",
    "cpu1-l1-32k": "cpu1_l1_32k.yaml",
    "cpu1-dual-l3": "cpu1_dual_l3.yaml",
    "gpu1": "gpu1.yaml",
    "cpu-coeffs": "cpu_coeffs.yaml",
    "gpu-coeffs": "gpu_coeffs.yaml",
}


def _read_text(source) -> tuple[str, str]:
    """Resolve a path or bundled name to (text, display name)."""
    source = str(source)
    if source in BUNDLED:
        ref = resources.files("mlpenergy") / "data" / BUNDLED[source]
        return ref.read_text(encoding="utf-8"), f"<bundled {source}>"
    path = Path(source)
    try:
        return path.read_text(encoding="utf-8"), str(path)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", location=str(path)) from None


def _load_yaml(source) -> tuple[dict, str]:
    text, name = _read_text(source)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{name}:{mark.line + 1}" if mark is not None else name
        raise ParseError(str(getattr(exc, "problem", exc)), location=loc) from None
    if not isinstance(doc, dict):
        raise ParseError("expected a mapping at top level", location=name)
    return doc, name


def _require(doc: dict, key: str, name: str):
    if key not in doc:
        raise ParseError(f"missing required key {key!r}", location=name)
    return doc[key]


def hardware_from_dict(doc: dict, name: str = "<dict>") -> HardwareSpec:
    try:
        levels = []
        for i, lv in enumerate(_require(doc, "levels", name)):
            cap = lv.get("capacity_bytes")
            levels.append(
                MemoryLevel(
                    label=str(_require(lv, "label", f"{name} levels[{i}]")),
                    capacity=None if cap is None else float(cap),
                    scope=lv.get("scope", "per-unit"),
                    shared_by=int(lv.get("shared_by", 1)),
                )
            )
        return HardwareSpec(
            name=str(_require(doc, "name", name)),
            n_units=int(_require(doc, "n_units", name)),
            levels=tuple(levels),
            idle_power=float(doc.get("idle_power_w", 0.0)),
            hardware_class=str(doc.get("hardware_class", "cpu")),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), location=name) from None


def hardware_to_dict(hw: HardwareSpec) -> dict:
    return {
        "name": hw.name,
        "hardware_class": hw.hardware_class,
        "n_units": hw.n_units,
        "idle_power_w": float(hw.idle_power),
        "levels": [
            {
                "label": lv.label,
                "capacity_bytes": None if lv.capacity is None else float(lv.capacity),
                "scope": lv.scope,
                "shared_by": lv.shared_by,
            }
            for lv in hw.levels
        ],
    }


def load_hardware(source) -> HardwareSpec:
    doc, name = _load_yaml(source)
    return hardware_from_dict(doc, name)


def dump_hardware(hw: HardwareSpec) -> str:
    return yaml.safe_dump(hardware_to_dict(hw), sort_keys=False)


def coefficients_from_dict(doc: dict, name: str = "<dict>") -> tuple[EnergyCoefficients, str]:
    """Returns the coefficient set and its hardware-class tag."""
    units = doc.get("units", {}) or {}
    k_o_unit = units.get("k_o", "J/FLOP")
    m_unit = units.get("m", "J/byte")
    if k_o_unit not in K_O_UNITS:
        raise ParseError(f"unsupported k_o unit {k_o_unit!r}", location=name)
    if m_unit not in M_UNITS:
        raise ParseError(f"unsupported m unit {m_unit!r}", location=name)
    try:
        levels = _require(doc, "levels", name)
        coeffs = EnergyCoefficients(
            k_e=float(doc.get("k_e", 0.0)),
            k_p=float(doc.get("k_p", 0.0)),
            k_o=float(doc.get("k_o", 0.0)) * K_O_UNITS[k_o_unit],
            k_d=float(doc.get("k_d", 0.0)),
            a=tuple(float(lv.get("a", 0.0)) for lv in levels),
            m=tuple(float(lv.get("m", 0.0)) * M_UNITS[m_unit] for lv in levels),
            labels=tuple(str(_require(lv, "label", name)) for lv in levels),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), location=name) from None
    return coeffs, str(doc.get("hardware_class", ""))


def coefficients_to_dict(coeffs: EnergyCoefficients, hardware_class: str = "") -> dict:
    return {
        "hardware_class": hardware_class,
        "units": {"k_o": "J/FLOP", "m": "J/byte"},
        "k_e": coeffs.k_e,
        "k_p": coeffs.k_p,
        "k_o": coeffs.k_o,
        "k_d": coeffs.k_d,
        "levels": [
            {"label": lb, "a": a, "m": m} for lb, a, m in zip(coeffs.labels, coeffs.a, coeffs.m)
        ],
    }


def load_coefficients(source) -> tuple[EnergyCoefficients, str]:
    doc, name = _load_yaml(source)
    return coefficients_from_dict(doc, name)


def dump_coefficients(coeffs: EnergyCoefficients, hardware_class: str = "") -> str:
    return yaml.safe_dump(coefficients_to_dict(coeffs, hardware_class), sort_keys=False)


def check_compatible(coeffs: EnergyCoefficients, hw: HardwareSpec) -> None:
    if tuple(coeffs.labels) != hw.labels:
        raise ConfigMismatch(
            f"coefficient levels {list(coeffs.labels)} do not match hardware {hw.name} levels {list(hw.labels)}"
        )
