"""Training-energy model for fully connected networks.

Working-set sizes are derived from the architecture, placed into a memory
hierarchy, and priced with an affine per-level access cost. The package also
ingests watt-meter data into per-run energy, fits the model's coefficients,
and recommends cache-friendly network sizes.
"""

__version__ = "0.1.0"

from .arch import (  # noqa: E402
    NetworkArchitecture,
    OpCounts,
    ShapeFamily,
    TaskSpec,
    count_ops,
    count_parameters,
    solve_widths,
)
from .energy_model import (  # noqa: E402
    EnergyCoefficients,
    RunCounts,
    build_design_row,
    model_run,
    pass_energy,
    phi,
    total_energy,
)
from .worksets import (  # noqa: E402
    HardwareSpec,
    MemoryLevel,
    Placement,
    WorkingSets,
    compute_working_sets,
    place_working_sets,
)

__all__ = [
    "EnergyCoefficients",
    "HardwareSpec",
    "MemoryLevel",
    "NetworkArchitecture",
    "OpCounts",
    "Placement",
    "RunCounts",
    "ShapeFamily",
    "TaskSpec",
    "WorkingSets",
    "build_design_row",
    "compute_working_sets",
    "count_ops",
    "count_parameters",
    "model_run",
    "pass_energy",
    "phi",
    "place_working_sets",
    "solve_widths",
    "total_energy",
]
