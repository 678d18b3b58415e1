"""False-vacuum decay in the ferromagnetic quantum Ising ring.

Exact, effective-model, matrix-product-state and Bloch-Redfield simulations of
bubble creation at resonant longitudinal fields, with the analysis tools used
to extract scaling laws from them.
"""

__version__ = "0.1.0"

from .lattice import ModelParams, ResonanceSpec, SpinConfig, bubble_decomposition  # noqa: E402
from .hamiltonians import OperatorTerm, SparseHamiltonian, build_full  # noqa: E402
from .effective import build_eff_n, build_eff_n1, extract_effective_couplings  # noqa: E402
from .observables import (  # noqa: E402
    ObservableRecord,
    ShotSet,
    blockade_density,
    bubble_density,
    interface_density,
    magnetization,
    sample_shots,
)
from .schedules import DriveSchedule, ModulatedFlip, false_vacuum_protocol  # noqa: E402
from .evolve import propagate, propagate_driven, quench_two_bubble_scenario  # noqa: E402

__all__ = [
    "ModelParams", "ResonanceSpec", "SpinConfig", "bubble_decomposition",
    "OperatorTerm", "SparseHamiltonian", "build_full",
    "build_eff_n", "build_eff_n1", "extract_effective_couplings",
    "ObservableRecord", "ShotSet", "blockade_density", "bubble_density", "interface_density",
    "magnetization", "sample_shots",
    "DriveSchedule", "ModulatedFlip", "false_vacuum_protocol",
    "propagate", "propagate_driven", "quench_two_bubble_scenario",
]
