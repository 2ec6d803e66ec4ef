"""podlab: a desk-scale power-system dynamics lab for phasor oscillation damping.

Layers, bottom up:

- ``network``: admittance assembly, algebraic network solution, load flow.
- ``devices`` / ``model``: synchronous machines, exciters, governors,
  stabilizers, TCSC; case files and steady-state initialization.
- ``simulation``: fixed-step (Heun) transient simulation with events and a
  controller hook.
- ``modal``: finite-difference linearization, eigenstructure, residues and
  phase compensation.
- ``pod``: the phasor damping controller; low-pass and Kalman estimators,
  with the control-input model as the Kalman filter's control column.
- ``experiments``: scenarios, cost/performance metrics, and the comparative
  studies (equal gain, gain sweep, equal cost, residue-error grid, 39-bus).
"""

from .modal import (
    LinearModel,
    ModeInfo,
    eigendecompose,
    linearize,
    phase_compensation,
    residue,
    screen_modes,
)
from .model import CaseError, PowerSystemModel, builtin_case, load_case
from .network import (
    IslandingError,
    Network,
    NetworkError,
    SingularNetworkError,
    build_admittance,
    newton_load_flow,
    solve_network,
)
from .pod import (
    KalmanPhasorEstimator,
    LpfPhasorEstimator,
    PhasorEstimate,
    PodConfig,
    PPodController,
    damping_control,
    g_func,
    h_func,
)
from .simulation import (
    Event,
    SimResult,
    SimulationDiverged,
    Simulator,
    step_modified_euler,
)

__version__ = "0.1.0"

__all__ = [
    "CaseError",
    "Event",
    "IslandingError",
    "KalmanPhasorEstimator",
    "LinearModel",
    "LpfPhasorEstimator",
    "ModeInfo",
    "Network",
    "NetworkError",
    "PhasorEstimate",
    "PodConfig",
    "PowerSystemModel",
    "PPodController",
    "SimResult",
    "SimulationDiverged",
    "SingularNetworkError",
    "Simulator",
    "build_admittance",
    "builtin_case",
    "damping_control",
    "eigendecompose",
    "g_func",
    "h_func",
    "linearize",
    "load_case",
    "newton_load_flow",
    "phase_compensation",
    "residue",
    "screen_modes",
    "solve_network",
    "step_modified_euler",
]
