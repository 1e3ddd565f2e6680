"""High-order Boris particle pusher via spectral deferred corrections."""

from .boris import boris_velocity_update, rotate
from .errors import (
    DivergenceError,
    NumericalError,
    ParameterError,
    UnsupportedRegimeError,
)
from .fields import (
    AnalyticCoefficients,
    ParticleEnsemble,
    PenningForce,
    PenningParams,
    analytic_coefficients,
    analytic_solution,
    center_of_mass,
    total_energy,
)
from .integrators import (
    StepConfig,
    SweepWorkspace,
    TrajectoryRecord,
    classical_boris_step,
    collocation_end_update,
    picard_sweep,
    residual_norm,
    run_trajectory,
    sdc_sweep,
    sweep_initialize,
)
from .linear_analysis import (
    GridMap,
    LinearSystemOperators,
    assemble_operators,
    build_linear_rhs,
    convergence_map,
    energy_diagnostic,
    energy_map,
    spectral_radius,
    stability_map,
)
from .quadrature import NodeFamily, QuadratureRule, build_rule, make_nodes
from .verlet import VerletMatrices, build_verlet_matrices

__version__ = "0.1.0"
