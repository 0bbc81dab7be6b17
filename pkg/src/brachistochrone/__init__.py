"""Time-optimal single-excitation transfer along a qubit chain.

Couplings ``J_m(t)`` between neighbouring sites obey a fixed budget
``sum J_m**2 = J0**2``. The time-optimal schedule solves a two-point boundary
value problem in the couplings, their Lagrange multipliers and the
wavefunction; :mod:`.solver` finds it by shooting for short chains and by
adjoint-gradient search for long ones.
"""

from .baselines import (
    Schedule, perfect_transfer_schedule, perfect_transfer_time, simulate_schedule,
    stepwise_schedule, stepwise_time,
)
from .chain import (
    ChainSpec, ControlState, WaveState, build_generator, build_hamiltonian, coupling_norm,
    multiplier_index, multiplier_pair,
)
from .dynamics import (
    ConservationReport, Trajectory, conservation_report, from_real_gauge, integrate, qbe_rhs,
    schrodinger_rhs, to_real_gauge,
)
from .errors import (
    AdjointError, BasisClosureError, BrachistochroneError, ChecksumError, ConvergenceError,
    DivergenceError, GaugeError, IndexDomainError, NumericalError, PreconditionError, RankError,
    SchemaError, ShapeError, StiffnessError,
)
from .oracle import (
    OracleReport, brute_force_min_time, closure_report, commutator_rhs_oracle, expm_propagate,
    max_fidelity, rhs_equivalence,
)
from .solver import (
    ScalingFit, ShootingParams, Solution, continuation_guess, fit_scaling, gradient_check,
    initial_control, rescale_solution, shooting_residual, solve, solve_gradient,
    solve_shooting, sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Schedule", "perfect_transfer_schedule", "perfect_transfer_time", "simulate_schedule",
    "stepwise_schedule", "stepwise_time", "ChainSpec", "ControlState", "WaveState",
    "build_generator", "build_hamiltonian", "coupling_norm", "multiplier_index",
    "multiplier_pair", "ConservationReport", "Trajectory", "conservation_report",
    "from_real_gauge", "integrate", "qbe_rhs", "schrodinger_rhs", "to_real_gauge",
    "AdjointError", "BasisClosureError", "BrachistochroneError", "ChecksumError",
    "ConvergenceError", "DivergenceError", "GaugeError", "IndexDomainError", "NumericalError",
    "PreconditionError", "RankError", "SchemaError", "ShapeError", "StiffnessError",
    "OracleReport", "brute_force_min_time", "closure_report", "commutator_rhs_oracle",
    "expm_propagate", "max_fidelity", "rhs_equivalence", "ScalingFit", "ShootingParams",
    "Solution", "continuation_guess", "fit_scaling", "gradient_check", "initial_control",
    "rescale_solution", "shooting_residual", "solve", "solve_gradient", "solve_shooting",
    "sweep",
]
