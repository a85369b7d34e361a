"""Fractional linear-quadratic optimal control.

Value functional via a Fredholm kernel, sample-and-hold feedback, and a
direct-transcription oracle to check both.
"""

from .dynamics import (
    ControlSignal,
    FundamentalMatrixTable,
    Trajectory,
    fundamental_matrix,
    mittag_leffler,
    solve_motion,
)
from .errors import (
    DomainError,
    FLQRError,
    InvalidArgument,
    InvariantViolation,
    NumericOverflow,
    OutOfRange,
    ParseError,
    ScenarioError,
    ScenarioValidationError,
    SolverFailure,
    ValidationError,
)
from .feedback import FeedbackConfig, FeedbackRunReport, cost_J, kappa_path, run_feedback, strategy_U
from .fracspace import (
    Grid,
    MatrixPath,
    PiecewiseLinear,
    Position,
    Problem,
    build_grid,
    eval_history,
    extend_tail,
    frac_integral,
    position_distance,
)
from .kernels import KernelTableK, KernelTableM, Tables, build_K, singular_weights, solve_M
from .oracle import OracleReport, direct_optimum, fd_ci_check
from .scenario import Scenario, parse_scenario
from .value import (
    AuxiliaryPaths,
    ValueReport,
    auxiliary_paths,
    ci_derivatives,
    evaluate,
    hamiltonian,
    hjb_residual,
    value_phi,
)

__version__ = "0.1.0"
