"""Discretizations, invariant-measure estimators and rate benchmarks for the
stochastic heat equation ``dX = (AX + F(X)) dt + dW`` on (0, 1) with Dirichlet
boundary conditions and additive space-time white noise."""

from .bench import SweepResult, emit_csv, fit_loglog, read_sweep_csv, run_h_sweep, run_tau_sweep
from .config import ExperimentConfig, parse_config
from .dynamics import (
    FiniteElement,
    Nonlinearity,
    SchemeConfig,
    SpectralGalerkin,
    TrajectoryCSV,
    nemytskii_load_fem,
    nemytskii_project_spectral,
    sample_noise_fem,
    sample_noise_spectral,
    simulate,
    step_fem,
    step_spectral,
    synchronous_gap,
)
from .ergodic import (
    CIEstimate,
    RunningAverage,
    TestFunctional,
    batch_means_ci,
    estimate_invariant_functional,
    update_time_average,
)
from .errors import (
    CholeskyFailure,
    ConvergenceFailure,
    DegenerateFit,
    EmptyPartition,
    InsufficientBatches,
    InsufficientSignal,
    InvalidConfig,
    NonMonotonePartition,
    NumericalError,
    SchemaViolation,
    SolverBreakdown,
    SpdeInvError,
    TailNotConverged,
    ValidationError,
    ValueOutOfRange,
)
from .fem import (
    FemOperator,
    Mesh,
    NodalField,
    TridiagonalMatrix,
    assemble,
    build_mesh,
    generalized_eigs,
    l2_project,
    ritz_project,
    semi_implicit_solve,
    trace_neg_half_power,
)
from .oracle import (
    LinearInvariantLaw,
    char_functional,
    h_weak_error_exact,
    mode_variance,
    second_moment,
    tau_weak_error_exact,
)
from .poisson import (
    Budget,
    GalerkinSystem,
    PoissonEstimate,
    bel_gradient,
    estimate_phibar,
    generator_apply_fd,
    poisson_residual,
    poisson_solution_estimate,
)
from .rng import NoiseSource
from .spectral import (
    EigenPair,
    SpectralField,
    eigen_pair,
    frac_power_apply,
    project_modes,
    semigroup_apply,
    sobolev_norm,
)

__version__ = "0.1.0"
