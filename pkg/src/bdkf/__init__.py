"""Block-diagonal Kalman filtering for many small coupled sub-systems.

A state-estimation library for n linear sub-systems that share a single
low-dimensional stochastic input. The block-diagonal filter keeps only the
diagonal covariance blocks after each measurement update, which makes the
per-step cost linear in the number of sub-systems while still pooling
information about the shared input across all of them.
"""

from .blockstruct import (
    BlockDiagMat,
    TallBlockMat,
    bd_chol_solve,
    bd_matmul,
    bd_sandwich,
    fro_distance,
    project_block_diag,
    tall_reduce,
)
from .errors import (
    BdkfError,
    ConfigError,
    DefectiveMatrixError,
    NonConvergenceError,
    NumericalError,
    ShapeError,
    SingularBlockError,
    SingularMatrixError,
    UnstableClosedLoopError,
    ValidationError,
)
from .filters import (
    BdFilterState,
    DenseFilterState,
    FactoredGain,
    FastStepWork,
    InputPosterior,
    banded_kf_step,
    bd_kf_fast_step,
    bd_kf_naive_step,
    coupling_posterior,
    full_kf_step,
    init_bd_state,
    init_dense_state,
    poisson_ekf_step,
    poisson_linearize,
)
from .model import (
    CoupledSystem,
    RngSpec,
    Subsystem,
    Trajectory,
    dense_stack,
    make_identical_chain,
    make_random_system,
    make_speckle_system,
    simulate,
    system_from_json,
    system_to_json,
)
from .steady_state import (
    AlphaConstants,
    CouplingSummary,
    Prop2Report,
    SteadyStateResult,
    alpha_constants,
    banded_steady,
    bd_fixed_point_residual,
    compute_coupling_matrix,
    dare_fixed_point,
    perturbation_bounds,
    solve_bd_dare,
    solve_dare,
    true_error_cov,
)

__version__ = "0.1.0"
