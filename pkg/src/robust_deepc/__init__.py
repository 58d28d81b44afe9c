"""Data-enabled predictive control with Wasserstein-robust regularization.

Control of unknown stochastic LTI systems directly from input/output
data: Hankel-matrix predictors, LP-based plan synthesis (deterministic
and distributionally robust), receding-horizon execution, and numerical
oracles for the underlying worst-case identities.
"""

from .controller import (
    ControllerState,
    RunReport,
    deepc_step,
    mpc_oracle_step,
    robust_deepc_step,
    run_closed_loop,
)
from .deepc import (
    AssembledProblem,
    BoxConstraint,
    Objective,
    RobustConfig,
    assemble_deterministic,
    assemble_robust,
    in_sample_cost,
    robust_regularizer,
    theta_sup,
)
from .errors import (
    ConfigError,
    ExcitationError,
    InfeasibleProblemError,
    InvalidInputError,
    NumericalFailureError,
    RobustDeepcError,
    UnsupportedObjectiveError,
)
from .hankel import (
    HankelBlocks,
    block_hankel,
    build_blocks,
    is_persistently_exciting,
    min_samples,
    trajectory_residual,
)
from .lti import (
    NoiseModel,
    StateSpaceModel,
    Trajectory,
    collect_excited_data,
    lag,
    simulate,
    step,
)
from .optim import (
    LinearProgram,
    LpSolution,
    dual_norm,
    least_squares_residual,
    numerical_rank,
    solve_lp,
)
from .verify import (
    DiscreteDistribution,
    MaxAffineFunction,
    OutOfSampleExperiment,
    WorstCaseReport,
    lemma_worst_case_oracle,
    monte_carlo_bound_check,
    thm2_worst_case_oracle,
    wasserstein_discrete,
)

__version__ = "0.1.0"
