"""Heavy-tailed mean estimation under weak moment assumptions.

A library and CLI around a polynomial-time mean estimator for
distributions that only admit a (1+alpha)-moment bound in every
direction, the semidefinite testing program it is built on, hard
discrete instances that pin down what any estimator can achieve, and a
Monte Carlo harness for verifying the error-scaling behavior.
"""

from .core import (
    Estimate,
    EstimatorConfig,
    Sample,
    SolverConfig,
    categorical,
    child_seed,
    desk_profile,
    make_rng,
    paper_profile,
)
from .distributions import (
    CorruptionModel,
    DiscreteDistribution,
    MassOverflow,
    SphericalGaussian,
    SphericalStudentT,
    SymmetricParetoProduct,
    check_weak_moment,
    corrupt,
    corruption_pair,
    distribution_from_spec,
    distribution_to_spec,
    gaussian_abs_moment,
    lower_bound_family,
    point_mass,
    sample_iid,
    spike_magnitude,
    student_t_abs_moment,
)
from .estimator import (
    BucketSet,
    DescentTrace,
    EmptyAfterPrune,
    EmptySample,
    EstimatorError,
    bucket_means,
    critical_radius,
    estimate_distance,
    estimate_gradient,
    estimate_mean,
    estimate_mean_detailed,
    gradient_descent,
    initial_mean_estimate,
    prune,
    prune_radius,
)
from .harness import (
    ESTIMATORS,
    DegenerateGrid,
    GridPoint,
    ScalingFit,
    TrialReport,
    fit_exponent,
    minimax_failure_experiment,
    minimax_radius,
    run_grid,
)
from .sdp import (
    DimensionGuard,
    EnumerationGuard,
    NonConvergence,
    SdpError,
    SdpSolution,
    TestingProgramInstance,
    instance_from_json,
    instance_to_json,
    mt_value_curve,
    solve_mt,
    solve_mte_bruteforce,
)

__version__ = "0.1.0"
