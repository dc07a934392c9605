"""PAC reachability and controllability estimates for black-box control systems."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .space import (
    ERROR_LABEL,
    BallCover,
    BoxSpace,
    CategoricalSpace,
    ball_cover,
    bin_of,
    covering_number,
    space_from_dict,
)
from .planner import (
    ControlPlan,
    ExpectedPlan,
    ReachPlan,
    auto_split,
    control_sample_size,
    da19_interval_size,
    expected_output_sample_size,
    hoeffding_inner_size,
    reach_sample_size,
)
from .systems import (
    CategoricalTable,
    ClippedGaussianMixture,
    Constant,
    DeterministicAffine,
    Discrete,
    FeedbackConvergent,
    InputPolicy,
    Mixture,
    SyntheticSystem,
    Trajectory,
    Uniform,
    derive_seed,
    make_synthetic,
    rollout,
    true_alpha_controllable_set,
    true_mu,
)
from .estimators import (
    ControlEstimate,
    ExpectedEstimate,
    ReachEstimate,
    estimate_controllable,
    estimate_expected,
    estimate_reachable,
    test_reachability,
    validate_bound,
    validate_control_bound,
    validate_expected_bound,
)
from .metrics import coverage, mae, pearson_r, spearman_rho
