"""Polyak-Ruppert averaged SGD with multiplier-bootstrap confidence sets.

The package couples a reproducible SGD/bootstrap simulator (counter-based
noise streams shared between the main and perturbed trajectories) with exact
linearization machinery (Q_i transfer matrices, the finite-horizon covariance
Sigma_n, its limit Sigma_inf, and the closed-form constants bounding them),
plus distance estimators and an experiment suite that exercises the
identities, envelopes, rates and the lower-bound phenomenon at desk scale.
"""

__version__ = "0.1.0"

from .schedule import StepSchedule, validate_basic, validate_bootstrap
from .model import (
    NoiseOracle,
    NoiseSample,
    ProblemSpec,
    gaussian_oracle,
    gradient,
    hessian_at_min,
    logistic_data_oracle,
    logistic_ridge_problem,
    noise_block,
    quadratic_problem,
    remainder_h,
    replay_noise,
    sample_noise,
    scalar_unit_problem,
    truncated_gaussian_oracle,
    zero_noise_oracle,
)
from .sgd import SgdDivergedError, SgdRun, run_sgd, run_sgd_batch
from .bootstrap import (
    BootstrapEnsemble,
    BoundedWeightLaw,
    ConfidenceRegion,
    build_ensemble,
    confidence_region,
    default_weight_law,
    make_weight_law,
    run_bootstrap_replicate,
    sigma_n_boot,
    unit_weight_law,
)
from .linearization import (
    CovarianceSet,
    QFamily,
    WDSplit,
    compute_covariances,
    compute_q_family,
    identity_residuals,
    identity_single,
    identity_sum,
    scalar_q_weights,
    scalar_sigma2,
    split_w_d,
    theoretical_constants,
)
from .distances import (
    DistanceReport,
    ball_class_proxy,
    empirical_ks_1d,
    ks_two_gaussians_1d,
    projected_convex_proxy,
    tv_comparison_bound,
)
from .rng import derive_key, stream

__all__ = [name for name in dir() if not name.startswith("_")]
