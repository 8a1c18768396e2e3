"""Natural-gradient black-box variational inference with Gaussian posteriors.

The optimizer needs only log-likelihood function queries: the variational
score enters in closed form, so no model gradients or Fisher matrices are
ever required.  See the README for the update rules and the CLI.
"""

from .baselines import Chain, metrics_classification, metrics_regression, mle_fit, rwm_sample
from .errors import (
    ConfigError,
    DimMismatch,
    DomainError,
    InsufficientSamples,
    NonFiniteLoglik,
    NonFiniteLogPost,
    NotPositive,
    NotSPD,
    ParseError,
    QbviError,
    Singular,
    TooShort,
)
from .estimators import (
    CvCoefficients,
    GradientEstimate,
    analytic_var_m1,
    analytic_var_m2,
    cv_coefficients,
    estimate_cv,
    estimate_naive,
    wishart1_cov,
)
from .gaussian import CovStructure, GaussianVariational, ScoreGrad
from .invgamma import (
    IGParams,
    digamma,
    ig_fim,
    ig_log_density,
    ig_natgrad_score,
    ig_sample,
    ig_score,
    mf_step,
    trigamma,
)
from .models import (
    ConstantModel,
    Dataset,
    GarchModel,
    GaussianRegressionModel,
    LogisticModel,
    TransformChain,
    apply_transforms,
    garch_loglik,
    gaussian_reg_loglik,
    har_features,
    logistic_loglik,
    simulate_garch,
)
from .training import (
    FitResult,
    TrainConfig,
    clip_gradient,
    estimate_lb,
    fit,
    fit_meanfield,
    momentum_update,
    should_stop,
    smooth_lb,
    step_size,
)
from .updates import (
    BoundedStep,
    LogTransform,
    PdStrategy,
    PriorSpec,
    Retraction,
    retract_spd,
    safe_beta,
    step_diag,
    step_diag_logxform,
    step_full,
    step_full_manifold,
)

__version__ = "0.1.0"
