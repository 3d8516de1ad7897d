"""String Gaussian processes: local kernels glued by shared boundary states.

Construction and joint sampling of paths with their derivatives, exact
global mean/covariance of the glued process, multivariate extensions
through polynomial link functions, dense maximum-marginal-likelihood
regression, and a reversible-jump MCMC sampler that learns latent values,
kernel hyper-parameters and change-points jointly.
"""

__version__ = "0.1.0"

from .kernels import (
    DegeneracyError,
    KernelSpec,
    degeneracy_check,
    eval_block,
    kernel_from_config,
    kernel_to_config,
    linear,
    matern32,
    matern52,
    periodic,
    rational_quadratic,
    spectral_mixture,
    squared_exponential,
)
from .derivative_gp import (
    ZERO_MEAN,
    BoundaryCondition,
    MeanFunction,
    condition_both,
    condition_left,
    constant_mean,
)
from .string_core import (
    DerivativePathSample,
    StringModel,
    StringPartition,
    StringSpec,
    boundary_moments,
    global_cov,
    global_mean,
    kernel_error_table,
    sample_path,
    uniform_partition,
)
from .membrane import (
    LinkFunction,
    MembraneModel,
    elementary_symmetric,
    flexibility_metrics,
    link_eval_and_partials,
    membrane_gradient,
    membrane_moments,
    product_link,
    rq_profile,
    se_profile,
    symmetric_sum,
    weighted_additive,
)
from .regression import (
    FitConfig,
    RegressionModel,
    fit_mle,
    log_marginal_likelihood,
    make_model,
    predict,
    select_boundaries,
)
from .likelihoods import (
    FlatLikelihood,
    GammaUtilityLikelihood,
    GaussianLikelihood,
    PortfolioSpec,
    gamma_utility_likelihood,
)
from .mcmc import (
    McmcChain,
    McmcConfig,
    NonFiniteLikelihoodError,
    RJSampler,
    boundary_membership,
    default_changepoint_prior,
    kernel_membership,
    prior_changepoint_moments,
    run_sampler,
    unwhiten,
    whiten,
)
from .kernel_sampler import KernelSamplerConfig, run_kernel_sampler
