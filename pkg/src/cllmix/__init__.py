"""Joint estimation of latent impact and DIF under the complementary
log-log item response model with Gumbel latent-class mixtures."""

from .em import (
    EStepSufficientStats,
    FitOptions,
    FitResult,
    GradientBundle,
    PosteriorWeights,
    class_posteriors,
    e_step,
    fit_constrained,
    fit_penalized,
    gradients,
    line_search,
    m_step_nu,
    prox_update,
    soft_threshold,
)
from .errors import CllmixError, DataError, NumericalError, SchemaVersionError, UsageError
from .likelihood import LikelihoodValue, marginal_loglik, penalized_objective
from .metrics import (
    AggregateReport,
    ReplicationRecord,
    aggregate,
    auc,
    bias_rmse,
    dif_confusion,
    map_classify,
    roc_curve,
)
from .model import (
    ModelParams,
    ResponseMatrix,
    cll_prob,
    cll_score,
    gumbel_pdf,
    gumbel_sample,
    irf,
)
from .quadrature import QuadratureGrid, build_grid, class_nodes
from .regpath import (
    PathRecord,
    PathResult,
    SelectKResult,
    bic,
    lambda_grid,
    select_k,
    two_stage_path,
)
from .simulate import SimDesign, SimTruth, generate, generate_custom

__version__ = "0.1.0"
