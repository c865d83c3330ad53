"""RLVI: robust maximum-likelihood learning via latent Bernoulli weights.

Corrupted training samples are handled by a per-sample probability of
being clean, inferred jointly with the model parameters by variational
inference.  The corruption level is estimated from the data rather than
supplied.  Batch (EM), stochastic (per-batch SGD), and overparameterized
(epoch-buffered with truncation) variants are provided, together with
synthetic benchmark generators and a Monte-Carlo CLI harness.
"""

from .core import (
    DEGENERACY_MARGIN,
    DualSolverError,
    EStepConvergenceError,
    EStepResult,
    FixedPointConfig,
    capped_estep,
    constrained_estep,
    estep_sweep,
    estimate_epsilon,
    fixed_point_estep,
    kl_bernoulli,
    negative_elbo,
    select_tau,
    stationarity_residual,
    truncate,
)
from .em import DegenerateEStepError, EmConfig, EmTrace, ml_fit, rlvi_em
from .models import (
    FitError,
    GaussParams,
    GaussianModel,
    LinRegParams,
    LinearRegressionModel,
    LogRegParams,
    LogisticRegressionModel,
    PcaModel,
    PcaParams,
    RobustModel,
    SingularFitError,
    gauss_fit,
    gauss_grad,
    gauss_loss,
    linreg_grad,
    linreg_loss,
    logreg_fit,
    logreg_grad,
    logreg_loss,
    pca_fit,
    pca_grad,
    pca_loss,
    wls_fit,
)
from .nn import Mlp, NnConfig, TrainState, detect_overfit, forward_backward, train_rlvi
from .stream import (
    NonFiniteGradientError,
    OnlineMetrics,
    SgdConfig,
    StepResult,
    online_run,
    rlvi_sgd_step,
)
from .synth import (
    CorruptionSpec,
    StreamBatch,
    flip_labels,
    gen_blobs,
    gen_gauss,
    gen_linreg,
    gen_logreg,
    gen_pca,
    gen_stream,
    make_rng,
    pert_sample,
)

__version__ = "0.1.0"
