"""Sparsified distributed SGD simulator: error-feedback top-k selection, a
regularized variant driven by previous aggregations, experiment harness,
and a Monte Carlo check of the selection rule's posterior semantics."""

from .core import (
    Distortion,
    RegTopKParams,
    SparsePayload,
    WorkerState,
    posterior_distortion,
    regtopk_score,
    regtopk_step,
    top_k_select,
    topk_step,
)
from .harness import (
    DivergenceError,
    ExperimentConfig,
    ExperimentResult,
    RoundTrace,
    aggregate,
    mask_overlap,
    run_experiment,
    sgd_update,
    sparsity_sweep,
)
from .oracle import (
    InnovationModel,
    feasible_indicator,
    mc_posterior,
    ranking_agreement,
)
from .problems import (
    GenConfig,
    LinearDataset,
    generate_datasets,
    global_optimum,
    linreg_gradient,
    linreg_loss,
    logistic_gradient,
    logistic_loss,
    toy_features,
)

__version__ = "0.1.0"
