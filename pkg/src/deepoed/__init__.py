"""Deep optimal experimental design for ODE parameter estimation.

The package trains likelihood-free estimator networks jointly with
measurement designs for a small family of ODE forward models, and ships
the conventional baselines (A-optimality, greedy selection with a
quasi-Newton inner solver, random designs) needed to compare against.
"""

from .baselines import (
    PassCounter,
    aopt_best,
    aopt_loss,
    greedy_search,
    quasi_newton_estimate,
)
from .designers import (
    ContinuousDesignEstimator,
    DesignWeights,
    SPARSITY_THRESHOLD,
    TabuDesignEstimator,
    TrainConfig,
    fit_network,
    soft_shrink,
    sparsity,
    tabu_search,
    update_w_continuous,
)
from .exceptions import (
    ConfigError,
    DeepOedError,
    DivergedError,
    DomainError,
    ExhaustedError,
    NonFiniteError,
    ShapeError,
    SingularError,
)
from .grids import TimeGrid, linear_grid, log_grid
from .harness import ExperimentConfig, gamma_sweep, load_config, run_experiment
from .models import (
    FengInputParams,
    MODEL_NAMES,
    OdeModel,
    exp_design_matrix,
    feng_input,
    make_model,
    solve_forward,
)
from .network import LFENet, load_network, save_network
from .risk import (
    RiskReport,
    batch_risk,
    evaluate,
    nmse_data,
    nmse_params,
    sem_of_means,
    total_risk,
    trapz_variable,
)
from .stochastic import (
    LognormalPrior,
    NoiseSpec,
    TrainingBatch,
    UniformPrior,
    add_noise,
    generate_batch,
    lognormal_params,
    rng_from,
    sample_prior,
    task_seed,
)

__version__ = "0.1.0"

__all__ = [
    "PassCounter", "aopt_best", "aopt_loss", "greedy_search",
    "quasi_newton_estimate",
    "ContinuousDesignEstimator", "DesignWeights", "SPARSITY_THRESHOLD",
    "TabuDesignEstimator", "TrainConfig", "fit_network", "soft_shrink",
    "sparsity", "tabu_search", "update_w_continuous",
    "ConfigError", "DeepOedError", "DivergedError", "DomainError",
    "ExhaustedError", "NonFiniteError", "ShapeError", "SingularError",
    "TimeGrid", "linear_grid", "log_grid",
    "ExperimentConfig", "gamma_sweep", "load_config", "run_experiment",
    "FengInputParams", "MODEL_NAMES", "OdeModel", "exp_design_matrix",
    "feng_input", "make_model", "solve_forward",
    "LFENet", "load_network", "save_network",
    "RiskReport", "batch_risk", "evaluate", "nmse_data", "nmse_params",
    "sem_of_means", "total_risk", "trapz_variable",
    "LognormalPrior", "NoiseSpec", "TrainingBatch", "UniformPrior",
    "add_noise", "generate_batch", "lognormal_params", "rng_from",
    "sample_prior", "task_seed",
]
