"""Communication-efficient distributed empirical risk minimization.

One-shot averaging of shard minimizers, subsample-corrected averaging,
and averaged stochastic gradient descent, with synthetic data sources,
local solvers, a deterministic shard runtime (in-process or over TCP),
and an experiment harness.
"""

from .combine import (
    CombineResult,
    SubsampleSpec,
    avgm_combine,
    savgm_combine,
    sgd_avgm_combine,
    subsample_without_replacement,
    suggest_ratio,
)
from .data import Dataset, Sample, load_text, save_text
from .datagen import (
    GenSpec,
    TruthRecord,
    draw_truth,
    gen_click_dataset,
    gen_dataset,
    gen_range,
    resolve_theta_star,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    auc,
    logloss,
    mse,
    read_csv,
    run_experiment,
    write_csv,
)
from .losses import (
    LossModel,
    empirical_risk,
    empirical_risk_gradient,
    empirical_risk_hessian,
    least_squares,
    loss_gradient,
    loss_hessian,
    loss_value,
    pathological_1d,
    ridge_logistic,
)
from .runtime import (
    ShardPlan,
    TaskTemplate,
    WorkerServer,
    make_shard_plan,
    run_local,
    run_remote,
    solve_task,
    worker_serve,
)
from .solvers import (
    LocalEstimate,
    SGDOptions,
    SolverConfig,
    solve,
    solve_closed_form_ls,
    solve_newton,
    solve_sgd,
    solve_two_stage,
)
from .wire import WorkerReply, WorkerTask

__version__ = "0.1.0"

__all__ = [
    "CombineResult",
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "GenSpec",
    "LocalEstimate",
    "LossModel",
    "Sample",
    "SGDOptions",
    "ShardPlan",
    "SolverConfig",
    "SubsampleSpec",
    "TaskTemplate",
    "TruthRecord",
    "WorkerReply",
    "WorkerServer",
    "WorkerTask",
    "auc",
    "avgm_combine",
    "draw_truth",
    "empirical_risk",
    "empirical_risk_gradient",
    "empirical_risk_hessian",
    "gen_click_dataset",
    "gen_dataset",
    "gen_range",
    "least_squares",
    "load_text",
    "logloss",
    "loss_gradient",
    "loss_hessian",
    "loss_value",
    "make_shard_plan",
    "mse",
    "pathological_1d",
    "read_csv",
    "resolve_theta_star",
    "ridge_logistic",
    "run_experiment",
    "run_local",
    "run_remote",
    "save_text",
    "savgm_combine",
    "sgd_avgm_combine",
    "solve",
    "solve_closed_form_ls",
    "solve_newton",
    "solve_sgd",
    "solve_task",
    "solve_two_stage",
    "subsample_without_replacement",
    "suggest_ratio",
    "worker_serve",
    "write_csv",
]
