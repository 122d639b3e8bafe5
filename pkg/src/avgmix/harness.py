"""Experiment driver: estimator sweeps, metrics, and CSV results.

A run sweeps the machine count m (and the subsampling ratio r for the
corrected estimator) over repeated seeds, comparing:

* ``avgm``      mean of the m shard minimizers,
* ``savgm``     the subsample-corrected combination, expanded over r,
* ``sgd_avgm``  mean of one-pass SGD outputs,
* ``single``    the minimizer of shard 1 alone (n = N/m samples),
* ``oracle``    the centralized minimizer on all N samples, once per
  repetition.

Accuracy is squared parameter error against the repetition's true
parameter; logistic runs can also report held-out log-loss and AUC on a
freshly generated holdout.  Everything is derived from (base_seed,
repetition, m, shard), so results are independent of parallelism and of
whether shards ran locally or on remote workers.

The ``excess_mse`` metric reports squared error minus the oracle's
squared error for the same repetition.  Two readings of error bars for
that quantity exist (over the difference, or over the raw values); the
CSV carries per-repetition rows for both mse and excess_mse, so either
aggregation can be formed downstream.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from . import combine as combine_mod
from . import datagen, runtime, solvers
from .data import Dataset
from .errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    UndefinedMetricError,
)
from .losses import LEAST_SQUARES, RIDGE_LOGISTIC, LossModel
from .rng import TAG_HOLDOUT, TAG_PLAN, TAG_REP, derive_seed

METHOD_AVGM = "avgm"
METHOD_SAVGM = "savgm"
METHOD_SGD_AVGM = "sgd_avgm"
METHOD_SINGLE = "single"
METHOD_ORACLE = "oracle"

METHODS = (METHOD_AVGM, METHOD_SAVGM, METHOD_SGD_AVGM, METHOD_SINGLE, METHOD_ORACLE)

METRIC_MSE = "mse"
METRIC_LOGLOSS = "logloss"
METRIC_AUC = "auc"
METRIC_EXCESS_MSE = "excess_mse"

METRICS = (METRIC_MSE, METRIC_LOGLOSS, METRIC_AUC, METRIC_EXCESS_MSE)

CSV_HEADER = ["method", "m", "r", "repetition", "metric", "value", "stderr", "wall_ms"]


# --- metrics ----------------------------------------------------------------


def mse(theta_hat: np.ndarray, theta_star: np.ndarray) -> float:
    """Squared Euclidean distance |theta_hat - theta_star|^2."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64).ravel()
    theta_star = np.asarray(theta_star, dtype=np.float64).ravel()
    if theta_hat.shape != theta_star.shape:
        raise DimensionMismatchError(
            f"estimate has length {theta_hat.shape[0]}, truth {theta_star.shape[0]}"
        )
    diff = theta_hat - theta_star
    return float(diff @ diff)


def logloss(theta_hat: np.ndarray, holdout: Dataset) -> float:
    """Mean log(1 + exp(-y <theta, x>)) over the holdout; no ridge term."""
    if len(holdout) == 0:
        raise InvalidArgumentError("empty holdout")
    theta_hat = np.asarray(theta_hat, dtype=np.float64).ravel()
    margins = holdout.y * np.asarray(holdout.X @ theta_hat).ravel()
    return float(np.mean(np.logaddexp(0.0, -margins)))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie), via rank sums."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionMismatchError("scores and labels differ in length")
    pos = labels == 1
    neg = labels == -1
    if not np.all(pos | neg):
        raise InvalidArgumentError("labels must be +-1")
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks resolve ties as 1/2
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# --- configuration and result rows -----------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one sweep; see module docstring for the semantics."""

    gen: datagen.GenSpec
    N: int
    m_grid: tuple[int, ...]
    methods: tuple[str, ...]
    r_grid: tuple[float, ...] = ()
    repetitions: int = 1
    metrics: tuple[str, ...] = (METRIC_MSE,)
    solver: solvers.SolverConfig | None = None
    sgd: solvers.SGDOptions = field(
        default_factory=lambda: solvers.SGDOptions(
            schedule=solvers.SCHEDULE_D_OVER_10_D_PLUS_T
        )
    )
    base_seed: int = 0
    redraw_truth: bool = True
    parallelism: int = 1
    remote_endpoints: tuple[str, ...] = ()
    record_timing: bool = True
    holdout_size: int | None = None
    oversample: int = 10
    output_path: str | None = None

    def __post_init__(self):
        if self.N < 1 or self.repetitions < 1:
            raise InvalidArgumentError("N and repetitions must be positive")
        if not self.m_grid:
            raise InvalidArgumentError("m_grid is empty")
        for m in self.m_grid:
            if m < 1 or m > self.N:
                raise InvalidArgumentError(f"m={m} outside [1, N={self.N}]")
        for meth in self.methods:
            if meth not in METHODS:
                raise InvalidArgumentError(f"unknown method {meth!r}")
        if METHOD_SAVGM in self.methods and not self.r_grid:
            raise InvalidArgumentError("savgm requires a nonempty r grid")
        for r in self.r_grid:
            if not (0.0 <= r < 1.0):
                raise InvalidArgumentError(f"r={r} outside [0, 1)")
        for metric in self.metrics:
            if metric not in METRICS:
                raise InvalidArgumentError(f"unknown metric {metric!r}")
        if METRIC_EXCESS_MSE in self.metrics and METHOD_ORACLE not in self.methods:
            raise InvalidArgumentError("excess_mse requires the oracle method")
        if self.remote_endpoints and not self.redraw_truth:
            raise InvalidArgumentError(
                "fixed-truth runs are local-only; recipes couple truth and data seeds"
            )


@dataclass(frozen=True)
class DetailRow:
    method: str
    m: int
    r: float | None
    repetition: int
    metric: str
    value: float
    wall_ms: float


@dataclass(frozen=True)
class AggregateRow:
    method: str
    m: int
    r: float | None
    metric: str
    value: float
    stderr: float
    wall_ms: float


@dataclass
class ExperimentResult:
    details: list[DetailRow]
    aggregates: list[AggregateRow]

    def detail_values(self, method, metric, m=None, r=None) -> np.ndarray:
        out = [
            row.value
            for row in self.details
            if row.method == method
            and row.metric == metric
            and (m is None or row.m == m)
            and (r is None or row.r == r)
        ]
        return np.array(out)

    def aggregate(self, method, metric, m, r=None) -> AggregateRow:
        for row in self.aggregates:
            if (
                row.method == method
                and row.metric == metric
                and row.m == m
                and (r is None or row.r == r)
            ):
                return row
        raise KeyError((method, metric, m, r))


# --- the sweep --------------------------------------------------------------


def default_solver_for(model: LossModel) -> solvers.SolverConfig:
    """Exact normal equations for least squares, Newton otherwise."""
    if model.kind == LEAST_SQUARES:
        return solvers.SolverConfig(method=solvers.CLOSED_FORM_LS)
    return solvers.SolverConfig(method=solvers.NEWTON, grad_tol=1e-10)


def loss_model_for(spec: datagen.GenSpec, ridge_lam: float = 1e-6) -> LossModel:
    if spec.model == datagen.MODEL_BERNOULLI:
        return LossModel("pathological_1d", 1)
    if spec.model == datagen.MODEL_CLICK:
        return LossModel(RIDGE_LOGISTIC, spec.d, ridge_lam)
    return LossModel(LEAST_SQUARES, spec.d)


def _cells(cfg: ExperimentConfig):
    """Expand methods over the grids; oracle collapses to one cell."""
    cells = []
    for method in cfg.methods:
        if method == METHOD_ORACLE:
            cells.append((method, 1, None))
        elif method == METHOD_SAVGM:
            for m in cfg.m_grid:
                for r in cfg.r_grid:
                    cells.append((method, m, r))
        else:
            for m in cfg.m_grid:
                cells.append((method, m, None))
    return cells


def _estimate_cell(cfg, method, m, r, rep_seed, model, spec, solver):
    """Compute the estimator for one (method, m, r) cell of one repetition."""
    plan = runtime.make_shard_plan(cfg.N, m, derive_seed(rep_seed, TAG_PLAN, m))
    if method == METHOD_SGD_AVGM:
        cell_solver = solvers.SolverConfig(
            method=solvers.SGD, sgd=cfg.sgd, grad_tol=solver.grad_tol
        )
    else:
        cell_solver = solver
    template = runtime.TaskTemplate(
        model=model,
        solver=cell_solver,
        subsample_ratio=r if (method == METHOD_SAVGM and r > 0.0) else None,
        recipe=spec,
    )
    if method == METHOD_SINGLE:
        reply = runtime.solve_task(runtime.build_tasks(plan, template)[0])
        return reply.theta1
    if cfg.remote_endpoints:
        replies = runtime.run_remote(plan, template, list(cfg.remote_endpoints))
    else:
        replies = runtime.run_local(plan, template, cfg.parallelism)
    theta1s = [rep.theta1 for rep in replies]
    if method == METHOD_SAVGM and r > 0.0:
        theta2s = [rep.theta2 for rep in replies]
        return combine_mod.savgm_combine(
            np.mean(theta1s, axis=0), np.mean(theta2s, axis=0), r
        ).theta_final
    return combine_mod.avgm_combine(theta1s).theta_final


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    model = loss_model_for(cfg.gen)
    solver = cfg.solver if cfg.solver is not None else default_solver_for(model)
    need_truth = METRIC_MSE in cfg.metrics or METRIC_EXCESS_MSE in cfg.metrics
    need_holdout = METRIC_LOGLOSS in cfg.metrics or METRIC_AUC in cfg.metrics
    if need_holdout and model.kind != RIDGE_LOGISTIC:
        raise InvalidArgumentError("logloss/auc need a logistic-shaped experiment")
    cells = _cells(cfg)
    fixed_spec = replace(cfg.gen, seed=derive_seed(cfg.base_seed, TAG_REP, 0))
    fixed_truth = datagen.draw_truth(fixed_spec) if not cfg.redraw_truth else None

    details: list[DetailRow] = []
    for rep in range(cfg.repetitions):
        rep_seed = derive_seed(cfg.base_seed, TAG_REP, rep)
        spec = replace(cfg.gen, seed=rep_seed)
        truth = fixed_truth if fixed_truth is not None else datagen.draw_truth(spec)
        theta_star = None
        if need_truth:
            theta_star = datagen.resolve_theta_star(
                spec, truth, cfg.N, oversample=cfg.oversample
            )
        holdout = None
        if need_holdout:
            size = cfg.holdout_size or max(10_000, cfg.N // 10)
            holdout_spec = replace(spec, seed=derive_seed(rep_seed, TAG_HOLDOUT))
            holdout = datagen.gen_dataset(holdout_spec, truth, size)

        rep_values: dict[tuple, tuple[float, dict]] = {}
        for method, m, r in cells:
            t0 = time.perf_counter()
            theta_hat = _estimate_cell(
                cfg, method, m, r, rep_seed, model, spec, solver
            )
            wall_ms = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
            values = {}
            if METRIC_MSE in cfg.metrics or METRIC_EXCESS_MSE in cfg.metrics:
                values[METRIC_MSE] = mse(theta_hat, theta_star)
            if METRIC_LOGLOSS in cfg.metrics:
                values[METRIC_LOGLOSS] = logloss(theta_hat, holdout)
            if METRIC_AUC in cfg.metrics:
                scores = np.asarray(holdout.X @ theta_hat).ravel()
                values[METRIC_AUC] = auc(scores, holdout.y)
            rep_values[(method, m, r)] = (wall_ms, values)

        oracle_mse = None
        if METRIC_EXCESS_MSE in cfg.metrics:
            if (METHOD_ORACLE, 1, None) not in rep_values:
                raise InvalidArgumentError("excess_mse requires the oracle method")
            oracle_mse = rep_values[(METHOD_ORACLE, 1, None)][1][METRIC_MSE]
        for (method, m, r), (wall_ms, values) in rep_values.items():
            for metric in cfg.metrics:
                if metric == METRIC_EXCESS_MSE:
                    value = values[METRIC_MSE] - oracle_mse
                else:
                    value = values[metric]
                details.append(
                    DetailRow(
                        method=method,
                        m=m,
                        r=r,
                        repetition=rep,
                        metric=metric,
                        value=value,
                        wall_ms=wall_ms,
                    )
                )

    details.sort(key=_detail_key)
    aggregates = _aggregate(details)
    result = ExperimentResult(details=details, aggregates=aggregates)
    if cfg.output_path:
        write_csv(result, cfg.output_path)
    return result


def _detail_key(row: DetailRow):
    return (row.method, row.m, -1.0 if row.r is None else row.r, row.metric, row.repetition)


def _aggregate(details: list[DetailRow]) -> list[AggregateRow]:
    groups: dict[tuple, list[DetailRow]] = {}
    for row in details:
        groups.setdefault((row.method, row.m, row.r, row.metric), []).append(row)
    out = []
    for (method, m, r, metric), rows in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], -1.0 if kv[0][2] is None else kv[0][2], kv[0][3])
    ):
        values = np.array([row.value for row in rows])
        walls = np.array([row.wall_ms for row in rows])
        stderr = (
            float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        )
        out.append(
            AggregateRow(
                method=method,
                m=m,
                r=r,
                metric=metric,
                value=float(values.mean()),
                stderr=stderr,
                wall_ms=float(walls.mean()),
            )
        )
    return out


# --- CSV --------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(result: ExperimentResult, path) -> None:
    """Detail rows then aggregate rows; floats keep 17 significant digits.

    Detail rows leave stderr empty; aggregate rows leave repetition
    empty.  `read_csv` inverts this exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in result.details:
        writer.writerow(
            [
                row.method,
                row.m,
                "" if row.r is None else _fmt(row.r),
                row.repetition,
                row.metric,
                _fmt(row.value),
                "",
                _fmt(row.wall_ms),
            ]
        )
    for row in result.aggregates:
        writer.writerow(
            [
                row.method,
                row.m,
                "" if row.r is None else _fmt(row.r),
                "",
                row.metric,
                _fmt(row.value),
                _fmt(row.stderr),
                _fmt(row.wall_ms),
            ]
        )
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> ExperimentResult:
    details, aggregates = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgumentError(f"{path} is empty") from None
        if header != CSV_HEADER:
            raise InvalidArgumentError(f"unexpected CSV header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise InvalidArgumentError(
                    f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            method, m, r, repetition, metric, value, stderr, wall = row
            try:
                r_val = None if r == "" else float(r)
                if repetition == "":
                    aggregates.append(
                        AggregateRow(
                            method=method,
                            m=int(m),
                            r=r_val,
                            metric=metric,
                            value=float(value),
                            stderr=float(stderr),
                            wall_ms=float(wall),
                        )
                    )
                else:
                    details.append(
                        DetailRow(
                            method=method,
                            m=int(m),
                            r=r_val,
                            repetition=int(repetition),
                            metric=metric,
                            value=float(value),
                            wall_ms=float(wall),
                        )
                    )
            except ValueError as exc:
                raise InvalidArgumentError(f"line {lineno}: {exc}") from exc
    return ExperimentResult(details=details, aggregates=aggregates)
