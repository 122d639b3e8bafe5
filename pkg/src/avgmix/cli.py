"""Command-line front end.

Subcommands::

    gen         emit a synthetic dataset file (sparse text format)
    solve       one local solve on a dataset file
    experiment  run a sweep and write the results CSV
    worker      serve the wire protocol until a shutdown frame
    suggest-r   print the suggested subsampling ratio

Usage errors exit with status 2; runtime failures exit with status 1
and a message on stderr.  The experiment subcommand also reads defaults
from a ``key=value`` file (# comments allowed); explicit flags win.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import combine, data, datagen, harness, runtime, solvers
from .errors import AvgmixError


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    out = tuple(_positive_int(tok) for tok in text.split(",") if tok)
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(tok for tok in text.split(",") if tok)


def read_config_file(path) -> dict[str, str]:
    """key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise AvgmixError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base seed")
    common.add_argument(
        "--parallelism", type=_positive_int, default=1, help="local worker threads"
    )
    common.add_argument(
        "--remote",
        type=_str_list,
        default=(),
        metavar="HOST:PORT,...",
        help="run shards on these workers instead of in-process",
    )

    parser = argparse.ArgumentParser(prog="avgmix")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", parents=[common], help="emit a dataset file")
    p_gen.add_argument("--model", required=True, choices=datagen.MODELS)
    p_gen.add_argument("--d", type=_positive_int, required=True)
    p_gen.add_argument("--count", type=_positive_int, required=True)
    p_gen.add_argument(
        "--feature-style",
        choices=(datagen.FEATURE_SPARSE5, datagen.FEATURE_DENSE),
        default=datagen.FEATURE_SPARSE5,
    )
    p_gen.add_argument("--nnz", type=_positive_int, default=5)
    p_gen.add_argument("--out", required=True)

    p_solve = sub.add_parser("solve", parents=[common], help="one local solve")
    p_solve.add_argument("--data", required=True, help="dataset file (text format)")
    p_solve.add_argument("--d", type=_positive_int, default=None)
    p_solve.add_argument(
        "--loss",
        choices=("least_squares", "ridge_logistic", "pathological_1d"),
        default="least_squares",
    )
    p_solve.add_argument("--lam", type=float, default=0.0, help="ridge weight")
    p_solve.add_argument("--method", choices=solvers.METHODS, default=solvers.NEWTON)
    p_solve.add_argument("--grad-tol", type=float, default=1e-10)
    p_solve.add_argument("--max-iter", type=_positive_int, default=2000)

    p_exp = sub.add_parser("experiment", parents=[common], help="run a sweep")
    p_exp.add_argument("--config", default=None, help="key=value defaults file")
    p_exp.add_argument("--model", choices=datagen.MODELS)
    p_exp.add_argument("--d", type=_positive_int)
    p_exp.add_argument("--N", type=_positive_int)
    p_exp.add_argument("--m", type=_int_list, metavar="M1,M2,...")
    p_exp.add_argument("--methods", type=_str_list, metavar="NAME,...")
    p_exp.add_argument("--r", type=_float_list, default=None, metavar="R1,R2,...")
    p_exp.add_argument("--metrics", type=_str_list, default=None)
    p_exp.add_argument("--reps", type=_positive_int, default=None)
    p_exp.add_argument(
        "--feature-style",
        choices=(datagen.FEATURE_SPARSE5, datagen.FEATURE_DENSE),
        default=None,
    )
    p_exp.add_argument("--out", default=None, help="results CSV path")

    p_worker = sub.add_parser("worker", parents=[common], help="serve the wire protocol")
    p_worker.add_argument("--listen", required=True, metavar="HOST:PORT")

    p_sug = sub.add_parser("suggest-r", parents=[common], help="subsampling ratio hint")
    p_sug.add_argument("--m", type=_positive_int, required=True)
    p_sug.add_argument("--n", type=_positive_int, required=True)
    p_sug.add_argument("--scale", type=float, default=1.0)

    return parser


_EXPERIMENT_DEFAULTS = {
    "model": datagen.MODEL_NORMAL,
    "d": 20,
    "N": 100_000,
    "m": (2, 4, 8, 16, 32, 64, 128),
    "methods": (harness.METHOD_AVGM, harness.METHOD_ORACLE),
    "r": (),
    "metrics": (harness.METRIC_MSE,),
    "reps": 20,
    "feature_style": datagen.FEATURE_SPARSE5,
    "out": None,
}

_CONFIG_PARSERS = {
    "model": str,
    "d": int,
    "N": int,
    "m": lambda s: _int_list(s),
    "methods": lambda s: _str_list(s),
    "r": lambda s: _float_list(s),
    "metrics": lambda s: _str_list(s),
    "reps": int,
    "feature_style": str,
    "out": str,
    "seed": int,
    "parallelism": int,
    "remote": lambda s: _str_list(s),
}


def _merge_experiment_args(args) -> dict:
    merged = dict(_EXPERIMENT_DEFAULTS)
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in _CONFIG_PARSERS:
                raise AvgmixError(f"unknown config key {key!r}")
            merged[key] = _CONFIG_PARSERS[key](raw)
    for key in _EXPERIMENT_DEFAULTS:
        flag = getattr(args, key if key != "N" else "N")
        if flag is not None:
            merged[key] = flag
    for key in ("seed", "parallelism", "remote"):
        value = getattr(args, key)
        if value or key not in merged:
            merged[key] = value
    return merged


def _cmd_gen(args) -> int:
    spec = datagen.GenSpec(
        model=args.model,
        d=args.d,
        feature_style=args.feature_style,
        seed=args.seed,
        nnz=args.nnz,
    )
    truth = datagen.draw_truth(spec)
    dataset = datagen.gen_dataset(spec, truth, args.count)
    data.save_text(dataset, args.out)
    print(f"wrote {len(dataset)} samples of dimension {dataset.d} to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    from .losses import LossModel

    dataset = data.load_text(args.data, d=args.d)
    model = LossModel(args.loss, dataset.d, args.lam)
    cfg = solvers.SolverConfig(
        method=args.method,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
        seed=args.seed,
    )
    est = solvers.solve(model, dataset, cfg)
    print("theta " + " ".join(f"{x:.17g}" for x in est.theta))
    print(
        f"iterations {est.iterations} grad_norm {est.final_grad_norm:.3e} "
        f"converged {est.converged} wall_s {est.wall_time:.3f}"
    )
    return 0


def _cmd_experiment(args) -> int:
    merged = _merge_experiment_args(args)
    spec = datagen.GenSpec(
        model=merged["model"], d=merged["d"], feature_style=merged["feature_style"]
    )
    cfg = harness.ExperimentConfig(
        gen=spec,
        N=merged["N"],
        m_grid=tuple(merged["m"]),
        methods=tuple(merged["methods"]),
        r_grid=tuple(merged["r"]),
        repetitions=merged["reps"],
        metrics=tuple(merged["metrics"]),
        base_seed=merged["seed"],
        parallelism=merged["parallelism"],
        remote_endpoints=tuple(merged["remote"]),
        output_path=merged["out"],
    )
    result = harness.run_experiment(cfg)
    for row in result.aggregates:
        r_txt = "-" if row.r is None else f"{row.r:g}"
        print(
            f"{row.method:>9} m={row.m:<4} r={r_txt:<6} {row.metric}: "
            f"{row.value:.6g} +- {row.stderr:.2g}"
        )
    if merged["out"]:
        print(f"wrote {merged['out']}")
    return 0


def _cmd_worker(args) -> int:
    print(f"worker listening on {args.listen}", flush=True)
    runtime.worker_serve(args.listen)
    return 0


def _cmd_suggest_r(args) -> int:
    print(f"{combine.suggest_ratio(args.m, args.n, args.scale):.17g}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "experiment": _cmd_experiment,
    "worker": _cmd_worker,
    "suggest-r": _cmd_suggest_r,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except AvgmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
