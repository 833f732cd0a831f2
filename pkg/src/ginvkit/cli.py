"""Command-line front end.

Eight subcommands: predict (concentration prediction to stdout JSON),
invert (file-to-file minimal generalized inverse), check (verify the
defining property of a computed inverse), experiment (concentration
trials to CSV), baseline (random-submatrix comparison table), radon
(one sampled tomographic matrix), tomo-table (sparse-to-MPP ratio
table over deltas), ensembles (ensemble sweep table).

Exit codes: 0 on success, 1 on usage errors, 2 on domain or solver
errors; a check run whose verdict is negative also exits 2. Every file
output gets a .json sidecar echoing the fully resolved configuration,
so identical argv reproduce identical files.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .core import (
    ENSEMBLE_KINDS,
    RngStream,
    read_matrix_csv,
    write_matrix_csv,
)
from .errors import DomainError, GinvkitError
from .experiments import (
    RadonSpec,
    baseline_comparison,
    ensemble_sweep,
    radon_matrix,
    run_concentration,
    tomo_ratio_experiment,
    write_records_csv,
    write_table_csv,
)
from .ginv import SolverOptions, check_generalized_inverse, lp_min_ginv
from .theory import SaddleOptions, alpha_star_limit, solve_t_star_finite

_RADON_STREAM = 10_000  # stream family shared with the tomography experiment


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Parser whose failures surface as exit code 1, never SystemExit(2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _usage(message: str) -> None:
    sys.stderr.write(f"usage error: {message}\n")
    raise _UsageError(message)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _sidecar_path(out_path: Path) -> Path:
    return out_path.with_suffix(".json")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, indent=2) + "\n")


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise DomainError(f"threads must be >= 1, got {threads}")
    return threads


def _delta_list(text: str) -> List[float]:
    try:
        return [float(tok) for tok in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a comma-separated list of numbers, got {text!r}")


# ------------------------------------------------------------- subcommands

def _cmd_predict(args) -> int:
    regime = args.regime
    if regime is None:
        regime = "finite" if args.n is not None else "limit"
    if regime == "finite" and args.n is None:
        _usage("--regime finite requires --n")
    if regime == "limit" and args.n is not None:
        _usage("--n applies only with --regime finite")
    cfg = {
        "subcommand": "predict",
        "p": args.p,
        "delta": args.delta,
        "regime": regime,
        "n": args.n,
        "samples": args.samples,
        "seed": args.seed,
    }
    if regime == "limit":
        pred = alpha_star_limit(args.p, args.delta)
    else:
        pred = solve_t_star_finite(
            args.p, args.delta, args.n,
            SaddleOptions(samples=args.samples, seed=args.seed))
    _emit({"config": cfg, "prediction": pred.as_dict()})
    return 0


def _cmd_invert(args) -> int:
    eps_abs = args.tol if args.tol is not None else 1e-8
    eps_rel = 100.0 * args.tol if args.tol is not None else 1e-6
    max_iter = args.max_iter if args.max_iter is not None else 50_000
    opts = SolverOptions(p=args.p, eps_abs=eps_abs, eps_rel=eps_rel,
                         max_iter=max_iter, backend=args.backend)
    in_path = Path(args.input)
    out_path = Path(args.out) if args.out else in_path.with_suffix(".ginv.csv")
    a = read_matrix_csv(in_path)
    res = lp_min_ginv(a, opts)
    write_matrix_csv(out_path, res.X)
    cfg = {
        "subcommand": "invert",
        "input": str(in_path),
        "out": str(out_path),
        "p": args.p,
        "backend": args.backend,
        "eps_abs": eps_abs,
        "eps_rel": eps_rel,
        "max_iter": max_iter,
    }
    _write_json(_sidecar_path(out_path), {
        "config": cfg,
        "result": {
            "constraint_residual": res.constraint_residual,
            "normalized_frob": res.normalized_frob,
            "nnz_total": sum(res.per_column_nnz),
            "iterations_max": max(res.per_column_iterations),
        },
    })
    return 0


def _cmd_check(args) -> int:
    a = read_matrix_csv(args.matrix)
    x = read_matrix_csv(args.inverse)
    report = check_generalized_inverse(a, x, args.tol)
    cfg = {
        "subcommand": "check",
        "matrix": args.matrix,
        "inverse": args.inverse,
        "tol": args.tol,
    }
    _emit({"config": cfg, "report": report.as_dict()})
    return 0 if report.ok else 2


def _cmd_experiment(args) -> int:
    threads = _resolve_threads(args.threads)
    out_path = Path(args.out) if args.out else Path("experiment.csv")
    records, summary = run_concentration(
        args.n, args.delta, args.p, args.trials, args.ensemble, args.seed)
    write_records_csv(out_path, records)
    cfg = {
        "subcommand": "experiment",
        "n": args.n,
        "delta": args.delta,
        "p": args.p,
        "trials": args.trials,
        "ensemble": args.ensemble,
        "seed": args.seed,
        "out": str(out_path),
        "threads": threads,
    }
    _write_json(_sidecar_path(out_path), {"config": cfg, "summary": summary})
    return 0


def _cmd_baseline(args) -> int:
    threads = _resolve_threads(args.threads)
    rows = baseline_comparison(args.m, args.n, args.experiments, args.trials,
                               args.seed)
    out_path = Path("baseline.csv")
    write_table_csv(out_path, rows)
    cfg = {
        "subcommand": "baseline",
        "m": args.m,
        "n": args.n,
        "experiments": args.experiments,
        "trials": args.trials,
        "seed": args.seed,
        "out": str(out_path),
        "threads": threads,
    }
    _write_json(_sidecar_path(out_path), {"config": cfg})
    return 0


def _cmd_radon(args) -> int:
    spec = RadonSpec(delta=args.delta, panel=args.panel)
    tall = radon_matrix(spec, RngStream(args.seed, _RADON_STREAM))
    out_path = Path(args.out) if args.out else Path("radon.csv")
    write_matrix_csv(out_path, tall)
    cfg = {
        "subcommand": "radon",
        "panel": args.panel,
        "delta": args.delta,
        "seed": args.seed,
        "out": str(out_path),
    }
    _write_json(_sidecar_path(out_path),
                {"config": cfg, "geometry": spec.as_dict()})
    return 0


def _cmd_tomo_table(args) -> int:
    threads = _resolve_threads(args.threads)
    rows = tomo_ratio_experiment(args.deltas, args.trials, args.seed)
    out_path = Path("tomo_table.csv")
    write_table_csv(out_path, rows)
    cfg = {
        "subcommand": "tomo-table",
        "deltas": list(args.deltas),
        "trials": args.trials,
        "seed": args.seed,
        "out": str(out_path),
        "threads": threads,
    }
    geometry = [RadonSpec(delta=d).as_dict() for d in args.deltas]
    _write_json(_sidecar_path(out_path),
                {"config": cfg, "geometry": geometry})
    return 0


def _cmd_ensembles(args) -> int:
    threads = _resolve_threads(args.threads)
    rows = ensemble_sweep(args.n, args.deltas, args.trials, args.seed)
    out_path = Path("ensembles.csv")
    write_table_csv(out_path, rows)
    cfg = {
        "subcommand": "ensembles",
        "n": args.n,
        "deltas": list(args.deltas),
        "trials": args.trials,
        "seed": args.seed,
        "out": str(out_path),
        "threads": threads,
    }
    _write_json(_sidecar_path(out_path), {"config": cfg})
    return 0


# ------------------------------------------------------------------ parser

def _add_threads(sub) -> None:
    sub.add_argument("--threads", type=int, default=None,
                     help="thread budget echoed into the sidecar; the "
                          "solver currently runs on one thread (default: "
                          "machine parallelism)")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ginvkit",
        description="Minimal-norm generalized inverses of wide matrices "
                    "and concentration predictions for their Frobenius mass.")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser, metavar="subcommand")

    p = sub.add_parser("predict", help="predicted concentration value for "
                                       "(n/m)*||X||_F^2")
    p.add_argument("--p", type=float, required=True,
                   help="norm exponent in [1, 2]")
    p.add_argument("--delta", type=float, required=True,
                   help="aspect ratio m/n in (0, 1)")
    p.add_argument("--n", type=int, default=None,
                   help="matrix width for the finite-n regime")
    p.add_argument("--regime", choices=("limit", "finite"), default=None,
                   help="limiting closed form or finite-n saddle solve "
                        "(default: finite when --n is given, limit otherwise)")
    p.add_argument("--samples", type=int, default=20_000,
                   help="Monte Carlo sample count for the finite-n solve")
    p.add_argument("--seed", type=int, default=0,
                   help="Monte Carlo seed for the finite-n solve")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("invert", help="compute the lp-minimal generalized "
                                      "inverse of a CSV matrix")
    p.add_argument("--input", required=True, help="CSV file holding the matrix")
    p.add_argument("--p", type=float, required=True,
                   help="norm exponent in [1, 2]")
    p.add_argument("--tol", type=float, default=None,
                   help="absolute stopping tolerance; the relative one is "
                        "100x this (default: 1e-8)")
    p.add_argument("--max-iter", type=int, default=None,
                   help="iteration cap for the splitting solver "
                        "(default: 50000)")
    p.add_argument("--backend", choices=("admm", "lp"), default="admm",
                   help="splitting solver, or the linear-programming route "
                        "(p = 1 only)")
    p.add_argument("--out", default=None,
                   help="output CSV (default: input with a .ginv.csv suffix)")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("check", help="verify A X A = A for a stored inverse")
    p.add_argument("--matrix", required=True, help="CSV file holding A")
    p.add_argument("--inverse", required=True, help="CSV file holding X")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="residual tolerance (default: 1e-8)")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("experiment", help="concentration trials at one "
                                          "(n, delta, p, ensemble)")
    p.add_argument("--n", type=int, required=True, help="matrix width")
    p.add_argument("--delta", type=float, required=True,
                   help="aspect ratio m/n in (0, 1)")
    p.add_argument("--p", type=float, required=True,
                   help="norm exponent in [1, 2]")
    p.add_argument("--trials", type=int, required=True,
                   help="independent matrix draws")
    p.add_argument("--ensemble", choices=ENSEMBLE_KINDS, required=True,
                   help="entry distribution")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    p.add_argument("--out", default=None,
                   help="output CSV (default: experiment.csv)")
    _add_threads(p)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("baseline", help="random-submatrix inverses against "
                                        "the sparse inverse")
    p.add_argument("--m", type=int, required=True, help="row count")
    p.add_argument("--n", type=int, required=True, help="column count")
    p.add_argument("--experiments", type=int, required=True,
                   help="independent matrices")
    p.add_argument("--trials", type=int, required=True,
                   help="baseline draws per matrix")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    _add_threads(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("radon", help="write one sampled tomographic matrix")
    p.add_argument("--panel", type=int, required=True,
                   help="pixel panel edge length")
    p.add_argument("--delta", type=float, required=True,
                   help="pixel-to-ray ratio in (0, 1]")
    p.add_argument("--seed", type=int, required=True, help="subsampling seed")
    p.add_argument("--out", default=None,
                   help="output CSV (default: radon.csv)")
    p.set_defaults(func=_cmd_radon)

    p = sub.add_parser("tomo-table", help="sparse-to-MPP Frobenius ratio on "
                                          "tomographic systems per delta")
    p.add_argument("--deltas", type=_delta_list, required=True,
                   help="comma-separated aspect ratios")
    p.add_argument("--trials", type=int, required=True,
                   help="matrix draws per delta")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    _add_threads(p)
    p.set_defaults(func=_cmd_tomo_table)

    p = sub.add_parser("ensembles", help="mean normalized Frobenius mass "
                                         "per (ensemble, delta, p)")
    p.add_argument("--n", type=int, required=True, help="matrix width")
    p.add_argument("--deltas", type=_delta_list, required=True,
                   help="comma-separated aspect ratios")
    p.add_argument("--trials", type=int, required=True,
                   help="draws per cell")
    p.add_argument("--seed", type=int, required=True, help="base seed")
    _add_threads(p)
    p.set_defaults(func=_cmd_ensembles)

    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help prints and asks to exit
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except _UsageError:
        return 1
    except (GinvkitError, OSError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
