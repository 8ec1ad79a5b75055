"""The dperm command line.

    dperm run --spec ridge.toml --epsilon 0.2,0.5,1 --reps 30 --out results.json
    dperm calibrate --algo svrg --G 1 --n 1000 --T 10 --m 500 --epsilon 1 --delta 1e-5
    dperm reference --dataset synth:logistic:n=2000,p=10 --regularizer squared_l2 --lambda 0.01

Exit codes: 0 success, 2 invalid spec or arguments, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from dperm._components import AggregateTable, NoisePlanTable, Status
from dperm._config import ALGORITHM_ALIASES, load_spec, parse_algorithm
from dperm._data import load_dataset
from dperm._exceptions import DpermError, ExperimentError, InvalidInputError, SpecError
from dperm._harness import (
    ResultRecord,
    build_objective,
    emit_results,
    reference_minimizer,
    run_experiment,
)
from dperm._logging import configure_cli_logging, logger
from dperm._privacy import (
    CalibrationConstants,
    PrivacyBudget,
    calibrate,
    gaussian_mechanism_sigma,
    svrg_query_sensitivity,
)
from dperm.styles import COLOR_PROGRESS

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_RUNTIME = 3

_ALGO_CHOICES = sorted({*ALGORITHM_ALIASES, "dp_svrg", "dp_svrg_pp", "dp_gd", "dp_accmd"})


def _epsilon_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_problem_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="file path or synth:logistic:n=..,p=..,seed=..")
    parser.add_argument("--loss", choices=["logistic", "squared"])
    parser.add_argument("--regularizer", choices=["none", "squared_l2", "l1", "indicator"])
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--body", choices=["l2_ball", "l1_ball"])
    parser.add_argument("--radius", type=float)
    parser.add_argument("--normalization", choices=["row_l2_unit", "minmax_then_row_l2", "none"])
    parser.add_argument("--positive-class", type=float)
    parser.add_argument("--max-rows", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dperm", description="Differentially private ERM optimizers")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--spec", type=Path, help="TOML spec file")
    run.add_argument("--algo", choices=_ALGO_CHOICES)
    run.add_argument("--epsilon", type=_epsilon_list)
    run.add_argument("--delta", type=float)
    run.add_argument("--calibration", choices=["moments", "advanced", "off"])
    run.add_argument("--T", type=int)
    run.add_argument("--m", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--output-mode", choices=["last_iterate", "uniform_iterate"])
    run.add_argument("--out", type=Path, help="results path; writes <stem>.json and <stem>.csv")
    _add_problem_flags(run)
    run.set_defaults(handler=_cmd_run)

    cal = sub.add_parser("calibrate", help="print the noise scale for given parameters")
    cal.add_argument("--algo", choices=_ALGO_CHOICES, required=True)
    cal.add_argument("--G", type=float, default=1.0)
    cal.add_argument("--n", type=int, required=True)
    cal.add_argument("--T", type=int, required=True)
    cal.add_argument("--m", type=int, default=1)
    cal.add_argument("--epsilon", type=float, required=True)
    cal.add_argument("--delta", type=float, required=True)
    cal.add_argument("--calibration", choices=["moments", "advanced", "off"], default="moments")
    cal.add_argument("--c", type=float, default=1.0)
    cal.add_argument("--c1", type=float, default=1.0)
    cal.add_argument("--c2", type=float, default=1.0)
    cal.set_defaults(handler=_cmd_calibrate)

    ref = sub.add_parser("reference", help="print the reference optimum F*")
    ref.add_argument("--spec", type=Path)
    ref.add_argument("--algo", choices=_ALGO_CHOICES, default=None)
    ref.add_argument("--tol", type=float, default=1e-10)
    _add_problem_flags(ref)
    ref.set_defaults(handler=_cmd_reference)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    names = {"algo": "algorithm", "lam": "lambda"}
    keys = (
        "algo", "epsilon", "delta", "calibration", "T", "m", "eta", "reps", "seed", "workers",
        "output_mode", "out", "dataset", "loss", "regularizer", "lam", "body", "radius",
        "normalization", "positive_class", "max_rows",
    )
    return {names.get(key, key): getattr(args, key, None) for key in keys}


def _write_outputs(record: ResultRecord, out: Path, console: Console) -> None:
    json_path = emit_results(record, out.with_suffix(".json"), "json")
    csv_path = emit_results(record, out.with_suffix(".csv"), "csv")
    console.print(Status("success", f"wrote {json_path} and {csv_path}"))


def _cmd_run(args: argparse.Namespace, console: Console) -> int:
    spec = load_spec(args.spec, _overrides(args))
    total = len(spec.budgets) * spec.reps
    progress = Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(complete_style=COLOR_PROGRESS),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )
    try:
        with progress:
            task = progress.add_task(spec.algorithm.value, total=total)
            record = run_experiment(spec, on_repetition=lambda _run: progress.advance(task))
    except ExperimentError as e:
        console.print(Status("error", str(e)))
        if spec.out is not None:
            _write_outputs(e.partial, spec.out, console)
        return EXIT_RUNTIME
    console.print(AggregateTable(record.aggregates, title=f"{record.algorithm}  F* = {record.f_star:.10g}"))
    if not record.reference_converged:
        console.print(Status("warning", f"reference residual {record.residual:.3g} above tolerance"))
    if spec.out is not None:
        _write_outputs(record, spec.out, console)
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace, console: Console) -> int:
    try:
        budget = PrivacyBudget(args.epsilon, args.delta)
        constants = CalibrationConstants(args.c, args.c1, args.c2)
        algorithm = parse_algorithm(args.algo)
        plan = calibrate(
            algorithm,
            G=args.G,
            n=args.n,
            budget=budget,
            mode=args.calibration,
            T=args.T,
            m=args.m,
            constants=constants,
        )
        sensitivity = svrg_query_sensitivity(args.G, args.n)
        extras = [
            ("query sensitivity 2G + G/n", sensitivity),
            ("Gaussian mechanism sigma", gaussian_mechanism_sigma(sensitivity, budget)),
        ]
    except InvalidInputError as e:
        raise SpecError(str(e)) from None
    console.print(NoisePlanTable(plan, title=f"{algorithm.value} noise plan", extras=extras))
    return EXIT_OK


def _cmd_reference(args: argparse.Namespace, console: Console) -> int:
    values = {key: value for key, value in _overrides(args).items() if value is not None}
    # The budget does not enter the reference optimum
    values.setdefault("epsilon", 1.0)
    values.setdefault("delta", 1e-5)
    if args.spec is None:
        values.setdefault("algorithm", "dp_svrg")
    spec = load_spec(args.spec, values)
    obj = build_objective(spec, load_dataset(spec.dataset))
    solution = reference_minimizer(obj, args.tol)
    console.print(f"F* = {solution.f_star:.12g}")
    console.print(f"residual = {solution.residual:.3g} after {solution.iterations} iterations")
    if not solution.converged:
        console.print(Status("warning", "iteration cap reached; F* is approximate"))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_cli_logging(verbose=args.verbose)
    console = Console()
    try:
        return args.handler(args, console)
    except SpecError as e:
        console.print(Status("error", f"invalid spec: {e}"))
        return EXIT_SPEC
    except (DpermError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        console.print(Status("error", str(e)))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
