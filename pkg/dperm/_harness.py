"""Experiment orchestration and result files.

run_experiment() loads the dataset once, builds the objective, solves for a
reference optimum, and then runs every (budget, repetition) pair with seed
base_seed + repetition. Repetitions are independent and can run on a thread
pool; results are always sorted by (budget, repetition) before they are
aggregated or written.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Callable, Sequence
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

from dperm._config import ExperimentSpec
from dperm._data import SourceKind, load_dataset
from dperm._exceptions import DataFormatError, DpermError, ExperimentError, SpecError
from dperm._geometry import (
    AccMDConfig,
    ConvexBody,
    MirrorMap,
    bregman,
    dp_accmd,
    gaussian_width_mc,
    recommend_T_accmd,
)
from dperm._logging import logger
from dperm._objective import (
    Dataset,
    ErmObjective,
    LossKind,
    LossModel,
    Regularizer,
    RegularizerKind,
)
from dperm._optimizers import (
    EpochRecord,
    GdConfig,
    RunTrace,
    SvrgConfig,
    SvrgPpConfig,
    dp_gd,
    dp_svrg,
    dp_svrg_pp,
    recommend_svrg_schedule,
    recommend_T_gradnorm,
    recommend_T_pl,
)
from dperm._privacy import Algorithm, NoisePlan, PrivacyBudget, RunStreams, calibrate
from dperm._protocols import Objective

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "algorithm",
    "epsilon",
    "delta",
    "repetition",
    "epoch",
    "excess_risk",
    "grad_norm_sq",
    "cum_sample_grads",
    "wall_ms",
)

# DP-SVRG++ defaults when the spec leaves the schedule open
_SVRG_PP_T = 8
_SVRG_PP_M = 10
_WIDTH_SAMPLES = 10_000


# =============================================================================
# REFERENCE OPTIMUM
# =============================================================================


@dataclass(frozen=True)
class ReferenceSolution:
    """Output of reference_minimizer. converged is False when the cap was hit."""

    x_star: np.ndarray
    f_star: float
    residual: float
    iterations: int
    converged: bool
    residuals: tuple[float, ...] = ()


def reference_minimizer(
    obj: Objective,
    tol: float = 1e-10,
    *,
    max_iter: int = 1_000_000,
    x0: np.ndarray | None = None,
    keep_history: bool = False,
) -> ReferenceSolution:
    """Deterministic proximal gradient descent with step 1/L.

    Stops when the gradient-mapping norm ||x - prox(x - grad F(x)/L)|| L
    drops to tol. Hitting max_iter returns the last point with
    converged=False and logs a warning. The objective must be convex.
    """
    if not tol > 0:
        raise DpermError(f"tol must be > 0, got {tol}")
    step = 1.0 / obj.smoothness
    reg = obj.regularizer
    x = np.zeros(obj.dim) if x0 is None else np.array(x0, dtype=np.float64)
    history: list[float] = []
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        moved = reg.prox(step, x - step * obj.full_gradient(x))
        residual = float(np.linalg.norm(x - moved)) / step
        if keep_history:
            history.append(residual)
        if residual <= tol:
            break
        x = moved
    converged = residual <= tol
    if not converged:
        logger.warning(
            "reference solver stopped at %d iterations with residual %.3g > %.3g",
            iterations,
            residual,
            tol,
        )
    return ReferenceSolution(x, obj.value(x), residual, iterations, converged, tuple(history))


# =============================================================================
# RESULTS
# =============================================================================


@dataclass(frozen=True)
class RunSummary:
    """One repetition at one budget."""

    budget_index: int
    epsilon: float
    delta: float
    repetition: int
    seed: int
    sigma: float
    noise_mode: str
    fallback: bool
    T: int
    m: int | None
    eta: float | None
    final_excess_risk: float | None
    final_grad_norm_sq: float | None
    sample_gradients: int
    wall_time: float
    records: tuple[EpochRecord, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["records"] = [asdict(r) for r in self.records]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunSummary:
        fields = dict(data)
        fields["records"] = tuple(EpochRecord(**r) for r in data.get("records", ()))
        return cls(**fields)


@dataclass(frozen=True)
class AggregateRow:
    """Median and quartiles over the repetitions of one budget."""

    epsilon: float
    delta: float
    repetitions: int
    excess_risk: tuple[float, float, float] | None
    grad_norm_sq: tuple[float, float, float]
    wall_time: tuple[float, float, float]


def _quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    q1, median, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25.0, 50.0, 75.0])
    return float(q1), float(median), float(q3)


def aggregate(runs: Sequence[RunSummary]) -> list[AggregateRow]:
    """Per-budget (q1, median, q3) of final excess risk, gradient norm and wall time."""
    rows = []
    for index in sorted({run.budget_index for run in runs}):
        group = sorted((r for r in runs if r.budget_index == index), key=lambda r: r.repetition)
        risks = [r.final_excess_risk for r in group if r.final_excess_risk is not None]
        rows.append(
            AggregateRow(
                epsilon=group[0].epsilon,
                delta=group[0].delta,
                repetitions=len(group),
                excess_risk=_quartiles(risks) if len(risks) == len(group) else None,
                grad_norm_sq=_quartiles([r.final_grad_norm_sq or 0.0 for r in group]),
                wall_time=_quartiles([r.wall_time for r in group]),
            )
        )
    return rows


@dataclass
class ResultRecord:
    """Everything one experiment produced. Aggregates are recomputable from runs."""

    spec_digest: str
    spec: dict[str, Any]
    algorithm: str
    f_star: float | None
    residual: float | None
    reference_converged: bool
    runs: list[RunSummary] = field(default_factory=list)
    aggregates: list[AggregateRow] = field(default_factory=list)
    complete: bool = True
    failure: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "spec_digest": self.spec_digest,
            "spec": self.spec,
            "algorithm": self.algorithm,
            "f_star": self.f_star,
            "residual": self.residual,
            "reference_converged": self.reference_converged,
            "complete": self.complete,
            "failure": self.failure,
            "runs": [run.to_dict() for run in self.runs],
            "aggregates": [asdict(row) for row in self.aggregates],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ResultRecord:
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataFormatError(f"unsupported result schema version {version!r}")

        def triple(value: list[float] | None) -> tuple[float, float, float] | None:
            return None if value is None else (value[0], value[1], value[2])

        aggregates = [
            AggregateRow(
                epsilon=row["epsilon"],
                delta=row["delta"],
                repetitions=row["repetitions"],
                excess_risk=triple(row["excess_risk"]),
                grad_norm_sq=triple(row["grad_norm_sq"]) or (0.0, 0.0, 0.0),
                wall_time=triple(row["wall_time"]) or (0.0, 0.0, 0.0),
            )
            for row in data["aggregates"]
        ]
        return cls(
            spec_digest=data["spec_digest"],
            spec=data["spec"],
            algorithm=data["algorithm"],
            f_star=data["f_star"],
            residual=data["residual"],
            reference_converged=data["reference_converged"],
            runs=[RunSummary.from_dict(run) for run in data["runs"]],
            aggregates=aggregates,
            complete=data["complete"],
            failure=data["failure"],
            schema_version=version,
        )


# =============================================================================
# RUNNING
# =============================================================================


def build_objective(spec: ExperimentSpec, dataset: Dataset) -> ErmObjective:
    """The objective a spec describes, with constants derived from the data."""
    body = spec_body(spec, dataset.p)
    if spec.dataset.kind is SourceKind.SYNTHETIC_QUADRATIC and spec.loss is LossKind.SQUARED:
        # The designed spectrum is tighter than the per-row bound max ||a||^2
        derived = LossModel.for_dataset(spec.loss, dataset, domain_radius=spec.radius)
        loss = LossModel(LossKind.SQUARED, derived.lipschitz_G, spec.dataset.L)
    else:
        loss = LossModel.for_dataset(spec.loss, dataset, domain_radius=spec.radius)
    if spec.regularizer is RegularizerKind.SQUARED_L2:
        reg = Regularizer.squared_l2(spec.lam)
    elif spec.regularizer is RegularizerKind.L1:
        reg = Regularizer.l1(spec.lam)
    elif spec.regularizer is RegularizerKind.INDICATOR or spec.algorithm is Algorithm.DP_ACCMD:
        assert body is not None
        reg = Regularizer.indicator(body)
    else:
        reg = Regularizer.none()
    mu = spec.dataset.mu if spec.dataset.kind is SourceKind.SYNTHETIC_QUADRATIC else None
    return ErmObjective(dataset, loss, reg, mu=mu)


def spec_body(spec: ExperimentSpec, dim: int) -> ConvexBody | None:
    if spec.body is None:
        return None
    return ConvexBody(spec.body, spec.radius, dim)


@dataclass(frozen=True)
class _Task:
    budget_index: int
    budget: PrivacyBudget
    repetition: int


class _Runner:
    """Runs single repetitions of one spec against one objective."""

    def __init__(self, spec: ExperimentSpec, obj: ErmObjective, reference: ReferenceSolution) -> None:
        self.spec = spec
        self.obj = obj
        self.reference = reference
        self.body = spec_body(spec, obj.dim)
        # Resolved up front: a SpecError here must not surface as a failed repetition.
        self.schedules = [self.schedule(budget) for budget in spec.budgets]

    def schedule(self, budget: PrivacyBudget) -> tuple[int, int | None, float | None]:
        spec, obj = self.spec, self.obj
        L, G = obj.smoothness, obj.loss.lipschitz_G
        if spec.algorithm is Algorithm.DP_SVRG:
            if spec.T is not None and spec.m is not None and spec.eta is not None:
                return spec.T, spec.m, spec.eta
            mu = obj.strong_convexity_mu
            if mu <= 0:
                raise SpecError("dp_svrg without strong convexity needs explicit T, m and eta")
            rec = recommend_svrg_schedule(L, mu, obj.n, obj.dim, G, budget)
            return spec.T or rec.T, spec.m or rec.m, spec.eta or rec.eta
        if spec.algorithm is Algorithm.DP_SVRG_PP:
            return spec.T or _SVRG_PP_T, spec.m or _SVRG_PP_M, spec.eta or SvrgPpConfig.default_eta(L)
        if spec.algorithm is Algorithm.DP_GD:
            if spec.T is not None:
                T = spec.T
            elif obj.strong_convexity_mu > 0:
                T = recommend_T_pl(L, obj.strong_convexity_mu, obj.n, obj.dim, G, budget)
            else:
                T = recommend_T_gradnorm(L, obj.n, obj.dim, G, budget)
            return T, None, spec.eta or 1.0 / (L + obj.regularizer.gradient_lipschitz)
        if spec.T is not None:
            return spec.T, None, None
        assert self.body is not None
        width = gaussian_width_mc(self.body, _WIDTH_SAMPLES, np.random.default_rng(spec.base_seed))
        mirror = MirrorMap.for_body(self.body)
        b_w0 = bregman(mirror, self.reference.x_star, np.zeros(obj.dim))
        T = recommend_T_accmd(L, width.estimate, self.body.l2_diameter, b_w0, obj.n, G, budget)
        return T, None, None

    def run(self, task: _Task) -> RunSummary:
        spec, obj = self.spec, self.obj
        T, m, eta = self.schedules[task.budget_index]
        plan: NoisePlan = calibrate(
            spec.algorithm,
            G=obj.loss.lipschitz_G,
            n=obj.n,
            budget=task.budget,
            mode=spec.calibration,
            T=T,
            m=m or 1,
            constants=spec.constants,
        )
        seed = spec.base_seed + task.repetition
        streams = RunStreams.from_seed(seed)
        f_star = self.reference.f_star
        trace: RunTrace
        if spec.algorithm is Algorithm.DP_SVRG:
            assert m is not None and eta is not None
            _, trace = dp_svrg(obj, SvrgConfig(T, m, eta, noise=plan), streams, f_star=f_star)
        elif spec.algorithm is Algorithm.DP_SVRG_PP:
            assert m is not None and eta is not None
            _, trace = dp_svrg_pp(obj, SvrgPpConfig(T, m, eta, noise=plan), streams, f_star=f_star)
        elif spec.algorithm is Algorithm.DP_GD:
            assert eta is not None
            cfg = GdConfig(T, eta, noise=plan, output_mode=spec.output_mode)
            _, trace = dp_gd(obj, cfg, streams, f_star=f_star)
        else:
            assert self.body is not None
            mirror = MirrorMap.for_body(self.body)
            _, trace = dp_accmd(obj, self.body, mirror, AccMDConfig(T, noise=plan), streams, f_star=f_star)
        return RunSummary(
            budget_index=task.budget_index,
            epsilon=task.budget.epsilon,
            delta=task.budget.delta,
            repetition=task.repetition,
            seed=seed,
            sigma=plan.sigma,
            noise_mode=plan.mode.value,
            fallback=plan.fallback,
            T=T,
            m=m,
            eta=eta,
            final_excess_risk=trace.final_excess_risk,
            final_grad_norm_sq=trace.final_grad_norm_sq,
            sample_gradients=trace.sample_gradients,
            wall_time=trace.wall_time,
            records=tuple(trace.records),
        )


def run_experiment(
    spec: ExperimentSpec,
    *,
    dataset: Dataset | None = None,
    on_repetition: Callable[[RunSummary], None] | None = None,
) -> ResultRecord:
    """Run every budget and repetition of spec and collect a ResultRecord.

    A failing repetition raises ExperimentError carrying the runs that
    finished, marked incomplete.

    Example:
        spec = load_spec("ridge.toml")
        record = run_experiment(spec, on_repetition=lambda run: bar.advance(task))
        emit_results(record, "out.json")
    """
    data = dataset if dataset is not None else load_dataset(spec.dataset)
    obj = build_objective(spec, data)
    reference = reference_minimizer(obj)
    logger.info(
        "%s: n=%d p=%d L=%.4g G=%.4g F*=%.10g",
        spec.algorithm.value,
        obj.n,
        obj.dim,
        obj.smoothness,
        obj.loss.lipschitz_G,
        reference.f_star,
    )
    record = ResultRecord(
        spec_digest=spec.digest(),
        spec=spec.to_dict(),
        algorithm=spec.algorithm.value,
        f_star=reference.f_star,
        residual=reference.residual,
        reference_converged=reference.converged,
    )
    runner = _Runner(spec, obj, reference)
    tasks = [
        _Task(index, budget, rep)
        for index, budget in enumerate(spec.budgets)
        for rep in range(spec.reps)
    ]
    runs: list[RunSummary] = []
    failure: tuple[_Task, BaseException] | None = None

    def finished(run: RunSummary) -> None:
        runs.append(run)
        if on_repetition is not None:
            on_repetition(run)

    if spec.workers == 1:
        for task in tasks:
            try:
                finished(runner.run(task))
            except Exception as e:
                failure = (task, e)
                break
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            futures = {pool.submit(runner.run, task): task for task in tasks}
            pending = set(futures)
            while pending and failure is None:
                done, pending = wait(pending, return_when=FIRST_EXCEPTION)
                for future in done:
                    error = future.exception()
                    if error is None:
                        finished(future.result())
                    elif failure is None:
                        failure = (futures[future], error)
            for future in pending:
                future.cancel()

    record.runs = sorted(runs, key=lambda r: (r.budget_index, r.repetition))
    record.aggregates = aggregate(record.runs)
    if failure is not None:
        task, error = failure
        record.complete = False
        record.failure = (
            f"epsilon={task.budget.epsilon:g} delta={task.budget.delta:g} "
            f"repetition {task.repetition}: {error}"
        )
        raise ExperimentError(record.failure, record) from error
    for row in record.aggregates:
        logger.info(
            "epsilon=%g delta=%g: median excess risk %s over %d runs",
            row.epsilon,
            row.delta,
            "n/a" if row.excess_risk is None else f"{row.excess_risk[1]:.4g}",
            row.repetitions,
        )
    return record


# =============================================================================
# RESULT FILES
# =============================================================================


ResultFormat = Literal["json", "csv"]


def emit_results(record: ResultRecord, path: Path | str, format: ResultFormat | None = None) -> Path:
    """Write record as JSON (full fidelity) or CSV (one row per epoch per repetition).

    The format defaults to the file suffix. OSError propagates for
    unwritable paths.
    """
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "json":
        text = json.dumps(record.to_dict(), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        return path
    if fmt != "csv":
        raise DpermError(f"unknown result format {fmt!r}; use json or csv")
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for run in record.runs:
            for epoch in run.records:
                writer.writerow(
                    [
                        record.algorithm,
                        repr(run.epsilon),
                        repr(run.delta),
                        run.repetition,
                        epoch.epoch,
                        "" if epoch.excess_risk is None else repr(epoch.excess_risk),
                        repr(epoch.grad_norm_sq),
                        epoch.sample_gradients,
                        f"{epoch.wall_time * 1000.0:.3f}",
                    ]
                )
    return path


def load_results(path: Path | str) -> ResultRecord:
    """Reload a JSON ResultRecord written by emit_results()."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(e.msg, path=path, line_number=e.lineno) from None
    return ResultRecord.from_dict(data)
