"""Tests for the reference solver, experiment runs and result files."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import pytest

from dperm._config import build_spec, preset_spec
from dperm._data import DatasetSource
from dperm._exceptions import DataFormatError, ExperimentError, SpecError
from dperm._harness import (
    CSV_COLUMNS,
    SCHEMA_VERSION,
    ResultRecord,
    RunSummary,
    aggregate,
    emit_results,
    load_results,
    reference_minimizer,
    run_experiment,
)
from dperm._objective import Dataset, ErmObjective, LossKind, LossModel, Regularizer


def gd_spec(**extra: object):
    values: dict[str, object] = {
        "algorithm": "dp_gd",
        "dataset": "synth:logistic:n=200,p=4,seed=1",
        "regularizer": "squared_l2",
        "lambda": 0.1,
        "epsilon": [0.5, 1.0],
        "delta": 1e-5,
        "T": 5,
        "reps": 2,
    }
    values.update(extra)
    return build_spec(values)


def summary(budget_index: int, repetition: int, risk: float | None) -> RunSummary:
    return RunSummary(
        budget_index=budget_index,
        epsilon=[0.5, 1.0][budget_index],
        delta=1e-5,
        repetition=repetition,
        seed=repetition,
        sigma=0.1,
        noise_mode="moments",
        fallback=False,
        T=3,
        m=None,
        eta=1.0,
        final_excess_risk=risk,
        final_grad_norm_sq=0.01,
        sample_gradients=600,
        wall_time=0.5,
    )


class TestReferenceMinimizer:
    """Tests for the deterministic reference solver."""

    def test_matches_ridge_normal_equations(self, rng: np.random.Generator) -> None:
        """Ridge least squares agrees with the linear solve of its normal equations."""
        features = rng.normal(size=(60, 3))
        features /= np.linalg.norm(features, axis=1, keepdims=True)
        labels = rng.normal(size=60)
        data = Dataset(features, labels)
        obj = ErmObjective(data, LossModel.for_dataset(LossKind.SQUARED, data), Regularizer.squared_l2(0.2))
        solution = reference_minimizer(obj, tol=1e-12)
        expected = np.linalg.solve(features.T @ features / 60 + 0.2 * np.eye(3), features.T @ labels / 60)
        assert solution.converged
        np.testing.assert_allclose(solution.x_star, expected, atol=1e-10)
        assert solution.f_star == pytest.approx(obj.value(expected), abs=1e-14)

    def test_residual_history_decreases(self, small_ridge_logistic: ErmObjective) -> None:
        """On a strongly convex objective the gradient-mapping norm shrinks every step."""
        solution = reference_minimizer(small_ridge_logistic, tol=1e-9, keep_history=True)
        history = np.array(solution.residuals)
        assert len(history) == solution.iterations
        assert np.all(history[1:] <= history[:-1] * (1.0 + 1e-9))

    def test_iteration_cap(self, small_ridge_logistic: ErmObjective, caplog) -> None:
        """Hitting max_iter returns converged=False and warns."""
        with caplog.at_level(logging.WARNING, logger="dperm"):
            solution = reference_minimizer(small_ridge_logistic, tol=1e-12, max_iter=2)
        assert not solution.converged
        assert solution.iterations == 2
        assert "reference solver stopped" in caplog.text


class TestAggregate:
    """Tests for per-budget aggregation."""

    def test_quartiles_per_budget(self) -> None:
        """Each budget gets (q1, median, q3) over its repetitions."""
        runs = [summary(0, r, risk) for r, risk in enumerate([1.0, 2.0, 3.0, 4.0, 5.0])]
        runs.append(summary(1, 0, 0.5))
        rows = aggregate(runs)
        assert [row.epsilon for row in rows] == [0.5, 1.0]
        assert rows[0].repetitions == 5
        assert rows[0].excess_risk == (2.0, 3.0, 4.0)
        assert rows[1].excess_risk == (0.5, 0.5, 0.5)

    def test_missing_reference_gives_no_risk(self) -> None:
        """Without F* the excess-risk quartiles are None."""
        rows = aggregate([summary(0, 0, None), summary(0, 1, None)])
        assert rows[0].excess_risk is None
        assert rows[0].grad_norm_sq == (0.01, 0.01, 0.01)


class TestRunExperiment:
    """Tests for run_experiment()."""

    def test_noiseless_runs(self) -> None:
        """Calibration off makes repetitions identical and shows descent."""
        record = run_experiment(gd_spec(calibration="off"))
        assert record.complete
        assert record.reference_converged
        assert len(record.runs) == 4
        assert [(r.budget_index, r.repetition) for r in record.runs] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert all(r.sigma == 0.0 for r in record.runs)
        risks = {r.final_excess_risk for r in record.runs}
        assert len(risks) == 1
        first = record.runs[0]
        epochs = [e.epoch for e in first.records]
        assert epochs == list(range(6))
        assert first.records[-1].excess_risk < first.records[0].excess_risk
        assert first.sample_gradients == 5 * 200

    def test_callback_and_aggregates(self) -> None:
        """on_repetition sees every run and aggregates cover each budget."""
        seen: list[RunSummary] = []
        record = run_experiment(gd_spec(), on_repetition=seen.append)
        assert len(seen) == 4
        assert len(record.aggregates) == 2
        assert all(r.sigma > 0 for r in record.runs)
        assert record.spec_digest == gd_spec().digest()

    def test_thread_pool_matches_sequential(self) -> None:
        """Seeds depend only on the repetition, not on the worker that ran it."""
        sequential = run_experiment(gd_spec())
        pooled = run_experiment(gd_spec(workers=3))
        assert [r.final_excess_risk for r in pooled.runs] == [r.final_excess_risk for r in sequential.runs]

    def test_failure_raises_with_partial_record(self) -> None:
        """A repetition that rejects its step size raises ExperimentError with an incomplete record."""
        with pytest.raises(ExperimentError, match="repetition 0") as info:
            run_experiment(gd_spec(eta=10.0))
        partial = info.value.partial
        assert not partial.complete
        assert partial.runs == []
        assert "exceeds 1/L" in (partial.failure or "")

    def test_unresolvable_schedule_is_a_spec_error(self) -> None:
        """dp_svrg without strong convexity or explicit schedule fails before any repetition runs."""
        seen: list[RunSummary] = []
        spec = gd_spec(algorithm="dp_svrg", regularizer="l1", T=None)
        with pytest.raises(SpecError, match="needs explicit T, m and eta"):
            run_experiment(spec, on_repetition=seen.append)
        assert seen == []

    def test_uniform_iterate_summary_describes_returned_point(self) -> None:
        """The run summary reports the drawn iterate, not the last recorded epoch."""
        record = run_experiment(gd_spec(output_mode="uniform_iterate", T=8))
        for run in record.runs:
            last = run.records[-1]
            assert last.epoch == 8
            assert run.final_excess_risk != last.excess_risk

    @pytest.mark.slow
    def test_median_excess_risk_decreases_in_epsilon(self) -> None:
        """On ridge logistic the median final excess risk falls as epsilon grows over 0.2, 0.5, 1."""
        spec = gd_spec(
            dataset="synth:logistic:n=2000,p=4,seed=1", epsilon=[0.2, 0.5, 1.0], delta=1e-3, T=50, reps=30
        )
        record = run_experiment(spec)
        assert record.reference_converged
        assert len(record.aggregates) == 3
        medians = [row.excess_risk[1] for row in record.aggregates if row.excess_risk is not None]
        assert len(medians) == 3
        assert medians[0] > medians[1] > medians[2]


class TestEqualBudgetComparison:
    """Tests for the svrg-vs-gd preset run end to end."""

    @pytest.fixture(scope="class")
    def records(self) -> tuple[ResultRecord, ResultRecord]:
        vr, gd = preset_spec("svrg-vs-gd", DatasetSource.synthetic_logistic(2000, 54, seed=0), reps=30)
        return run_experiment(vr), run_experiment(gd)

    @pytest.mark.slow
    def test_sample_gradient_budgets_match(self, records: tuple[ResultRecord, ResultRecord]) -> None:
        """DP-GD spends the DP-SVRG budget T (n + 2m) to within one full pass."""
        vr, gd = records
        svrg_cost = {run.sample_gradients for run in vr.runs}
        gd_cost = {run.sample_gradients for run in gd.runs}
        assert svrg_cost == {15 * (2000 + 2 * 2000)}
        assert len(gd_cost) == 1
        assert 0 <= svrg_cost.pop() - gd_cost.pop() < 2000
        assert [row.epsilon for row in vr.aggregates] == [0.2, 0.5, 1.0]

    @pytest.mark.slow
    @pytest.mark.xfail(
        strict=False,
        reason="advanced-composition noise over long DP-SVRG schedules can outweigh DP-GD's optimization error",
    )
    def test_svrg_not_worse_than_gd(self, records: tuple[ResultRecord, ResultRecord]) -> None:
        """At equal budget the DP-SVRG median gap is at most DP-GD's for every epsilon."""
        vr, gd = records
        for vr_row, gd_row in zip(vr.aggregates, gd.aggregates):
            assert vr_row.excess_risk is not None and gd_row.excess_risk is not None
            assert vr_row.excess_risk[1] <= gd_row.excess_risk[1]


class TestResultFiles:
    """Tests for emit_results() and load_results()."""

    @pytest.fixture(scope="class")
    def record(self) -> ResultRecord:
        """A small noiseless DP-GD experiment."""
        return run_experiment(gd_spec(calibration="off", reps=1))

    def test_json_round_trip(self, record: ResultRecord, tmp_path: Path) -> None:
        """JSON output reloads to an equal record."""
        path = emit_results(record, tmp_path / "out.json")
        loaded = load_results(path)
        assert loaded.to_dict() == record.to_dict()
        assert json.loads(path.read_text(encoding="utf-8"))["schema_version"] == SCHEMA_VERSION

    def test_csv_rows(self, record: ResultRecord, tmp_path: Path) -> None:
        """CSV output has one row per recorded epoch per repetition."""
        path = emit_results(record, tmp_path / "out.csv")
        with path.open(encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows[0]) == 9
        body = rows[1:]
        assert len(body) == sum(len(run.records) for run in record.runs)
        assert {row[0] for row in body} == {"dp_gd"}
        epochs = [int(row[4]) for row in body if row[1] == repr(0.5)]
        assert epochs == sorted(epochs)

    def test_format_override(self, record: ResultRecord, tmp_path: Path) -> None:
        """format= wins over the suffix."""
        path = emit_results(record, tmp_path / "out.txt", format="csv")
        assert path.read_text(encoding="utf-8").startswith("algorithm,")

    def test_bad_schema_version(self, record: ResultRecord, tmp_path: Path) -> None:
        """An unknown schema version is a DataFormatError."""
        data = record.to_dict()
        data["schema_version"] = 99
        path = tmp_path / "old.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(DataFormatError, match="schema version"):
            load_results(path)

    def test_malformed_json(self, tmp_path: Path) -> None:
        """Broken JSON reports its line."""
        path = tmp_path / "broken.json"
        path.write_text('{\n  "schema_version": 1,\n  oops\n}\n', encoding="utf-8")
        with pytest.raises(DataFormatError) as info:
            load_results(path)
        assert info.value.line_number == 3
