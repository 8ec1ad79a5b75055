"""Tests for datasets, losses, regularizers and objectives."""

from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dperm._exceptions import InvalidInputError
from dperm._geometry import ConvexBody
from dperm._objective import (
    DataPoint,
    Dataset,
    DoubleWellObjective,
    ErmObjective,
    LossKind,
    LossModel,
    OracleCounter,
    QuadraticObjective,
    Regularizer,
    RegularizerKind,
    derive_constants,
    excess_risk,
    full_gradient,
    prox,
    sample_gradient,
)

vectors3 = st.lists(st.floats(-10.0, 10.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def squared(data: Dataset) -> ErmObjective:
    return ErmObjective(data, LossModel(LossKind.SQUARED, 1.0, 1.0))


def logistic(data: Dataset, reg: Regularizer | None = None) -> ErmObjective:
    return ErmObjective(data, LossModel.for_dataset(LossKind.LOGISTIC, data), reg or Regularizer.none())


class TestDataset:
    """Tests for Dataset construction."""

    def test_shape_and_items(self, tiny_dataset: Dataset) -> None:
        """Dataset exposes n, p and DataPoint items."""
        assert (tiny_dataset.n, tiny_dataset.p, len(tiny_dataset)) == (2, 2, 2)
        point = tiny_dataset[1]
        assert isinstance(point, DataPoint)
        assert point.label == 0.0
        np.testing.assert_array_equal(point.features, [0.0, 1.0])

    def test_arrays_are_read_only(self, tiny_dataset: Dataset) -> None:
        """Feature and label arrays cannot be mutated."""
        with pytest.raises(ValueError):
            tiny_dataset.features[0, 0] = 5.0

    def test_empty_dataset_rejected(self) -> None:
        """An empty dataset is rejected."""
        with pytest.raises(InvalidInputError, match="empty"):
            Dataset(np.zeros((0, 3)), np.zeros(0))

    def test_label_count_mismatch_rejected(self) -> None:
        """Feature rows and labels must match."""
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_from_points_checks_dimension(self) -> None:
        """Every point must have the declared dimension."""
        points = [DataPoint(np.array([1.0, 0.0]), 1.0), DataPoint(np.array([1.0]), -1.0)]
        with pytest.raises(InvalidInputError, match="point 1"):
            Dataset.from_points(points, dim=2)


class TestGradients:
    """Tests for full and per-sample gradients."""

    def test_single_point_squared(self) -> None:
        """Squared loss at one point a=(1,0), b=0, x=(2,3) has gradient (2,0)."""
        obj = squared(Dataset(np.array([[1.0, 0.0]]), np.array([0.0])))
        np.testing.assert_allclose(full_gradient(obj, np.array([2.0, 3.0])), [2.0, 0.0])
        np.testing.assert_allclose(sample_gradient(obj, np.array([2.0, 3.0]), 0), [2.0, 0.0])

    def test_two_point_average(self, tiny_dataset: Dataset) -> None:
        """Full gradient averages per-sample gradients: x=(2,4) gives (1,2)."""
        np.testing.assert_allclose(full_gradient(squared(tiny_dataset), np.array([2.0, 4.0])), [1.0, 2.0])

    def test_logistic_at_origin(self, logistic_data: Dataset) -> None:
        """Logistic gradient at zero is -(1/n) sum y_i a_i / 2."""
        obj = logistic(logistic_data)
        expected = -(logistic_data.labels[:, None] * logistic_data.features).mean(axis=0) / 2.0
        np.testing.assert_allclose(obj.full_gradient(np.zeros(obj.dim)), expected, atol=1e-15)

    def test_logistic_sample_gradient(self) -> None:
        """Logistic gradient at a=(1,0), y=1, x=0 is (-0.5, 0)."""
        obj = logistic(Dataset(np.array([[1.0, 0.0]]), np.array([1.0])))
        np.testing.assert_allclose(obj.sample_gradient(np.zeros(2), 0), [-0.5, 0.0])

    @pytest.mark.parametrize("kind", [LossKind.LOGISTIC, LossKind.SQUARED])
    def test_full_gradient_is_average(self, kind: LossKind, small_logistic_data: Dataset, rng) -> None:
        """Averaging sample gradients over all i reproduces the full gradient."""
        obj = ErmObjective(small_logistic_data, LossModel.for_dataset(kind, small_logistic_data))
        for _ in range(5):
            x = rng.normal(size=obj.dim)
            average = sum(obj.sample_gradient(x, i) for i in range(obj.n)) / obj.n
            np.testing.assert_allclose(average, obj.full_gradient(x), rtol=1e-12, atol=1e-15)

    def test_index_out_of_range(self, tiny_dataset: Dataset) -> None:
        """Sample index must lie in [0, n)."""
        with pytest.raises(InvalidInputError, match="out of range"):
            squared(tiny_dataset).sample_gradient(np.zeros(2), 2)

    def test_dimension_mismatch(self, tiny_dataset: Dataset) -> None:
        """A point of the wrong length is rejected."""
        with pytest.raises(InvalidInputError):
            squared(tiny_dataset).full_gradient(np.zeros(3))

    def test_counter_tracks_oracle_calls(self, tiny_dataset: Dataset) -> None:
        """Full gradients count n sample gradients, sample gradients count one."""
        obj = squared(tiny_dataset)
        counter = OracleCounter()
        obj.full_gradient(np.zeros(2), counter)
        obj.sample_gradient(np.zeros(2), 0, counter)
        assert counter.sample_gradients == 3

    @pytest.mark.parametrize("kind", [LossKind.LOGISTIC, LossKind.SQUARED])
    def test_finite_differences(self, kind: LossKind, small_logistic_data: Dataset, rng) -> None:
        """Directional derivatives match central differences."""
        model = LossModel.for_dataset(kind, small_logistic_data)
        h = 1e-6
        for _ in range(100):
            i = int(rng.integers(small_logistic_data.n))
            a, b = small_logistic_data.features[i : i + 1], small_logistic_data.labels[i : i + 1]
            x, u = rng.normal(size=5), rng.normal(size=5)
            u /= np.linalg.norm(u)
            numeric = (model.values(x + h * u, a, b)[0] - model.values(x - h * u, a, b)[0]) / (2 * h)
            assert abs(float(model.gradients(x, a, b)[0] @ u) - numeric) <= 1e-5

    def test_logistic_lipschitz_and_smooth(self, small_logistic_data: Dataset, rng) -> None:
        """Per-sample gradients are bounded by G and L-Lipschitz in x."""
        model = LossModel.for_dataset(LossKind.LOGISTIC, small_logistic_data)
        for _ in range(100):
            i = int(rng.integers(small_logistic_data.n))
            a, b = small_logistic_data.features[i], float(small_logistic_data.labels[i])
            x1, x2 = rng.normal(scale=3.0, size=5), rng.normal(scale=3.0, size=5)
            g1, g2 = model.sample_gradient(x1, a, b), model.sample_gradient(x2, a, b)
            assert np.linalg.norm(g1) <= model.lipschitz_G + 1e-12
            assert np.linalg.norm(g1 - g2) <= model.smooth_L * np.linalg.norm(x1 - x2) + 1e-12


class TestRegularizer:
    """Tests for regularizers and their proximal operators."""

    def test_none_is_identity(self) -> None:
        """The zero regularizer's prox returns its input."""
        y = np.array([1.5, -2.0])
        np.testing.assert_array_equal(prox(Regularizer.none(), 0.7, y), y)

    def test_squared_l2_closed_form(self) -> None:
        """Ridge prox with lambda=0.01, step=0.1 divides by 1.001."""
        out = prox(Regularizer.squared_l2(0.01), 0.1, np.array([1.0, -2.0]))
        np.testing.assert_allclose(out, [0.999000999000999, -1.998001998001998], rtol=1e-12)

    def test_l1_soft_threshold(self) -> None:
        """l1 prox with lambda=1, step=0.3 maps (0.5, -0.2) to (0.2, 0)."""
        np.testing.assert_allclose(prox(Regularizer.l1(1.0), 0.3, np.array([0.5, -0.2])), [0.2, 0.0])

    @pytest.mark.parametrize(
        "reg",
        [Regularizer.squared_l2(0.01), Regularizer.l1(1.0)],
        ids=["squared_l2", "l1"],
    )
    def test_prox_matches_grid_search(self, reg: Regularizer) -> None:
        """Closed-form prox agrees with a dense grid search per coordinate."""
        step, y = 0.3, np.array([0.5, -0.2])
        grid = np.linspace(-3.0, 3.0, 600_001)
        out = prox(reg, step, y)
        # both regularizers are separable
        for j in range(2):
            if reg.kind is RegularizerKind.SQUARED_L2:
                penalty = 0.5 * reg.lam * grid**2
            else:
                penalty = reg.lam * np.abs(grid)
            objective = 0.5 * (grid - y[j]) ** 2 + step * penalty
            assert abs(grid[np.argmin(objective)] - out[j]) <= 1e-5

    def test_indicator_projects(self) -> None:
        """Indicator prox is the projection onto its body."""
        reg = Regularizer.indicator(ConvexBody.l2_ball(1.0, 2))
        np.testing.assert_allclose(prox(reg, 1.0, np.array([3.0, 4.0])), [0.6, 0.8])
        assert reg.value(np.array([3.0, 4.0])) == float("inf")
        assert reg.value(np.array([0.6, 0.8])) == 0.0

    def test_indicator_needs_body(self) -> None:
        """The indicator kind must carry a body."""
        with pytest.raises(InvalidInputError):
            Regularizer(RegularizerKind.INDICATOR)

    def test_non_positive_step_rejected(self) -> None:
        """prox steps must be positive."""
        with pytest.raises(InvalidInputError):
            Regularizer.l1(1.0).prox(0.0, np.zeros(2))

    @settings(max_examples=100, deadline=None)
    @given(x=vectors3, y=vectors3)
    def test_prox_non_expansive(self, x: np.ndarray, y: np.ndarray) -> None:
        """Every prox is 1-Lipschitz."""
        regs = [
            Regularizer.none(),
            Regularizer.squared_l2(0.5),
            Regularizer.l1(0.3),
            Regularizer.indicator(ConvexBody.l1_ball(1.0, 3)),
        ]
        for reg in regs:
            gap = np.linalg.norm(reg.prox(0.7, x) - reg.prox(0.7, y))
            assert gap <= np.linalg.norm(x - y) + 1e-12

    def test_smooth_gradient_only(self) -> None:
        """Non-smooth regularizers have no gradient."""
        assert Regularizer.squared_l2(0.1).is_smooth
        with pytest.raises(InvalidInputError):
            Regularizer.l1(0.1).gradient(np.zeros(2))


class TestObjective:
    """Tests for ErmObjective and excess risk."""

    def test_ridge_strong_convexity(self, ridge_logistic: ErmObjective) -> None:
        """mu defaults to lambda and kappa = L / mu."""
        assert ridge_logistic.strong_convexity_mu == 0.01
        assert ridge_logistic.condition_kappa == pytest.approx(ridge_logistic.smoothness / 0.01)

    def test_strong_convexity_witness(self, ridge_logistic: ErmObjective, rng) -> None:
        """F^r lies above its tangent plus (mu/2)||y - x||^2."""
        mu = ridge_logistic.strong_convexity_mu
        reg = ridge_logistic.regularizer
        for _ in range(100):
            x, y = rng.normal(size=10), rng.normal(size=10)
            grad = ridge_logistic.full_gradient(x) + reg.gradient(x)
            lower = ridge_logistic.value(x) + grad @ (y - x) + 0.5 * mu * np.sum((y - x) ** 2)
            assert ridge_logistic.value(y) >= lower - 1e-12

    def test_excess_risk_quadratic(self, half_norm_sq: QuadraticObjective) -> None:
        """F = 1/2 ||x||^2 at (1, 1) with F* = 0 has excess risk 1."""
        assert excess_risk(half_norm_sq, np.array([1.0, 1.0]), 0.0) == pytest.approx(1.0)

    def test_gradient_mapping_zero_at_optimum(self, half_norm_sq: QuadraticObjective) -> None:
        """The gradient mapping vanishes at the minimizer."""
        assert half_norm_sq.gradient_mapping_norm(np.zeros(2)) == 0.0
        assert half_norm_sq.gradient_mapping_norm(np.array([1.0, 0.0])) > 0.0


class TestDeriveConstants:
    """Tests for Lipschitz and smoothness constants."""

    def test_logistic_unit_rows(self, logistic_data: Dataset) -> None:
        """Unit rows give G = 1 and L = 1/4 for logistic loss."""
        G, L = derive_constants(logistic_data, LossKind.LOGISTIC)
        assert G == pytest.approx(1.0)
        assert L == pytest.approx(0.25)

    def test_squared_unit_rows(self, logistic_data: Dataset) -> None:
        """Unit rows give L = 1 for squared loss."""
        _, L = derive_constants(logistic_data, LossKind.SQUARED)
        assert L == pytest.approx(1.0)

    def test_zero_row_contributes_nothing(self) -> None:
        """A zero feature row does not raise the maxima."""
        data = Dataset(np.array([[0.0, 0.0], [0.6, 0.0]]), np.array([1.0, -1.0]))
        G, L = derive_constants(data, LossKind.LOGISTIC)
        assert (G, L) == pytest.approx((0.6, 0.09))

    def test_unnormalized_rows_warn(self, caplog) -> None:
        """Rows above unit norm log a warning and use the actual norm."""
        data = Dataset(np.array([[3.0, 4.0]]), np.array([1.0]))
        with caplog.at_level(logging.WARNING, logger="dperm"):
            G, L = derive_constants(data, LossKind.LOGISTIC)
        assert "not normalized" in caplog.text
        assert (G, L) == pytest.approx((5.0, 6.25))


class TestAnalyticObjectives:
    """Tests for the quadratic and two-well objectives."""

    def test_quadratic_spectrum(self) -> None:
        """Smoothness and strong convexity come from the Hessian eigenvalues."""
        obj = QuadraticObjective(np.diag([0.1, 2.0]), np.array([1.0, 0.0]))
        assert obj.smoothness == pytest.approx(2.0)
        assert obj.strong_convexity_mu == pytest.approx(0.1)
        np.testing.assert_allclose(obj.full_gradient(np.zeros(2)), [-1.0, 0.0])

    def test_quadratic_rejects_asymmetric(self) -> None:
        """The Hessian must be symmetric."""
        with pytest.raises(InvalidInputError):
            QuadraticObjective(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_double_well_minimum(self) -> None:
        """The wells sit at +-sqrt(ln 2h) with the closed-form value."""
        obj = DoubleWellObjective(dim=3, height=2.0)
        assert obj.smoothness == pytest.approx(3.0)
        np.testing.assert_allclose(obj.full_gradient(obj.minimizer), 0.0, atol=1e-12)
        assert obj.value(obj.minimizer) == pytest.approx(obj.minimum_value)
        assert obj.value(-obj.minimizer) == pytest.approx(obj.minimum_value)

    def test_double_well_spurious_critical_point(self) -> None:
        """The origin is a critical point above the minimum."""
        obj = DoubleWellObjective(dim=2)
        np.testing.assert_array_equal(obj.full_gradient(np.zeros(2)), 0.0)
        assert obj.value(np.zeros(2)) > obj.minimum_value
