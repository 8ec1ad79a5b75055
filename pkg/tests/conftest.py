"""Pytest fixtures for dperm tests."""

from __future__ import annotations

import io
import logging
from collections.abc import Iterator

import numpy as np
import pytest
from rich.console import Console

from dperm._data import synth_logistic, synth_quadratic
from dperm._objective import (
    Dataset,
    ErmObjective,
    LossKind,
    LossModel,
    QuadraticObjective,
    Regularizer,
)


@pytest.fixture
def captured_output() -> io.StringIO:
    """StringIO buffer for capturing output."""
    return io.StringIO()


@pytest.fixture
def test_console(captured_output: io.StringIO) -> Console:
    """Rich Console that writes to StringIO instead of terminal."""
    return Console(file=captured_output, force_terminal=False, width=120)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test inputs."""
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Two quadratic points a1=(1,0), a2=(0,1) with zero labels."""
    return Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, 0.0]))


@pytest.fixture(scope="session")
def logistic_data() -> Dataset:
    """Synthetic logistic instance, n=1000, p=10."""
    return synth_logistic(1000, 10, seed=7)


@pytest.fixture(scope="session")
def small_logistic_data() -> Dataset:
    """Synthetic logistic instance, n=200, p=5."""
    return synth_logistic(200, 5, seed=3)


@pytest.fixture
def ridge_logistic(logistic_data: Dataset) -> ErmObjective:
    """Ridge logistic regression with lambda = 0.01 on unit-norm rows."""
    loss = LossModel.for_dataset(LossKind.LOGISTIC, logistic_data)
    return ErmObjective(logistic_data, loss, Regularizer.squared_l2(0.01))


@pytest.fixture
def small_ridge_logistic(small_logistic_data: Dataset) -> ErmObjective:
    """Ridge logistic regression on the small instance."""
    loss = LossModel.for_dataset(LossKind.LOGISTIC, small_logistic_data)
    return ErmObjective(small_logistic_data, loss, Regularizer.squared_l2(0.1))


@pytest.fixture(scope="session")
def quadratic_data() -> Dataset:
    """Least-squares instance with Hessian spectrum [0.1, 1]."""
    return synth_quadratic(1000, 10, 0.1, 1.0, seed=11)


@pytest.fixture
def least_squares(quadratic_data: Dataset) -> ErmObjective:
    """Least squares on the designed spectrum, L = 1 and mu = 0.1."""
    derived = LossModel.for_dataset(LossKind.SQUARED, quadratic_data)
    loss = LossModel(LossKind.SQUARED, derived.lipschitz_G, 1.0)
    return ErmObjective(quadratic_data, loss, mu=0.1)


@pytest.fixture
def half_norm_sq() -> QuadraticObjective:
    """F(x) = 1/2 ||x||^2 in two dimensions."""
    return QuadraticObjective(np.eye(2))


@pytest.fixture(autouse=True)
def restore_package_logger() -> Iterator[None]:
    """Undo CLI logging setup so caplog keeps seeing dperm records."""
    logger = logging.getLogger("dperm")
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)
    logger.propagate = propagate
