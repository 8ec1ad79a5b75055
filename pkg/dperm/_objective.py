"""ERM objectives: datasets, smooth losses, proximable regularizers.

The objective is F^r(x, D) = (1/n) sum_i f(x, z_i) + r(x). Losses are
generalized linear: f(x, z) depends on x only through <x, a> for a sample
z = (a, b).

The appendix of the source work writes the logistic loss as
log(1 + exp(1 + y w^T x)). That form is not minimized at a classifier and
breaks the 1-Lipschitz normalization, so the standard logistic loss
log(1 + exp(-y <w, a>)) is used instead.

Per-sample gradients are never clipped. The Lipschitz constant G is
enforced by normalizing feature rows to unit l2 norm.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from dperm._exceptions import InvalidInputError
from dperm._logging import logger
from dperm._protocols import Objective, ProjectableSet

# Rows with a larger l2 norm than this count as unnormalized
_NORM_SLACK = 1e-12


class LossKind(str, Enum):
    """Supported smooth losses."""

    LOGISTIC = "logistic"
    SQUARED = "squared"


class RegularizerKind(str, Enum):
    """Supported regularizers, each with a closed-form prox."""

    NONE = "none"
    SQUARED_L2 = "squared_l2"
    L1 = "l1"
    INDICATOR = "indicator"


# =============================================================================
# DATA
# =============================================================================


@dataclass(frozen=True)
class DataPoint:
    """One labeled sample z = (a, b)."""

    features: np.ndarray
    label: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable n x p design matrix with labels.

    Example:
        data = Dataset(np.array([[1.0, 0.0]]), np.array([0.0]))
        data.n, data.p  # (1, 2)
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64).reshape(-1)
        if features.ndim != 2:
            raise InvalidInputError(f"features must be a 2-D array, got shape {features.shape}")
        if features.shape[0] == 0:
            raise InvalidInputError("empty dataset")
        if labels.shape[0] != features.shape[0]:
            raise InvalidInputError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_points(cls, points: list[DataPoint], dim: int) -> Dataset:
        """Build a dataset from points, checking every length against dim."""
        for index, point in enumerate(points):
            if len(point.features) != dim:
                raise InvalidInputError(
                    f"point {index} has {len(point.features)} features, expected {dim}"
                )
        if not points:
            raise InvalidInputError("empty dataset")
        features = np.stack([np.asarray(pt.features, dtype=np.float64) for pt in points])
        labels = np.array([pt.label for pt in points], dtype=np.float64)
        return cls(features, labels)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def p(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> DataPoint:
        return DataPoint(self.features[index], float(self.labels[index]))

    def row_norms(self) -> np.ndarray:
        """Euclidean norm of each feature row."""
        return np.linalg.norm(self.features, axis=1)

    def max_row_norm(self) -> float:
        return float(self.row_norms().max(initial=0.0))


# =============================================================================
# LOSSES
# =============================================================================


def derive_constants(
    dataset: Dataset, loss_kind: LossKind | str, *, domain_radius: float = 1.0
) -> tuple[float, float]:
    """Lipschitz and smoothness constants (G, L) of the per-sample loss.

    logistic: G = max ||a_i||, L = max ||a_i||^2 / 4.
    squared:  G = max ||a_i|| (||a_i|| R + |b_i|) over ||x|| <= R, L = max ||a_i||^2.

    Unnormalized rows are not rejected: a warning is logged and the
    constants come from the actual maximum norms.
    """
    kind = LossKind(loss_kind)
    if domain_radius <= 0:
        raise InvalidInputError(f"domain_radius must be positive, got {domain_radius}")
    norms = dataset.row_norms()
    max_norm = float(norms.max(initial=0.0))
    if max_norm > 1.0 + _NORM_SLACK:
        logger.warning(
            "features are not normalized (max row norm %.6g); constants use the actual norms",
            max_norm,
        )
    if kind is LossKind.LOGISTIC:
        return max_norm, max_norm**2 / 4.0
    per_row = norms * (norms * domain_radius + np.abs(dataset.labels))
    return float(per_row.max(initial=0.0)), max_norm**2


@dataclass(frozen=True)
class LossModel:
    """A generalized linear loss with its Lipschitz and smoothness constants.

    Use for_dataset() to derive the constants from data; pass them
    explicitly when the smoothness of F is known more tightly than the
    per-sample bound (for example on a designed quadratic).
    """

    kind: LossKind
    lipschitz_G: float
    smooth_L: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.lipschitz_G < 0:
            raise InvalidInputError(f"lipschitz_G must be >= 0, got {self.lipschitz_G}")
        if self.smooth_L <= 0:
            raise InvalidInputError(f"smooth_L must be > 0, got {self.smooth_L}")

    @classmethod
    def for_dataset(
        cls, kind: LossKind | str, dataset: Dataset, *, domain_radius: float = 1.0
    ) -> LossModel:
        G, L = derive_constants(dataset, kind, domain_radius=domain_radius)
        return cls(LossKind(kind), G, L)

    def values(self, x: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Per-sample loss values for the rows of features."""
        margins = features @ x
        if self.kind is LossKind.LOGISTIC:
            return np.logaddexp(0.0, -labels * margins)
        return 0.5 * (margins - labels) ** 2

    def gradients(self, x: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Per-sample gradients, one row per sample."""
        margins = features @ x
        if self.kind is LossKind.LOGISTIC:
            coef = -labels * expit(-labels * margins)
        else:
            coef = margins - labels
        return coef[:, None] * features

    def sample_gradient(self, x: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
        margin = float(a @ x)
        if self.kind is LossKind.LOGISTIC:
            return (-b * float(expit(-b * margin))) * a
        return (margin - b) * a


# =============================================================================
# REGULARIZERS
# =============================================================================


@dataclass(frozen=True)
class Regularizer:
    """A simple convex function r with a closed-form proximal operator.

    squared_l2(lam) is (lam / 2) ||x||^2, so it is lam-strongly convex.

    Example:
        reg = Regularizer.l1(0.1)
        reg.prox(0.5, np.array([1.0, -0.01]))  # array([0.95, 0.])
    """

    kind: RegularizerKind = RegularizerKind.NONE
    lam: float = 0.0
    body: ProjectableSet | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RegularizerKind(self.kind))
        if self.lam < 0:
            raise InvalidInputError(f"regularization strength must be >= 0, got {self.lam}")
        if (self.kind is RegularizerKind.INDICATOR) != (self.body is not None):
            raise InvalidInputError("a convex body is required by, and only by, the indicator")

    @classmethod
    def none(cls) -> Regularizer:
        return cls()

    @classmethod
    def squared_l2(cls, lam: float) -> Regularizer:
        return cls(RegularizerKind.SQUARED_L2, lam)

    @classmethod
    def l1(cls, lam: float) -> Regularizer:
        return cls(RegularizerKind.L1, lam)

    @classmethod
    def indicator(cls, body: ProjectableSet) -> Regularizer:
        return cls(RegularizerKind.INDICATOR, 0.0, body)

    @property
    def strong_convexity_mu(self) -> float:
        return self.lam if self.kind is RegularizerKind.SQUARED_L2 else 0.0

    @property
    def is_smooth(self) -> bool:
        """True when r is differentiable everywhere (none, squared_l2)."""
        return self.kind in (RegularizerKind.NONE, RegularizerKind.SQUARED_L2)

    @property
    def gradient_lipschitz(self) -> float:
        """Lipschitz constant of gradient(); lam for squared_l2, 0 for none."""
        return self.lam if self.kind is RegularizerKind.SQUARED_L2 else 0.0

    def value(self, x: np.ndarray) -> float:
        if self.kind is RegularizerKind.NONE:
            return 0.0
        if self.kind is RegularizerKind.SQUARED_L2:
            return 0.5 * self.lam * float(x @ x)
        if self.kind is RegularizerKind.L1:
            return self.lam * float(np.abs(x).sum())
        assert self.body is not None
        return 0.0 if self.body.contains(x, tol=1e-9) else float("inf")

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of a smooth regularizer."""
        if self.kind is RegularizerKind.NONE:
            return np.zeros_like(x)
        if self.kind is RegularizerKind.SQUARED_L2:
            return self.lam * x
        raise InvalidInputError(f"regularizer {self.kind.value} is not differentiable")

    def prox(self, step: float, y: np.ndarray) -> np.ndarray:
        """argmin_x { 1/2 ||x - y||^2 + step * r(x) }."""
        if step <= 0:
            raise InvalidInputError(f"prox step must be > 0, got {step}")
        if self.kind is RegularizerKind.NONE:
            return y.copy()
        if self.kind is RegularizerKind.SQUARED_L2:
            return y / (1.0 + step * self.lam)
        if self.kind is RegularizerKind.L1:
            threshold = step * self.lam
            return np.sign(y) * np.maximum(np.abs(y) - threshold, 0.0)
        assert self.body is not None
        if y.shape != (self.body.dim,):
            raise InvalidInputError(f"expected a vector of length {self.body.dim}, got shape {y.shape}")
        return self.body.euclidean_project(y)


def prox(reg: Regularizer, step: float, y: np.ndarray) -> np.ndarray:
    """Proximal operator of step * r at y."""
    return reg.prox(step, np.asarray(y, dtype=np.float64))


# =============================================================================
# OBJECTIVES
# =============================================================================


@dataclass
class OracleCounter:
    """Counts per-sample gradient evaluations (the gradient complexity)."""

    sample_gradients: int = 0

    def add(self, count: int) -> None:
        self.sample_gradients += count


def _as_point(x: np.ndarray, dim: int) -> np.ndarray:
    point = np.asarray(x, dtype=np.float64)
    if point.shape != (dim,):
        raise InvalidInputError(f"expected a vector of length {dim}, got shape {point.shape}")
    return point


@dataclass(frozen=True, eq=False)
class ErmObjective:
    """F^r(x, D) = (1/n) sum_i f(x, z_i) + r(x).

    mu defaults to the regularizer's strong convexity; pass it explicitly
    when the curvature comes from the loss.

    All methods are pure. Gradient complexity is tracked only through an
    OracleCounter handed in by the caller.
    """

    dataset: Dataset
    loss: LossModel
    regularizer: Regularizer = field(default_factory=Regularizer)
    mu: float | None = None

    def __post_init__(self) -> None:
        if self.mu is not None and self.mu < 0:
            raise InvalidInputError(f"strong convexity mu must be >= 0, got {self.mu}")
        body = self.regularizer.body
        if body is not None and body.dim != self.dataset.p:
            raise InvalidInputError(
                f"constraint set has dimension {body.dim}, data has {self.dataset.p}"
            )

    @property
    def dim(self) -> int:
        return self.dataset.p

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def smoothness(self) -> float:
        return self.loss.smooth_L

    @property
    def strong_convexity_mu(self) -> float:
        return self.regularizer.strong_convexity_mu if self.mu is None else self.mu

    @property
    def condition_kappa(self) -> float:
        mu = self.strong_convexity_mu
        return self.smoothness / mu if mu > 0 else float("inf")

    def with_regularizer(self, regularizer: Regularizer) -> ErmObjective:
        return dataclasses.replace(self, regularizer=regularizer)

    def loss_value(self, x: np.ndarray) -> float:
        x = _as_point(x, self.dim)
        data = self.dataset
        return float(self.loss.values(x, data.features, data.labels).mean())

    def value(self, x: np.ndarray) -> float:
        x = _as_point(x, self.dim)
        return self.loss_value(x) + self.regularizer.value(x)

    def sample_gradient(
        self, x: np.ndarray, i: int, counter: OracleCounter | None = None
    ) -> np.ndarray:
        """Gradient of f(x, z_i)."""
        x = _as_point(x, self.dim)
        if not 0 <= i < self.n:
            raise InvalidInputError(f"sample index {i} out of range [0, {self.n})")
        if counter is not None:
            counter.add(1)
        return self.loss.sample_gradient(x, self.dataset.features[i], float(self.dataset.labels[i]))

    def full_gradient(self, x: np.ndarray, counter: OracleCounter | None = None) -> np.ndarray:
        """(1/n) sum_i grad f(x, z_i), summed in row order."""
        x = _as_point(x, self.dim)
        if counter is not None:
            counter.add(self.n)
        data = self.dataset
        return self.loss.gradients(x, data.features, data.labels).sum(axis=0) / self.n

    def gradient_mapping_norm(self, x: np.ndarray, step: float | None = None) -> float:
        """||x - prox_{step r}(x - step grad F(x))|| / step; zero exactly at x_*."""
        return _gradient_mapping_norm(self, x, step)


def _gradient_mapping_norm(obj: Objective, x: np.ndarray, step: float | None) -> float:
    step = 1.0 / obj.smoothness if step is None else step
    x = _as_point(x, obj.dim)
    moved = obj.regularizer.prox(step, x - step * obj.full_gradient(x))
    return float(np.linalg.norm(x - moved)) / step


def full_gradient(obj: ErmObjective, x: np.ndarray) -> np.ndarray:
    """Full-data gradient of the smooth part of obj at x."""
    return obj.full_gradient(x)


def sample_gradient(obj: ErmObjective, x: np.ndarray, i: int) -> np.ndarray:
    """Gradient of the i-th sample's loss at x."""
    return obj.sample_gradient(x, i)


def excess_risk(obj: Objective, x: np.ndarray, f_star: float) -> float:
    """F^r(x) - f_star. Slightly negative values only reflect reference tolerance."""
    return obj.value(x) - f_star


# =============================================================================
# ANALYTIC OBJECTIVES
# =============================================================================


@dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """F(x) = 1/2 x^T H x - <b, x> with symmetric positive semidefinite H.

    Implements the Objective protocol so the full-gradient optimizers and
    the reference solver run on it directly. Each full gradient counts as
    one oracle call.
    """

    hessian: np.ndarray
    linear: np.ndarray | None = None
    regularizer: Regularizer = field(default_factory=Regularizer)
    _eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        hessian = np.asarray(self.hessian, dtype=np.float64)
        if hessian.ndim != 2 or hessian.shape[0] != hessian.shape[1]:
            raise InvalidInputError(f"hessian must be square, got shape {hessian.shape}")
        if not np.allclose(hessian, hessian.T):
            raise InvalidInputError("hessian must be symmetric")
        linear = np.zeros(hessian.shape[0]) if self.linear is None else _as_point(self.linear, hessian.shape[0])
        object.__setattr__(self, "hessian", hessian)
        object.__setattr__(self, "linear", linear)
        eigenvalues = np.linalg.eigvalsh(hessian)
        if eigenvalues[0] < -1e-12:
            raise InvalidInputError("hessian must be positive semidefinite")
        object.__setattr__(self, "_eigenvalues", eigenvalues)

    @property
    def dim(self) -> int:
        return int(self.hessian.shape[0])

    @property
    def smoothness(self) -> float:
        return float(self._eigenvalues[-1])

    @property
    def strong_convexity_mu(self) -> float:
        return max(float(self._eigenvalues[0]), 0.0)

    def loss_value(self, x: np.ndarray) -> float:
        x = _as_point(x, self.dim)
        assert self.linear is not None
        return 0.5 * float(x @ self.hessian @ x) - float(self.linear @ x)

    def value(self, x: np.ndarray) -> float:
        x = _as_point(x, self.dim)
        return self.loss_value(x) + self.regularizer.value(x)

    def full_gradient(self, x: np.ndarray, counter: OracleCounter | None = None) -> np.ndarray:
        x = _as_point(x, self.dim)
        if counter is not None:
            counter.add(1)
        assert self.linear is not None
        return self.hessian @ x - self.linear

    def gradient_mapping_norm(self, x: np.ndarray, step: float | None = None) -> float:
        return _gradient_mapping_norm(self, x, step)


@dataclass(frozen=True, eq=False)
class DoubleWellObjective:
    """Smooth non-convex F(x) = sum_j (x_j^2 / 2 + h exp(-x_j^2)).

    For h > 1/2 each coordinate has two global wells at +-sqrt(ln 2h) and a
    spurious critical point (a local maximum) at 0, so the PL inequality
    fails near the origin.
    """

    dim: int
    height: float = 2.0
    regularizer: Regularizer = field(default_factory=Regularizer)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise InvalidInputError(f"dim must be >= 1, got {self.dim}")
        if self.height <= 0.5:
            raise InvalidInputError(f"height must exceed 1/2 for two wells, got {self.height}")

    @property
    def smoothness(self) -> float:
        # |w''(t)| peaks at t = 0 or at t^2 = 3/2
        h = self.height
        return max(2.0 * h - 1.0, 1.0 + 4.0 * h * float(np.exp(-1.5)))

    @property
    def minimum_value(self) -> float:
        h = self.height
        return self.dim * (0.5 * float(np.log(2.0 * h)) + 0.5)

    @property
    def minimizer(self) -> np.ndarray:
        return np.full(self.dim, float(np.sqrt(np.log(2.0 * self.height))))

    def loss_value(self, x: np.ndarray) -> float:
        x = _as_point(x, self.dim)
        return float((0.5 * x**2 + self.height * np.exp(-(x**2))).sum())

    def value(self, x: np.ndarray) -> float:
        return self.loss_value(x) + self.regularizer.value(np.asarray(x, dtype=np.float64))

    def full_gradient(self, x: np.ndarray, counter: OracleCounter | None = None) -> np.ndarray:
        x = _as_point(x, self.dim)
        if counter is not None:
            counter.add(1)
        return x - 2.0 * self.height * x * np.exp(-(x**2))
