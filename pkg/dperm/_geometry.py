"""Constrained ERM over centrally symmetric convex bodies and DP-AccMD.

Mirror maps are scaled squared Euclidean norms w(x) = (s / 2) ||x||_2^2:

- l2_ball(R): s = 1 / R^2, exactly 1-strongly convex in ||.||_C = ||.||_2 / R.
- l1_ball(R): s = p / R^2, 1-strongly convex in ||.||_1 / R because
  ||v||_1^2 <= p ||v||_2^2. This costs a factor p in B_w compared with a
  width-adapted map.

The y-update over an l1 ball minimizes in the same majorizing norm
sqrt(p) ||.||_2 / R, since ||.||_1^2 is not differentiable, and is solved by
projected gradient. F stays L ||C||_2^2-smooth in that norm, so the descent
guarantee is kept.

Smoothness is rescaled to L' = L ||C||_2^2 for the whole schedule. Setting
rescale=False keeps L in the alpha/r schedule, which reproduces the
hand-worked single step with ||C||_2 treated as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np

from dperm._exceptions import ConvergenceError, InvalidInputError
from dperm._objective import OracleCounter, RegularizerKind
from dperm._optimizers import RunTrace, _initial_point, _Recorder, _start_trace, _streams
from dperm._privacy import Algorithm, NoisePlan, PrivacyBudget, RunStreams, sample_noise
from dperm._protocols import Objective


class BodyKind(str, Enum):
    L2_BALL = "l2_ball"
    L1_BALL = "l1_ball"


# =============================================================================
# CONVEX BODIES
# =============================================================================


def project_l1_ball(y: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x||_1 <= radius} by sort and threshold."""
    magnitudes = np.abs(y)
    if magnitudes.sum() <= radius:
        return y.copy()
    ordered = np.sort(magnitudes)[::-1]
    cumulative = np.cumsum(ordered)
    ranks = np.arange(1, ordered.size + 1)
    support = np.nonzero(ordered - (cumulative - radius) / ranks > 0)[0][-1]
    theta = (cumulative[support] - radius) / (support + 1.0)
    return np.sign(y) * np.maximum(magnitudes - theta, 0.0)


@dataclass(frozen=True)
class ConvexBody:
    """A centrally symmetric ball in R^p, in the l2 or l1 norm.

    Example:
        C = ConvexBody.l1_ball(1.0, dim=3)
        C.minkowski_norm(np.array([3.0, -4.0, 0.0]))  # 7.0
    """

    kind: BodyKind
    radius: float
    dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BodyKind(self.kind))
        if not self.radius > 0:
            raise InvalidInputError(f"radius must be > 0, got {self.radius}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInputError(f"dim must be an integer >= 1, got {self.dim}")

    @classmethod
    def l2_ball(cls, radius: float, dim: int) -> ConvexBody:
        return cls(BodyKind.L2_BALL, radius, dim)

    @classmethod
    def l1_ball(cls, radius: float, dim: int) -> ConvexBody:
        return cls(BodyKind.L1_BALL, radius, dim)

    @property
    def l2_diameter(self) -> float:
        """sup ||x - y||_2 over the body; 2R for both balls."""
        return 2.0 * self.radius

    def _vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise InvalidInputError(f"expected a vector of length {self.dim}, got shape {v.shape}")
        return v

    def minkowski_norm(self, v: np.ndarray) -> float:
        """min{r >= 0 : v in r C}."""
        v = self._vector(v)
        if self.kind is BodyKind.L2_BALL:
            return float(np.linalg.norm(v)) / self.radius
        return float(np.abs(v).sum()) / self.radius

    def dual_norm(self, v: np.ndarray) -> float:
        """max_{w in C} |<w, v>|; the support function, as C is symmetric."""
        v = self._vector(v)
        if self.kind is BodyKind.L2_BALL:
            return self.radius * float(np.linalg.norm(v))
        return self.radius * float(np.abs(v).max())

    def contains(self, x: np.ndarray, *, tol: float = 1e-12) -> bool:
        return self.minkowski_norm(x) <= 1.0 + tol

    def euclidean_project(self, y: np.ndarray) -> np.ndarray:
        y = self._vector(y)
        if self.kind is BodyKind.L2_BALL:
            norm = float(np.linalg.norm(y))
            return y.copy() if norm <= self.radius else y * (self.radius / norm)
        return project_l1_ball(y, self.radius)

    @property
    def mirror_scale(self) -> float:
        """s such that (s/2)||.||_2^2 is 1-strongly convex in the Minkowski norm."""
        if self.kind is BodyKind.L2_BALL:
            return 1.0 / self.radius**2
        return self.dim / self.radius**2


def minkowski_norm(body: ConvexBody, v: np.ndarray) -> float:
    return body.minkowski_norm(v)


def dual_norm(body: ConvexBody, v: np.ndarray) -> float:
    return body.dual_norm(v)


def diameter_gauge_check(body: ConvexBody, v: np.ndarray) -> bool:
    """||v||_2 <= ||C||_2 ||v||_C, up to 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.linalg.norm(v)) <= body.l2_diameter * body.minkowski_norm(v) + 1e-12


# =============================================================================
# GAUSSIAN WIDTH
# =============================================================================


@dataclass(frozen=True)
class WidthEstimate:
    """Monte Carlo estimate of E[sup_{w in C} <b, w>] for b ~ N(0, I_p).

    second_moment estimates E[(sup_{w in C} <b, w>)^2].
    """

    estimate: float
    std_error: float
    second_moment: float
    n_samples: int


_WIDTH_CHUNK = 10_000


def gaussian_width_mc(body: ConvexBody, n_samples: int, rng: np.random.Generator) -> WidthEstimate:
    """Estimate the Gaussian width of body from n_samples standard normal draws."""
    if int(n_samples) != n_samples or n_samples < 100:
        raise InvalidInputError(f"n_samples must be an integer >= 100, got {n_samples}")
    total = 0.0
    total_sq = 0.0
    remaining = n_samples
    while remaining > 0:
        size = min(remaining, _WIDTH_CHUNK)
        b = rng.standard_normal((size, body.dim))
        if body.kind is BodyKind.L2_BALL:
            support = body.radius * np.linalg.norm(b, axis=1)
        else:
            support = body.radius * np.abs(b).max(axis=1)
        total += float(support.sum())
        total_sq += float((support**2).sum())
        remaining -= size
    mean = total / n_samples
    second = total_sq / n_samples
    variance = max(second - mean**2, 0.0) * n_samples / (n_samples - 1)
    return WidthEstimate(mean, math.sqrt(variance / n_samples), second, n_samples)


# =============================================================================
# MIRROR GEOMETRY
# =============================================================================


@dataclass(frozen=True)
class MirrorMap:
    """w(x) = (scale / 2) ||x||_2^2, 1-strongly convex w.r.t. the body's Minkowski norm."""

    body: ConvexBody
    scale: float

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise InvalidInputError(f"mirror scale must be > 0, got {self.scale}")

    @classmethod
    def for_body(cls, body: ConvexBody) -> MirrorMap:
        return cls(body, body.mirror_scale)

    @property
    def closed_form(self) -> bool:
        """True when the z-update is a single projection (the l2 ball)."""
        return self.body.kind is BodyKind.L2_BALL

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * self.scale * float(x @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x, dtype=np.float64)


def bregman(mirror: MirrorMap, y: np.ndarray, x: np.ndarray) -> float:
    """B_w(y, x) = w(y) - <grad w(x), y - x> - w(x)."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return mirror.value(y) - float(mirror.gradient(x) @ (y - x)) - mirror.value(x)


def _projected_gradient(
    body: ConvexBody,
    center: np.ndarray,
    weight: float,
    linear: np.ndarray,
    *,
    tol: float,
    max_iter: int,
) -> np.ndarray:
    """Minimize (weight/2)||y - center||^2 + <linear, y> over the body."""
    step = 1.0 / weight
    y = body.euclidean_project(center)
    for _ in range(max_iter):
        moved = body.euclidean_project(y - step * (weight * (y - center) + linear))
        mapping = float(np.linalg.norm(y - moved)) / step
        y = moved
        if mapping <= tol:
            return y
    raise ConvergenceError(f"inner solver did not reach tolerance {tol:g} in {max_iter} iterations")


StepMethod = Literal["auto", "closed_form", "inner"]


def smoothed_min_step(
    body: ConvexBody,
    x: np.ndarray,
    g: np.ndarray,
    L: float,
    *,
    method: StepMethod = "auto",
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """y-update: argmin_{y in C} (L ||C||_2^2 / 2) ||y - x||_C^2 + <g, y - x>.

    L is the smoothness of F in ||.||_2; the body rescales it. The l2 ball has
    the closed form project(x - g R^2 / (L ||C||_2^2)). The l1 ball
    goes through the projected-gradient inner solver ("auto"); either path
    can be forced with method.
    """
    if not L > 0:
        raise InvalidInputError(f"L must be > 0, got {L}")
    weight = L * body.l2_diameter**2 * body.mirror_scale
    use_closed = method == "closed_form" or (method == "auto" and body.kind is BodyKind.L2_BALL)
    if use_closed:
        return body.euclidean_project(np.asarray(x) - np.asarray(g) / weight)
    return _projected_gradient(
        body, np.asarray(x, dtype=np.float64), weight, np.asarray(g), tol=tol, max_iter=max_iter
    )


def mirror_step(
    mirror: MirrorMap,
    z: np.ndarray,
    g_noisy: np.ndarray,
    alpha: float,
    *,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """z-update: argmin_{z' in C} B_w(z', z) + alpha <g_noisy, z' - z>."""
    if alpha < 0:
        raise InvalidInputError(f"alpha must be >= 0, got {alpha}")
    z = np.asarray(z, dtype=np.float64)
    if alpha == 0:
        return z.copy()
    if mirror.closed_form:
        return mirror.body.euclidean_project(z - alpha * np.asarray(g_noisy) / mirror.scale)
    return _projected_gradient(
        mirror.body, z, mirror.scale, alpha * np.asarray(g_noisy), tol=tol, max_iter=max_iter
    )


# =============================================================================
# DP-AccMD
# =============================================================================


@dataclass(frozen=True)
class AccMDConfig:
    """DP-AccMD run settings. The alpha/r schedule is derived per step, never stored."""

    T: int
    x0: np.ndarray | None = None
    noise: NoisePlan = field(default_factory=NoisePlan.off)
    tol: float = 1e-10
    max_inner_iter: int = 100_000
    rescale: bool = True
    record_every: int = 1

    def __post_init__(self) -> None:
        if int(self.T) != self.T or self.T < 1:
            raise InvalidInputError(f"T must be an integer >= 1, got {self.T}")
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be > 0, got {self.tol}")
        if self.max_inner_iter < 1 or self.record_every < 1:
            raise InvalidInputError("max_inner_iter and record_every must be >= 1")

    @staticmethod
    def schedule(k: int, L_sched: float) -> tuple[float, float]:
        """(alpha_{k+1}, r_k) = ((k + 2) / (4 L), 1 / (2 alpha_{k+1} L))."""
        alpha = (k + 2) / (4.0 * L_sched)
        return alpha, 1.0 / (2.0 * alpha * L_sched)


def dp_accmd(
    obj: Objective,
    body: ConvexBody,
    mirror: MirrorMap,
    cfg: AccMDConfig,
    rng: RunStreams | int,
    *,
    f_star: float | None = None,
    counter: OracleCounter | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """DP-AccMD: linear coupling of a noiseless gradient step and a noisy mirror step.

    x_{k+1} = r_k z_k + (1 - r_k) y_k; the y-update uses grad F(x_{k+1}), the
    z-update uses grad F(x_{k+1}) + b_{k+1} with b ~ N(0, sigma^2 I_p).
    Returns y_T. Calibrate sigma with calibrate_full_gradient.
    """
    if obj.regularizer.kind not in (RegularizerKind.NONE, RegularizerKind.INDICATOR):
        raise InvalidInputError("dp_accmd minimizes a smooth loss over C; drop the regularizer")
    if body.dim != obj.dim or mirror.body != body:
        raise InvalidInputError("objective, body and mirror map must share one body and dimension")
    x0 = _initial_point(cfg.x0, obj.dim)
    if not body.contains(x0):
        raise InvalidInputError(f"x0 lies outside the {body.kind.value} of radius {body.radius:g}")

    streams = _streams(rng)
    counter = counter if counter is not None else OracleCounter()
    L_sched = obj.smoothness * body.l2_diameter**2 if cfg.rescale else obj.smoothness
    trace = _start_trace(Algorithm.DP_ACCMD, streams, cfg.noise)
    recorder = _Recorder(obj, trace, counter, f_star)

    y = x0.copy()
    z = x0.copy()
    recorder.record(0, y)
    for k in range(cfg.T):
        alpha, r = AccMDConfig.schedule(k, L_sched)
        x = r * z + (1.0 - r) * y
        gradient = obj.full_gradient(x, counter)
        y = smoothed_min_step(body, x, gradient, obj.smoothness, tol=cfg.tol, max_iter=cfg.max_inner_iter)
        b = sample_noise(obj.dim, cfg.noise.sigma, streams.noise)
        z = mirror_step(mirror, z, gradient + b, alpha, tol=cfg.tol, max_iter=cfg.max_inner_iter)
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.T:
            recorder.record(k + 1, y)
    recorder.finish(y)
    return y, trace


def recommend_T_accmd(
    L: float,
    body_width: float,
    diameter: float,
    B_w0: float,
    n: int,
    G: float,
    budget: PrivacyBudget,
) -> int:
    """T = ceil(sqrt(L D^2 sqrt(B_w0) n eps / (G sqrt(ln(1/delta)) sqrt(G_C^2 + D^2)))), at least 1."""
    for name, value in (("L", L), ("diameter", diameter), ("G", G)):
        if not value > 0:
            raise InvalidInputError(f"{name} must be > 0, got {value}")
    if body_width < 0 or B_w0 < 0:
        raise InvalidInputError("body_width and B_w0 must be >= 0")
    numerator = L * diameter**2 * math.sqrt(B_w0) * n * budget.epsilon
    denominator = G * math.sqrt(budget.log_inv_delta) * math.sqrt(body_width**2 + diameter**2)
    return max(1, math.ceil(math.sqrt(numerator / denominator)))
