"""Gradient-perturbation optimizers: DP-SVRG, DP-SVRG++ and DP-GD.

Every optimizer takes an objective, a frozen config holding the step size,
iteration counts, starting point and NoisePlan, and a seed or RunStreams.
It returns (point, RunTrace). Runs are strictly sequential. Concurrent runs
are safe as long as each owns its RunStreams.

Sample indices are drawn uniformly with replacement. Epoch averages are kept
as running means. Starting points must not depend on the data; the default
is the zero vector.
"""

from __future__ import annotations

import math
import time
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from dperm._exceptions import InfeasibleScheduleError, InvalidInputError
from dperm._logging import logger
from dperm._objective import ErmObjective, OracleCounter
from dperm._privacy import (
    Algorithm,
    CalibrationMode,
    NoisePlan,
    PrivacyBudget,
    RunStreams,
    sample_noise,
)
from dperm._protocols import Objective

# Noise and indices are drawn in blocks of this many inner steps
_DRAW_BLOCK = 4096


class OutputMode(str, Enum):
    """Which DP-GD iterate is returned."""

    LAST_ITERATE = "last_iterate"
    UNIFORM_ITERATE = "uniform_iterate"


def _check_step(name: str, value: float) -> None:
    if not value > 0:
        raise InvalidInputError(f"{name} must be > 0, got {value}")


def _check_count(name: str, value: int) -> None:
    if int(value) != value or value < 1:
        raise InvalidInputError(f"{name} must be an integer >= 1, got {value}")


# =============================================================================
# CONFIGS
# =============================================================================


@dataclass(frozen=True)
class SvrgConfig:
    """DP-SVRG schedule: T outer epochs of m inner steps with step size eta."""

    T: int
    m: int
    eta: float
    x0: np.ndarray | None = None
    noise: NoisePlan = field(default_factory=NoisePlan.off)

    def __post_init__(self) -> None:
        _check_count("T", self.T)
        _check_count("m", self.m)
        _check_step("eta", self.eta)


@dataclass(frozen=True)
class SvrgPpConfig:
    """DP-SVRG++ schedule: epoch s runs 2^s m inner steps.

    The analysis uses eta = 1/(13 L); see default_eta().
    """

    T: int
    m: int
    eta: float
    x0: np.ndarray | None = None
    noise: NoisePlan = field(default_factory=NoisePlan.off)

    def __post_init__(self) -> None:
        _check_count("T", self.T)
        _check_count("m", self.m)
        _check_step("eta", self.eta)

    @staticmethod
    def default_eta(L: float) -> float:
        return 1.0 / (13.0 * L)

    def epoch_length(self, s: int) -> int:
        return self.m << s


@dataclass(frozen=True)
class GdConfig:
    """DP-GD schedule. eta must lie in (0, 1/L]; checked against the objective at run time."""

    T: int
    eta: float
    x0: np.ndarray | None = None
    noise: NoisePlan = field(default_factory=NoisePlan.off)
    output_mode: OutputMode = OutputMode.LAST_ITERATE
    record_every: int = 1

    def __post_init__(self) -> None:
        _check_count("T", self.T)
        _check_step("eta", self.eta)
        _check_count("record_every", self.record_every)
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))


# =============================================================================
# TRACE
# =============================================================================


@dataclass(frozen=True)
class EpochRecord:
    """Metrics after one epoch (or iteration, for the full-gradient methods)."""

    epoch: int
    objective: float
    excess_risk: float | None
    grad_norm_sq: float
    sample_gradients: int
    wall_time: float


@dataclass
class RunTrace:
    """Per-epoch metrics of one optimizer run.

    final_record holds the metrics of the returned point. It equals the last
    per-epoch record except for DP-GD in uniform_iterate mode.
    """

    algorithm: Algorithm
    seed: int
    noise_mode: CalibrationMode
    sigma: float
    fallback: bool = False
    records: list[EpochRecord] = field(default_factory=list)
    final_point: np.ndarray | None = None
    sample_gradients: int = 0
    output_index: int | None = None
    final_record: EpochRecord | None = None

    def _final(self) -> EpochRecord | None:
        if self.final_record is not None:
            return self.final_record
        return self.records[-1] if self.records else None

    @property
    def final_excess_risk(self) -> float | None:
        final = self._final()
        return final.excess_risk if final is not None else None

    @property
    def final_grad_norm_sq(self) -> float | None:
        final = self._final()
        return final.grad_norm_sq if final is not None else None

    @property
    def wall_time(self) -> float:
        return self.records[-1].wall_time if self.records else 0.0


class _Recorder:
    """Appends EpochRecords to a trace; metric evaluations are not counted as oracle calls."""

    def __init__(self, obj: Objective, trace: RunTrace, counter: OracleCounter, f_star: float | None) -> None:
        self._obj = obj
        self._trace = trace
        self._counter = counter
        self._f_star = f_star
        self._start = time.perf_counter()

    def _measure(self, epoch: int, x: np.ndarray) -> EpochRecord:
        value = self._obj.value(x)
        gradient = self._obj.full_gradient(x)
        return EpochRecord(
            epoch=epoch,
            objective=value,
            excess_risk=None if self._f_star is None else value - self._f_star,
            grad_norm_sq=float(gradient @ gradient),
            sample_gradients=self._counter.sample_gradients,
            wall_time=time.perf_counter() - self._start,
        )

    def record(self, epoch: int, x: np.ndarray) -> None:
        entry = self._measure(epoch, x)
        self._trace.records.append(entry)
        logger.debug(
            "%s epoch %d: F=%.10g excess=%s", self._trace.algorithm.value, epoch, entry.objective, entry.excess_risk
        )

    def finish(self, point: np.ndarray, *, returned_epoch: int | None = None) -> None:
        """Close the trace. returned_epoch marks a point other than the last recorded one."""
        trace = self._trace
        trace.final_point = point.copy()
        trace.sample_gradients = self._counter.sample_gradients
        if returned_epoch is not None:
            trace.final_record = self._measure(returned_epoch, point)
        elif trace.records:
            trace.final_record = trace.records[-1]


def _streams(rng: RunStreams | int) -> RunStreams:
    return rng if isinstance(rng, RunStreams) else RunStreams.from_seed(int(rng))


def _initial_point(x0: np.ndarray | None, dim: int) -> np.ndarray:
    if x0 is None:
        return np.zeros(dim)
    point = np.array(x0, dtype=np.float64)
    if point.shape != (dim,):
        raise InvalidInputError(f"x0 must have length {dim}, got shape {point.shape}")
    return point


def _start_trace(algorithm: Algorithm, streams: RunStreams, noise: NoisePlan) -> RunTrace:
    return RunTrace(algorithm, streams.seed, noise.mode, noise.sigma, noise.fallback)


def _inner_draws(
    streams: RunStreams, n: int, p: int, sigma: float, steps: int
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (sample index, noise vector) for each inner step, drawn in blocks."""
    remaining = steps
    while remaining > 0:
        block = min(remaining, _DRAW_BLOCK)
        indices = streams.indices.integers(n, size=block)
        if sigma > 0:
            noise = streams.noise.normal(0.0, sigma, size=(block, p))
        else:
            noise = np.zeros((block, p))
        for k in range(block):
            yield int(indices[k]), noise[k]
        remaining -= block


# =============================================================================
# VARIANCE-REDUCED METHODS
# =============================================================================


def svrg_direction(
    obj: ErmObjective,
    x: np.ndarray,
    snapshot: np.ndarray,
    snapshot_gradient: np.ndarray,
    i: int,
    noise: np.ndarray,
    counter: OracleCounter | None = None,
) -> np.ndarray:
    """grad f(x, z_i) - grad f(snapshot, z_i) + grad F(snapshot) + noise.

    Unbiased for grad F(x) over a uniform i and centered noise. Costs two
    sample-gradient evaluations.
    """
    return (
        obj.sample_gradient(x, i, counter)
        - obj.sample_gradient(snapshot, i, counter)
        + snapshot_gradient
        + noise
    )


def _svrg_epoch(
    obj: ErmObjective,
    start: np.ndarray,
    snapshot: np.ndarray,
    steps: int,
    eta: float,
    sigma: float,
    streams: RunStreams,
    counter: OracleCounter,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one epoch of prox-SVRG steps; returns (last iterate, average iterate)."""
    reg = obj.regularizer
    snapshot_gradient = obj.full_gradient(snapshot, counter)
    x = start.copy()
    average = np.zeros_like(start)
    for t, (i, u) in enumerate(_inner_draws(streams, obj.n, obj.dim, sigma, steps), start=1):
        v = svrg_direction(obj, x, snapshot, snapshot_gradient, i, u, counter)
        x = reg.prox(eta, x - eta * v)
        average += (x - average) / t
    return x, average


def dp_svrg(
    obj: ErmObjective,
    cfg: SvrgConfig,
    rng: RunStreams | int,
    *,
    f_star: float | None = None,
    counter: OracleCounter | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """DP-SVRG: proximal SVRG with Gaussian noise on every inner direction.

    Each epoch restarts the inner loop from the snapshot and returns the
    average of its m inner iterates as the next snapshot. One epoch costs
    n + 2m sample gradients.

    Example:
        plan = calibrate(Algorithm.DP_SVRG, G=1.0, n=obj.n, budget=budget, mode="moments", T=10, m=500)
        x, trace = dp_svrg(obj, SvrgConfig(T=10, m=500, eta=1 / (48 * L), noise=plan), rng=0)
    """
    streams = _streams(rng)
    counter = counter if counter is not None else OracleCounter()
    snapshot = _initial_point(cfg.x0, obj.dim)
    trace = _start_trace(Algorithm.DP_SVRG, streams, cfg.noise)
    recorder = _Recorder(obj, trace, counter, f_star)
    recorder.record(0, snapshot)
    for s in range(1, cfg.T + 1):
        _, snapshot = _svrg_epoch(obj, snapshot, snapshot, cfg.m, cfg.eta, cfg.noise.sigma, streams, counter)
        recorder.record(s, snapshot)
    recorder.finish(snapshot)
    return snapshot, trace


def dp_svrg_pp(
    obj: ErmObjective,
    cfg: SvrgPpConfig,
    rng: RunStreams | int,
    *,
    f_star: float | None = None,
    counter: OracleCounter | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """DP-SVRG++: epoch s runs 2^s m noisy prox steps.

    The epoch output is the in-epoch average, but the next epoch starts
    from the last inner iterate. Epoch s costs n + 2^(s+1) m sample gradients.
    """
    streams = _streams(rng)
    counter = counter if counter is not None else OracleCounter()
    snapshot = _initial_point(cfg.x0, obj.dim)
    x = snapshot.copy()
    trace = _start_trace(Algorithm.DP_SVRG_PP, streams, cfg.noise)
    recorder = _Recorder(obj, trace, counter, f_star)
    recorder.record(0, snapshot)
    for s in range(1, cfg.T + 1):
        x, snapshot = _svrg_epoch(
            obj, x, snapshot, cfg.epoch_length(s), cfg.eta, cfg.noise.sigma, streams, counter
        )
        recorder.record(s, snapshot)
    recorder.finish(snapshot)
    return snapshot, trace


def check_svrg_condition(eta: float, L: float, mu: float, m: int) -> tuple[float, bool]:
    """Evaluate the linear-convergence condition of DP-SVRG.

    value = 1/(eta (1 - 8 eta L) mu m) + 8 L eta (m + 1) / (m (1 - 8 L eta));
    ok when value < 1/2 and eta <= 1/(12 L).
    """
    _check_step("eta", eta)
    _check_step("L", L)
    _check_step("mu", mu)
    _check_count("m", m)
    if eta * L >= 1.0 / 8.0:
        raise InvalidInputError(f"eta = {eta:g} >= 1/(8L) = {1.0 / (8.0 * L):g}; the condition is undefined")
    shrink = 1.0 - 8.0 * eta * L
    value = 1.0 / (eta * shrink * mu * m) + 8.0 * L * eta * (m + 1) / (m * shrink)
    ok = value < 0.5 and eta * L * 12.0 <= 1.0 + 1e-12
    return value, ok


class SvrgSchedule(NamedTuple):
    eta: float
    m: int
    T: int


# eta = 1/(c L); the condition needs c > 24
_ETA_LADDER = (28.0, 32.0, 40.0, 48.0, 56.0, 64.0, 96.0, 128.0, 192.0, 256.0)
_MAX_MULTIPLE = 1_000_000


def _smallest_feasible_m(c: float, kappa: float, base: int) -> int | None:
    # Multiplying the condition through by m (1 - 8/c) makes it linear in m.
    a = 8.0 / c
    slope = 0.5 * (1.0 - a) - a
    if slope <= 0:
        return None
    bound = (c * kappa + a) / slope
    multiple = max(1, math.floor(bound / base))
    while multiple <= _MAX_MULTIPLE:
        m = multiple * base
        if m > bound:
            return m
        multiple += 1
    return None


def recommend_svrg_schedule(
    L: float, mu: float, n: int, p: int, G: float, budget: PrivacyBudget
) -> SvrgSchedule:
    """Heuristic DP-SVRG schedule with every hidden constant set to 1.

    Searches eta = 1/(c L) over a fixed ladder and m over multiples of
    ceil(L/mu) for the smallest m passing check_svrg_condition; then
    T = ceil(log2(n^2 eps^2 mu / (p G^2 ln(1/delta)))), at least 1.
    """
    for name, value in (("L", L), ("mu", mu), ("G", G)):
        _check_step(name, value)
    _check_count("n", n)
    _check_count("p", p)
    kappa = L / mu
    base = max(1, math.ceil(kappa))
    best: tuple[int, float] | None = None
    for c in _ETA_LADDER:
        m = _smallest_feasible_m(c, kappa, base)
        if m is None:
            continue
        eta = 1.0 / (c * L)
        # Guard the closed-form bound against rounding at the boundary.
        while not check_svrg_condition(eta, L, mu, m)[1]:
            m += base
        if best is None or m < best[0]:
            best = (m, eta)
    if best is None:
        raise InfeasibleScheduleError(f"no feasible (eta, m) for L={L:g}, mu={mu:g}")
    m, eta = best
    argument = n**2 * budget.epsilon**2 * mu / (p * G**2 * budget.log_inv_delta)
    T = max(1, math.ceil(math.log2(argument))) if argument > 1 else 1
    return SvrgSchedule(eta, m, T)


# =============================================================================
# DP-GD
# =============================================================================


def dp_gd(
    obj: Objective,
    cfg: GdConfig,
    rng: RunStreams | int,
    *,
    f_star: float | None = None,
    counter: OracleCounter | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """DP-GD: x_t = x_{t-1} - eta (grad F(x_{t-1}) + z_{t-1}).

    Returns the last iterate, or an iterate drawn uniformly from
    {x_0, ..., x_{T-1}} in uniform_iterate mode. The drawn index comes
    from the output stream before the run starts and is kept in
    trace.output_index.

    A squared_l2 regularizer is differentiable and data-independent, so its
    gradient is added to grad F and its constant lam to L in the step-size
    check. Non-smooth regularizers are rejected. trace.final_excess_risk and
    trace.final_grad_norm_sq are measured at the returned point.
    """
    reg = obj.regularizer
    if not reg.is_smooth:
        raise InvalidInputError(
            f"dp_gd needs a differentiable objective; use dp_svrg for the {reg.kind.value} regularizer"
        )
    L = obj.smoothness + reg.gradient_lipschitz
    if cfg.eta * L > 1.0 + 1e-12:
        raise InvalidInputError(f"eta = {cfg.eta:g} exceeds 1/L = {1.0 / L:g} (L includes the regularizer)")
    streams = _streams(rng)
    counter = counter if counter is not None else OracleCounter()
    x = _initial_point(cfg.x0, obj.dim)
    trace = _start_trace(Algorithm.DP_GD, streams, cfg.noise)
    recorder = _Recorder(obj, trace, counter, f_star)

    chosen = x.copy()
    if cfg.output_mode is OutputMode.UNIFORM_ITERATE:
        trace.output_index = int(streams.output.integers(cfg.T))

    recorder.record(0, x)
    for t in range(1, cfg.T + 1):
        gradient = obj.full_gradient(x, counter) + reg.gradient(x)
        z = sample_noise(obj.dim, cfg.noise.sigma, streams.noise)
        x = x - cfg.eta * (gradient + z)
        if t == trace.output_index:
            chosen = x.copy()
        if t % cfg.record_every == 0 or t == cfg.T:
            recorder.record(t, x)

    if cfg.output_mode is OutputMode.UNIFORM_ITERATE:
        recorder.finish(chosen, returned_epoch=trace.output_index)
        return chosen, trace
    recorder.finish(x)
    return x, trace


# =============================================================================
# POLYAK-LOJASIEWICZ TOOLS
# =============================================================================


# F - F* below this leaves the PL ratio undefined
_PL_GAP_FLOOR = 1e-14


@dataclass(frozen=True)
class PLReport:
    """Worst PL ratio ||grad F||^2 / (2 (F - F*)) over the evaluated points."""

    worst_ratio: float
    mu_pl: float
    holds: bool
    evaluated: int
    skipped: int
    worst_point: np.ndarray | None = None


def pl_check(
    obj: Objective, mu_pl: float, sample_points: Sequence[np.ndarray], f_star: float
) -> PLReport:
    """Test ||grad F(x)||^2 >= 2 mu_pl (F(x) - F*) at each sample point.

    Points within 1e-14 of F* are skipped.
    """
    _check_step("mu_pl", mu_pl)
    worst = math.inf
    worst_point = None
    skipped = 0
    for point in sample_points:
        x = np.asarray(point, dtype=np.float64)
        gap = obj.value(x) - f_star
        if gap < _PL_GAP_FLOOR:
            skipped += 1
            continue
        gradient = obj.full_gradient(x)
        ratio = float(gradient @ gradient) / (2.0 * gap)
        if ratio < worst:
            worst, worst_point = ratio, x
    evaluated = len(sample_points) - skipped
    return PLReport(worst, mu_pl, worst >= mu_pl, evaluated, skipped, worst_point)


def recommend_T_pl(L: float, mu: float, n: int, p: int, G: float, budget: PrivacyBudget) -> int:
    """DP-GD iterations under PL: ceil(ln(n^2 eps^2 / (p G^2 ln(1/delta)))), at least 1.

    L and mu enter only through hidden constants, which are set to 1.
    """
    for name, value in (("L", L), ("mu", mu), ("G", G)):
        _check_step(name, value)
    _check_count("n", n)
    _check_count("p", p)
    argument = n**2 * budget.epsilon**2 / (p * G**2 * budget.log_inv_delta)
    return max(1, math.ceil(math.log(argument))) if argument > 1 else 1


def recommend_T_gradnorm(L: float, n: int, p: int, G: float, budget: PrivacyBudget) -> int:
    """DP-GD iterations for the gradient-norm bound: ceil(sqrt(L) n eps / (sqrt(p ln(1/delta)) G))."""
    _check_step("L", L)
    _check_step("G", G)
    _check_count("n", n)
    _check_count("p", p)
    T = math.sqrt(L) * n * budget.epsilon / (math.sqrt(p * budget.log_inv_delta) * G)
    return max(1, math.ceil(T))
