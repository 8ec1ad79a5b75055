"""Gaussian noise calibration for gradient-perturbation optimizers.

Two calibration modes are offered:

- moments: closed-form sigma from the moments-accountant theorems, scaled by
  an unstated constant c (default 1). Values are constant-dependent.
- advanced: advanced composition plus amplification by subsampling. Its
  derivation is fully explicit, with one configurable constant c2.

The advanced-composition bound is printed in the source with a single G;
the per-query sensitivity (at most 3G) forces G^2, which is what is used.

Noise and index sampling draw from separate Philox sub-streams of one
seed, so switching noise off never changes which samples are picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from dperm._exceptions import InvalidInputError
from dperm._logging import logger


class CalibrationMode(str, Enum):
    MOMENTS = "moments"
    ADVANCED = "advanced"
    OFF = "off"


class Algorithm(str, Enum):
    """The four gradient-perturbation optimizers."""

    DP_SVRG = "dp_svrg"
    DP_SVRG_PP = "dp_svrg_pp"
    DP_GD = "dp_gd"
    DP_ACCMD = "dp_accmd"


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential privacy target."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def log_inv_delta(self) -> float:
        return math.log(1.0 / self.delta)


@dataclass(frozen=True)
class CalibrationConstants:
    """The unstated constants of the privacy theorems.

    c scales the moments-mode variance, c1 bounds the epsilon range in which
    moments mode applies, c2 scales the advanced-mode variance.
    """

    c: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self) -> None:
        _require_positive(c=self.c, c1=self.c1, c2=self.c2)


@dataclass(frozen=True)
class NoisePlan:
    """Calibrated per-coordinate noise for one optimizer run.

    valid is False when the moments-mode epsilon range check failed; the
    diagnostic says by how much. fallback is True when calibrate() then
    switched to advanced mode.
    """

    sigma: float
    mode: CalibrationMode
    total_queries: int
    sampling_ratio_q: float
    constant: float = 1.0
    valid: bool = True
    diagnostic: str = ""
    fallback: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", CalibrationMode(self.mode))
        if self.sigma < 0:
            raise InvalidInputError(f"sigma must be >= 0, got {self.sigma}")
        if (self.sigma == 0) != (self.mode is CalibrationMode.OFF):
            raise InvalidInputError("sigma is zero exactly when calibration is off")
        if self.total_queries < 1:
            raise InvalidInputError(f"total_queries must be >= 1, got {self.total_queries}")

    @classmethod
    def off(cls, total_queries: int = 1, sampling_ratio_q: float = 1.0) -> NoisePlan:
        return cls(0.0, CalibrationMode.OFF, max(total_queries, 1), sampling_ratio_q, constant=0.0)

    @property
    def variance(self) -> float:
        return self.sigma**2

    @property
    def constant_dependent(self) -> bool:
        """True for moments-mode plans, whose scale hinges on the unstated c."""
        return self.mode is CalibrationMode.MOMENTS


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise InvalidInputError(f"{name} must be > 0, got {value}")


def _require_count(name: str, value: int, minimum: int = 1) -> None:
    if int(value) != value or value < minimum:
        raise InvalidInputError(f"{name} must be an integer >= {minimum}, got {value}")


# =============================================================================
# CLOSED-FORM CALIBRATIONS
# =============================================================================


def calibrate_svrg(
    G: float, T: int, m: int, n: int, budget: PrivacyBudget, c: float = 1.0, *, c1: float = 1.0
) -> NoisePlan:
    """DP-SVRG: sigma^2 = c G^2 T m ln(1/delta) / (n^2 eps^2).

    Valid only for eps <= c1 T m / n^2; T counts outer epochs, so T m is the
    number of noisy inner queries.
    """
    _require_positive(G=G, c=c, c1=c1)
    _require_count("T", T)
    _require_count("m", m)
    _require_count("n", n)
    eps = budget.epsilon
    variance = c * G**2 * T * m * budget.log_inv_delta / (n**2 * eps**2)
    limit = c1 * T * m / n**2
    valid = eps <= limit
    diagnostic = "" if valid else f"epsilon {eps:g} exceeds c1*T*m/n^2 = {limit:.6g}"
    return NoisePlan(
        math.sqrt(variance),
        CalibrationMode.MOMENTS,
        T * m,
        1.0 / n,
        constant=c,
        valid=valid,
        diagnostic=diagnostic,
    )


def svrg_pp_queries(T: int, m: int) -> int:
    """Inner steps of DP-SVRG++ over T epochs: sum_s 2^s m = (2^(T+1) - 2) m."""
    return ((1 << (T + 1)) - 2) * m


def calibrate_svrg_pp(
    G: float, T: int, m: int, n: int, budget: PrivacyBudget, c: float = 1.0, *, c1: float = 1.0
) -> NoisePlan:
    """DP-SVRG++: sigma^2 = c G^2 2^T m ln(2/delta) / (n^2 eps^2), valid for eps <= c1 2^T m / n^2."""
    _require_positive(G=G, c=c, c1=c1)
    _require_count("T", T, minimum=0)
    _require_count("m", m)
    _require_count("n", n)
    if T > 1000:
        raise InvalidInputError(f"T = {T} epochs would run 2^T inner steps")
    eps = budget.epsilon
    doubling = math.ldexp(1.0, T)
    variance = c * G**2 * doubling * m * math.log(2.0 / budget.delta) / (n**2 * eps**2)
    limit = c1 * doubling * m / n**2
    valid = eps <= limit
    diagnostic = "" if valid else f"epsilon {eps:g} exceeds c1*2^T*m/n^2 = {limit:.6g}"
    return NoisePlan(
        math.sqrt(variance),
        CalibrationMode.MOMENTS,
        max(svrg_pp_queries(T, m), 1),
        1.0 / n,
        constant=c,
        valid=valid,
        diagnostic=diagnostic,
    )


def calibrate_full_gradient(
    G: float, T: int, n: int, budget: PrivacyBudget, c: float = 1.0
) -> NoisePlan:
    """DP-GD and DP-AccMD: sigma^2 = c G^2 T ln(1/delta) / (n^2 eps^2), no epsilon restriction."""
    _require_positive(G=G, c=c)
    _require_count("T", T)
    _require_count("n", n)
    variance = c * G**2 * T * budget.log_inv_delta / (n**2 * budget.epsilon**2)
    return NoisePlan(math.sqrt(variance), CalibrationMode.MOMENTS, T, 1.0, constant=c)


def calibrate_advanced(
    G: float,
    T: int,
    n: int,
    budget: PrivacyBudget,
    c2: float = 1.0,
    *,
    sampling_ratio_q: float | None = None,
) -> NoisePlan:
    """Advanced composition: sigma^2 = c2 G^2 T ln(T/delta) ln(1/delta) / (n^2 eps^2).

    T is the total number of noisy queries. No epsilon restriction applies.
    """
    _require_positive(G=G, c2=c2)
    _require_count("T", T)
    _require_count("n", n)
    variance = (
        c2 * G**2 * T * math.log(T / budget.delta) * budget.log_inv_delta
        / (n**2 * budget.epsilon**2)
    )
    q = 1.0 / n if sampling_ratio_q is None else sampling_ratio_q
    return NoisePlan(math.sqrt(variance), CalibrationMode.ADVANCED, T, q, constant=c2)


def gaussian_mechanism_sigma(sensitivity: float, budget: PrivacyBudget) -> float:
    """Classical Gaussian mechanism: sqrt(2 ln(1.25/delta)) * sensitivity / epsilon.

    Tight only for epsilon <= 1; larger epsilon is accepted.
    """
    _require_positive(sensitivity=sensitivity)
    log_term = math.log(1.25 / budget.delta)
    if log_term <= 0:
        raise InvalidInputError(f"delta {budget.delta} leaves no room for the Gaussian mechanism")
    return math.sqrt(2.0 * log_term) * sensitivity / budget.epsilon


def svrg_query_sensitivity(G: float, n: int) -> float:
    """l2-sensitivity of one full-data variance-reduced query: 2G + G/n (at most 3G)."""
    _require_positive(G=G)
    _require_count("n", n)
    return 2.0 * G + G / n


def amplified_epsilon(epsilon_prime: float, gamma: float) -> float:
    """Privacy of an epsilon'-DP algorithm run on a uniform gamma-fraction: 2 gamma epsilon'."""
    _require_positive(epsilon_prime=epsilon_prime, gamma=gamma)
    if gamma > 1:
        raise InvalidInputError(f"sampling fraction gamma must be <= 1, got {gamma}")
    return 2.0 * gamma * epsilon_prime


# =============================================================================
# FRONT-END
# =============================================================================


def total_queries(algorithm: Algorithm | str, T: int, m: int = 1) -> int:
    """Number of noisy gradient queries an algorithm makes."""
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.DP_SVRG:
        return T * m
    if algorithm is Algorithm.DP_SVRG_PP:
        return svrg_pp_queries(T, m)
    return T


def calibrate(
    algorithm: Algorithm | str,
    *,
    G: float,
    n: int,
    budget: PrivacyBudget,
    mode: CalibrationMode | str,
    T: int,
    m: int = 1,
    constants: CalibrationConstants | None = None,
) -> NoisePlan:
    """Pick the calibration for an algorithm and mode.

    In moments mode, a failed epsilon range check for DP-SVRG or DP-SVRG++
    switches to advanced mode over the same number of queries; the returned
    plan carries fallback=True and the original diagnostic.
    """
    algorithm = Algorithm(algorithm)
    mode = CalibrationMode(mode)
    constants = constants or CalibrationConstants()
    per_sample = algorithm in (Algorithm.DP_SVRG, Algorithm.DP_SVRG_PP)
    q = 1.0 / n if per_sample else 1.0
    queries = total_queries(algorithm, T, m)

    if mode is CalibrationMode.OFF:
        return NoisePlan.off(queries, q)
    if mode is CalibrationMode.ADVANCED:
        return calibrate_advanced(G, max(queries, 1), n, budget, constants.c2, sampling_ratio_q=q)

    if algorithm is Algorithm.DP_SVRG:
        plan = calibrate_svrg(G, T, m, n, budget, constants.c, c1=constants.c1)
    elif algorithm is Algorithm.DP_SVRG_PP:
        plan = calibrate_svrg_pp(G, T, m, n, budget, constants.c, c1=constants.c1)
    else:
        return calibrate_full_gradient(G, T, n, budget, constants.c)

    if plan.valid:
        return plan
    logger.warning("%s: %s; switching to advanced composition", algorithm.value, plan.diagnostic)
    advanced = calibrate_advanced(G, plan.total_queries, n, budget, constants.c2, sampling_ratio_q=q)
    return NoisePlan(
        advanced.sigma,
        CalibrationMode.ADVANCED,
        advanced.total_queries,
        q,
        constant=constants.c2,
        valid=False,
        diagnostic=plan.diagnostic,
        fallback=True,
    )


# =============================================================================
# NOISE
# =============================================================================


@dataclass(frozen=True, eq=False)
class RunStreams:
    """Independent Philox generators for one run, derived from a 64-bit seed.

    Example:
        streams = RunStreams.from_seed(7)
        i = streams.indices.integers(n)
        u = sample_noise(p, sigma, streams.noise)
    """

    seed: int
    indices: np.random.Generator
    noise: np.random.Generator
    output: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> RunStreams:
        if not 0 <= seed < 2**64:
            raise InvalidInputError(f"seed must fit in 64 unsigned bits, got {seed}")
        index_seq, noise_seq, output_seq = np.random.SeedSequence(seed).spawn(3)
        return cls(
            seed,
            np.random.Generator(np.random.Philox(index_seq)),
            np.random.Generator(np.random.Philox(noise_seq)),
            np.random.Generator(np.random.Philox(output_seq)),
        )


def sample_noise(dim: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """dim independent N(0, sigma^2) draws; sigma = 0 returns zeros without touching rng."""
    _require_count("dim", dim)
    if sigma < 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(dim)
    return rng.normal(0.0, sigma, size=dim)
