"""Experiment specs and TOML spec files.

A spec file is a flat TOML table whose keys mirror ExperimentSpec:

    algorithm = "dp_svrg"
    dataset = "synth:logistic:n=2000,p=10,seed=0"
    loss = "logistic"
    regularizer = "squared_l2"
    lambda = 0.01
    epsilon = [0.2, 0.5, 1.0]
    delta = 0.001
    reps = 30

Command-line flags override file keys before validation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dperm._data import DatasetSource, NormalizationKind, SourceKind
from dperm._exceptions import DpermError, SpecError
from dperm._geometry import BodyKind
from dperm._objective import LossKind, RegularizerKind
from dperm._optimizers import OutputMode
from dperm._privacy import (
    Algorithm,
    CalibrationConstants,
    CalibrationMode,
    PrivacyBudget,
    svrg_pp_queries,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHM_ALIASES = {
    "svrg": Algorithm.DP_SVRG,
    "svrgpp": Algorithm.DP_SVRG_PP,
    "gd": Algorithm.DP_GD,
    "accmd": Algorithm.DP_ACCMD,
}

SPEC_KEYS = frozenset(
    {
        "algorithm",
        "dataset",
        "loss",
        "regularizer",
        "lambda",
        "epsilon",
        "delta",
        "calibration",
        "T",
        "m",
        "eta",
        "reps",
        "seed",
        "out",
        "normalization",
        "positive_class",
        "max_rows",
        "c",
        "c1",
        "c2",
        "output_mode",
        "body",
        "radius",
        "workers",
    }
)


def parse_algorithm(value: str | Algorithm) -> Algorithm:
    if isinstance(value, Algorithm):
        return value
    key = value.strip().lower()
    if key in ALGORITHM_ALIASES:
        return ALGORITHM_ALIASES[key]
    try:
        return Algorithm(key)
    except ValueError:
        choices = ", ".join([*ALGORITHM_ALIASES, *(a.value for a in Algorithm)])
        raise SpecError(f"unknown algorithm {value!r}; choose one of {choices}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: an algorithm on a dataset across privacy budgets and repetitions.

    Unset T, m and eta are derived per budget from the objective's constants.
    Repetition r runs with seed base_seed + r.
    """

    algorithm: Algorithm
    dataset: DatasetSource
    budgets: tuple[PrivacyBudget, ...]
    loss: LossKind = LossKind.LOGISTIC
    regularizer: RegularizerKind = RegularizerKind.NONE
    lam: float = 0.0
    calibration: CalibrationMode = CalibrationMode.MOMENTS
    T: int | None = None
    m: int | None = None
    eta: float | None = None
    reps: int = 1
    base_seed: int = 0
    out: Path | None = None
    constants: CalibrationConstants = field(default_factory=CalibrationConstants)
    output_mode: OutputMode = OutputMode.LAST_ITERATE
    body: BodyKind | None = None
    radius: float = 1.0
    workers: int = 1

    def __post_init__(self) -> None:
        try:
            for name, kind in (
                ("algorithm", Algorithm),
                ("loss", LossKind),
                ("regularizer", RegularizerKind),
                ("calibration", CalibrationMode),
                ("output_mode", OutputMode),
            ):
                object.__setattr__(self, name, kind(getattr(self, name)))
            if self.body is not None:
                object.__setattr__(self, "body", BodyKind(self.body))
        except ValueError as e:
            raise SpecError(str(e)) from None
        if not self.budgets:
            raise SpecError("at least one (epsilon, delta) budget is required")
        if self.reps < 1:
            raise SpecError(f"reps must be >= 1, got {self.reps}")
        if self.workers < 1:
            raise SpecError(f"workers must be >= 1, got {self.workers}")
        if self.lam < 0:
            raise SpecError(f"lambda must be >= 0, got {self.lam}")
        if self.regularizer in (RegularizerKind.SQUARED_L2, RegularizerKind.L1) and self.lam <= 0:
            raise SpecError(f"the {self.regularizer.value} regularizer needs lambda > 0")
        for name in ("T", "m"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise SpecError(f"{name} must be >= 1, got {value}")
        if self.eta is not None and not self.eta > 0:
            raise SpecError(f"eta must be > 0, got {self.eta}")
        if not self.radius > 0:
            raise SpecError(f"radius must be > 0, got {self.radius}")
        if self.algorithm is Algorithm.DP_ACCMD:
            if self.body is None:
                raise SpecError("dp_accmd needs a constraint body (l2_ball or l1_ball)")
            if self.regularizer not in (RegularizerKind.NONE, RegularizerKind.INDICATOR):
                raise SpecError("dp_accmd runs over the body only; set regularizer to none")
        if self.regularizer is RegularizerKind.INDICATOR and self.body is None:
            raise SpecError("the indicator regularizer needs a body")
        non_smooth = (RegularizerKind.L1, RegularizerKind.INDICATOR)
        if self.algorithm is Algorithm.DP_GD and self.regularizer in non_smooth:
            raise SpecError(
                f"dp_gd cannot handle the {self.regularizer.value} regularizer; use dp_svrg"
            )

    def to_dict(self) -> dict[str, Any]:
        """Plain-data form; also the input of digest()."""
        source = self.dataset
        return {
            "algorithm": self.algorithm.value,
            "dataset": {
                "kind": source.kind.value,
                "path": str(source.path) if source.path is not None else None,
                "label_column": source.label_column,
                "n_features": source.n_features,
                "n": source.n,
                "p": source.p,
                "mu": source.mu,
                "L": source.L,
                "seed": source.seed,
                "normalization": source.normalization.value,
                "positive_class": source.positive_class,
                "binarize": source.binarize,
                "max_rows": source.max_rows,
            },
            "budgets": [[b.epsilon, b.delta] for b in self.budgets],
            "loss": self.loss.value,
            "regularizer": self.regularizer.value,
            "lambda": self.lam,
            "calibration": self.calibration.value,
            "T": self.T,
            "m": self.m,
            "eta": self.eta,
            "reps": self.reps,
            "seed": self.base_seed,
            "constants": dataclasses.asdict(self.constants),
            "output_mode": self.output_mode.value,
            "body": self.body.value if self.body is not None else None,
            "radius": self.radius,
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON form. Output path and worker count are excluded."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# =============================================================================
# SPEC FILES
# =============================================================================


def read_spec_file(path: Path | str) -> dict[str, Any]:
    """Read a flat TOML spec file into a mapping of spec keys."""
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError:
        raise SpecError(f"spec file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise SpecError(f"{path}: {e}") from None
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise SpecError(f"{path}: spec files are flat; found tables {', '.join(nested)}")
    return data


def _as_list(value: Any) -> list[Any]:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def build_spec(values: Mapping[str, Any]) -> ExperimentSpec:
    """Validate a flat mapping of spec keys into an ExperimentSpec."""
    unknown = set(values) - SPEC_KEYS
    if unknown:
        raise SpecError(f"unknown spec keys: {', '.join(sorted(unknown))}")
    for required in ("algorithm", "dataset", "epsilon", "delta"):
        if values.get(required) is None:
            raise SpecError(f"missing required key {required!r}")
    try:
        dataset = values["dataset"]
        source = dataset if isinstance(dataset, DatasetSource) else DatasetSource.parse(str(dataset))
        options: dict[str, Any] = {}
        if values.get("normalization") is not None:
            options["normalization"] = NormalizationKind(values["normalization"])
        if values.get("positive_class") is not None:
            options["positive_class"] = float(values["positive_class"])
        if values.get("max_rows") is not None:
            options["max_rows"] = int(values["max_rows"])
        if values.get("seed") is not None and source.kind in (SourceKind.LIBSVM_FILE, SourceKind.CSV_FILE):
            options["seed"] = int(values["seed"])
        if options:
            source = source.with_options(**options)

        deltas = _as_list(values["delta"])
        epsilons = _as_list(values["epsilon"])
        if len(deltas) == 1:
            deltas = deltas * len(epsilons)
        if len(deltas) != len(epsilons):
            raise SpecError(f"{len(epsilons)} epsilons but {len(deltas)} deltas")
        budgets = tuple(PrivacyBudget(float(e), float(d)) for e, d in zip(epsilons, deltas))

        constants = CalibrationConstants(
            c=float(values.get("c", 1.0)),
            c1=float(values.get("c1", 1.0)),
            c2=float(values.get("c2", 1.0)),
        )
        optional_int = {k: int(values[k]) for k in ("T", "m") if values.get(k) is not None}
        return ExperimentSpec(
            algorithm=parse_algorithm(values["algorithm"]),
            dataset=source,
            budgets=budgets,
            loss=LossKind(values.get("loss", "logistic")),
            regularizer=RegularizerKind(values.get("regularizer", "none")),
            lam=float(values.get("lambda", 0.0)),
            calibration=CalibrationMode(values.get("calibration", "moments")),
            eta=float(values["eta"]) if values.get("eta") is not None else None,
            reps=int(values.get("reps", 1)),
            base_seed=int(values.get("seed", 0)),
            out=Path(values["out"]) if values.get("out") else None,
            constants=constants,
            output_mode=OutputMode(values.get("output_mode", "last_iterate")),
            body=BodyKind(values["body"]) if values.get("body") else None,
            radius=float(values.get("radius", 1.0)),
            workers=int(values.get("workers", 1)),
            **optional_int,
        )
    except SpecError:
        raise
    except (DpermError, ValueError, TypeError) as e:
        raise SpecError(str(e)) from None


def load_spec(path: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentSpec:
    """Read a spec file (optional), apply non-None overrides, and validate.

    Example:
        spec = load_spec("ridge.toml", {"epsilon": [1.0], "reps": 5})
    """
    values: dict[str, Any] = read_spec_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_spec(values)


# =============================================================================
# PRESETS
# =============================================================================

PRESETS = ("svrg-vs-gd", "svrgpp-vs-gd")

_PRESET_EPSILONS = (0.2, 0.5, 1.0)
_PRESET_DELTA = 0.001


def equal_budget_gd_iterations(algorithm: Algorithm | str, n: int, T: int, m: int) -> int:
    """DP-GD iterations consuming the sample-gradient budget of a variance-reduced run.

    DP-SVRG uses T (n + 2m), DP-SVRG++ uses T n + 2 (2^(T+1) - 2) m; one DP-GD
    iteration costs n.
    """
    algorithm = parse_algorithm(algorithm)
    if algorithm is Algorithm.DP_SVRG:
        budget = T * (n + 2 * m)
    elif algorithm is Algorithm.DP_SVRG_PP:
        budget = T * n + 2 * svrg_pp_queries(T, m)
    else:
        raise SpecError(f"{algorithm.value} is not a variance-reduced method")
    return max(1, math.floor(budget / n))


def preset_spec(
    name: str,
    dataset: DatasetSource | None = None,
    *,
    n: int | None = None,
    reps: int = 30,
    base_seed: int = 0,
) -> tuple[ExperimentSpec, ExperimentSpec]:
    """A (variance-reduced, DP-GD) comparison pair.

    svrg-vs-gd: ridge logistic with lambda = 1e-2, T = 15, m = 5000 capped at
    n, and DP-GD iterations set by equal_budget_gd_iterations so both spend
    the same number of sample gradients. eta is left unset on both sides:
    DP-SVRG takes the step of recommend_svrg_schedule at run time but keeps
    this m, and DP-GD steps with 1/(L + lambda).

    svrgpp-vs-gd: plain logistic with fixed schedules, DP-SVRG++ at T = 15,
    m = 10, eta = 0.01 against DP-GD at T = 1000, eta = 0.1. These budgets
    are not matched; DP-GD spends about 12 times more sample gradients at
    n = 20000.

    Both sweep epsilon over 0.2, 0.5, 1 at delta = 1e-3.

    The default dataset is a 20000-row synthetic logistic instance with 54
    features. File datasets need n, or max_rows, to size the schedule.
    """
    source = dataset or DatasetSource.synthetic_logistic(20_000, 54, seed=base_seed)
    rows = n or (source.n if source.kind is SourceKind.SYNTHETIC_LOGISTIC else source.max_rows)
    if rows is None or rows < 2:
        raise SpecError("pass n (or a dataset with max_rows) so the schedule can be sized")
    budgets = tuple(PrivacyBudget(eps, _PRESET_DELTA) for eps in _PRESET_EPSILONS)
    common: dict[str, Any] = {"dataset": source, "budgets": budgets, "reps": reps, "base_seed": base_seed}

    if name == "svrg-vs-gd":
        T, m = 15, min(5000, rows)
        gd_T = equal_budget_gd_iterations(Algorithm.DP_SVRG, rows, T, m)
        ridge: dict[str, Any] = {"regularizer": RegularizerKind.SQUARED_L2, "lam": 1e-2}
        return (
            ExperimentSpec(Algorithm.DP_SVRG, T=T, m=m, **ridge, **common),
            ExperimentSpec(Algorithm.DP_GD, T=gd_T, **ridge, **common),
        )
    if name == "svrgpp-vs-gd":
        return (
            ExperimentSpec(Algorithm.DP_SVRG_PP, T=15, m=10, eta=0.01, **common),
            ExperimentSpec(Algorithm.DP_GD, T=1000, eta=0.1, **common),
        )
    raise SpecError(f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}")
