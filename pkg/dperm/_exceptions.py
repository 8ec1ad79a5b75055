"""Exception hierarchy for dperm."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from dperm._harness import ResultRecord


class DpermError(Exception):
    """Base exception for all dperm errors."""


class InvalidInputError(DpermError, ValueError):
    """An argument or configuration was rejected before any work was done.

    Raised for non-positive sizes or constants, dimension mismatches,
    out-of-range sample indices, invalid privacy budgets, starting points
    outside the constraint set, and regularizers an optimizer cannot handle.

    Recovery: Fix the offending argument; the message names it and the
    accepted range.
    """


class InfeasibleScheduleError(DpermError):
    """No (step size, epoch length) pair satisfies the SVRG convergence condition.

    Raised by recommend_svrg_schedule() when the search ladder is exhausted.

    Recovery: Pass an explicit schedule, or check that the strong convexity
    parameter is not vanishingly small compared to the smoothness constant.
    """


class ConvergenceError(DpermError):
    """An inner solver hit its iteration cap before reaching its tolerance.

    Recovery: Loosen the tolerance or raise the iteration cap in the
    optimizer config.
    """


class DataFormatError(DpermError, ValueError):
    """A dataset file could not be parsed.

    The offending file and 1-based line number are kept on the exception.

    Recovery: Fix or drop the reported line. LIBSVM lines must read
    ``<label> <index>:<value> ...`` with 1-based indices.
    """

    def __init__(self, message: str, *, path: Path | str | None = None, line_number: int = 0) -> None:
        self.path = Path(path) if path is not None else None
        self.line_number = line_number
        where = f"{self.path}:{line_number}: " if self.path is not None else ""
        super().__init__(f"{where}{message}")


class SpecError(DpermError):
    """An experiment spec is invalid.

    Raised when a spec file cannot be parsed, names an unknown key, or
    holds a value outside its range. The CLI exits with status 2.

    Recovery: Correct the spec file or the overriding command-line flag.
    """


class ExperimentError(DpermError):
    """A repetition failed while running an experiment.

    The results gathered before the failure are attached as ``partial``
    and marked incomplete. The CLI exits with status 3.

    Recovery: Inspect ``partial.failure`` for the failing budget and
    repetition, then rerun with a corrected spec.
    """

    def __init__(self, message: str, partial: ResultRecord) -> None:
        super().__init__(message)
        self.partial = partial
