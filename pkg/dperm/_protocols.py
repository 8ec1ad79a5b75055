"""Protocol definitions for dperm.

These protocols enable:
1. Breaking the circular dependency between regularizers and convex bodies
2. Running the full-gradient optimizers on analytic test objectives
3. Testing with small hand-written implementations
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Protocol, runtime_checkable

import numpy as np

if TYPE_CHECKING:
    from dperm._objective import OracleCounter, Regularizer


@runtime_checkable
class ProjectableSet(Protocol):
    """A closed convex set with a Euclidean projection.

    Used by the indicator regularizer without depending on the concrete
    ConvexBody class.
    """

    @property
    def dim(self) -> int:
        """Ambient dimension p."""
        ...

    def contains(self, x: np.ndarray, *, tol: float = 1e-12) -> bool:
        """Check membership up to a tolerance."""
        ...

    def euclidean_project(self, y: np.ndarray) -> np.ndarray:
        """Return the closest point of the set to y in the l2 norm."""
        ...


@runtime_checkable
class Objective(Protocol):
    """A composite objective F^r = F + r with a smooth part F.

    ErmObjective is the main implementation; QuadraticObjective and
    DoubleWellObjective implement it for tests and acceptance suites.
    """

    @property
    def dim(self) -> int:
        """Dimension p of the parameter vector."""
        ...

    @property
    def smoothness(self) -> float:
        """Smoothness constant L of F in the l2 norm."""
        ...

    @property
    def regularizer(self) -> Regularizer:
        """The regularizer r."""
        ...

    def loss_value(self, x: np.ndarray) -> float:
        """Evaluate the smooth part F(x)."""
        ...

    def value(self, x: np.ndarray) -> float:
        """Evaluate F^r(x) = F(x) + r(x)."""
        ...

    def full_gradient(self, x: np.ndarray, counter: OracleCounter | None = None) -> np.ndarray:
        """Evaluate the gradient of F at x."""
        ...
