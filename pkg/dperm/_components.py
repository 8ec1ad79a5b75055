"""Rich renderables for the dperm command line."""

from __future__ import annotations

from collections.abc import Sequence

from rich import box
from rich.console import Group, RenderableType
from rich.table import Table
from rich.text import Text

from dperm._harness import AggregateRow
from dperm._privacy import NoisePlan
from dperm.styles import (
    COLOR_HEADER,
    COLOR_MUTED,
    COLOR_WARNING,
    NUMBER_FORMAT,
    STATUS_STYLES,
    TABLE_BOX,
)


def _number(value: float | None) -> str:
    return "n/a" if value is None else NUMBER_FORMAT.format(value)


class Status:
    """A status badge with icon and message.

    Example:
        console.print(Status("success", "wrote results.json"))
    """

    def __init__(self, status: str, message: str) -> None:
        if status not in STATUS_STYLES:
            raise ValueError(f"Unknown status: {status}. Valid: {list(STATUS_STYLES.keys())}")
        self.status = status
        self.message = message

    def __rich__(self) -> Text:
        color, icon = STATUS_STYLES[self.status]
        return Text.assemble((f"{icon} ", color), self.message)


class NoisePlanTable:
    """A calibrated noise plan, with extra rows for derived quantities.

    Example:
        console.print(NoisePlanTable(plan, extras=[("query sensitivity", 3.0)]))
    """

    def __init__(
        self,
        plan: NoisePlan,
        *,
        title: str = "Noise plan",
        extras: Sequence[tuple[str, float]] = (),
    ) -> None:
        self.plan = plan
        self.title = title
        self.extras = list(extras)

    def __rich__(self) -> RenderableType:
        plan = self.plan
        table = Table(title=self.title, box=getattr(box, TABLE_BOX), header_style=COLOR_HEADER)
        table.add_column("quantity")
        table.add_column("value", justify="right")
        table.add_row("mode", plan.mode.value)
        table.add_row("sigma", _number(plan.sigma))
        table.add_row("sigma^2", _number(plan.variance))
        table.add_row("noisy queries", str(plan.total_queries))
        table.add_row("sampling ratio q", _number(plan.sampling_ratio_q))
        for label, value in self.extras:
            table.add_row(label, _number(value))

        notes: list[RenderableType] = []
        if plan.constant_dependent:
            notes.append(Text(f"scaled by the unstated constant c = {plan.constant:g}", style=COLOR_MUTED))
        if plan.fallback:
            notes.append(Text(f"fell back to advanced composition: {plan.diagnostic}", style=COLOR_WARNING))
        elif not plan.valid:
            notes.append(Text(plan.diagnostic, style=COLOR_WARNING))
        return Group(table, *notes) if notes else table


class AggregateTable:
    """Per-budget medians and quartiles of an experiment.

    Example:
        console.print(AggregateTable(record.aggregates, title="dp_svrg"))
    """

    def __init__(self, rows: Sequence[AggregateRow], *, title: str | None = None) -> None:
        self.rows = list(rows)
        self.title = title

    def __rich__(self) -> Table:
        table = Table(title=self.title, box=getattr(box, TABLE_BOX), header_style=COLOR_HEADER)
        for column in ("epsilon", "delta", "reps", "excess risk (q1 / median / q3)", "||grad F||^2 median", "wall s"):
            table.add_column(column, justify="right")
        for row in self.rows:
            if row.excess_risk is None:
                risk = "n/a"
            else:
                risk = " / ".join(_number(v) for v in row.excess_risk)
            table.add_row(
                f"{row.epsilon:g}",
                f"{row.delta:g}",
                str(row.repetitions),
                risk,
                _number(row.grad_norm_sq[1]),
                f"{row.wall_time[1]:.2f}",
            )
        return table
