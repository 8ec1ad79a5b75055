"""Package logger for dperm.

Set DPERM_DEBUG=1 to enable debug logging without going through the CLI.
"""

from __future__ import annotations

import logging
import os

_DEBUG = os.environ.get("DPERM_DEBUG", "").lower() in ("1", "true", "yes")

logger = logging.getLogger("dperm")
if _DEBUG:
    logging.basicConfig(
        level=logging.DEBUG,
        format="[dperm] %(levelname)s: %(message)s",
    )
    logger.setLevel(logging.DEBUG)
else:
    logger.addHandler(logging.NullHandler())


def configure_cli_logging(*, verbose: bool = False) -> None:
    """Route the package logger through Rich for command-line runs."""
    from rich.logging import RichHandler

    for handler in list(logger.handlers):
        if isinstance(handler, (logging.NullHandler, RichHandler)):
            logger.removeHandler(handler)
    handler = RichHandler(show_path=False, markup=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose or _DEBUG else logging.INFO)
    logger.propagate = False
