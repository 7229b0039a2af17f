from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler


__all__ = ["configure_logging"]

_LEVELS = {0: logging.WARNING, 1: logging.INFO}
# warnings.warn output lands here once captureWarnings is on
_WARNINGS_LOGGER = "py.warnings"


def _install(logger: logging.Logger, handler: RichHandler) -> None:
    for existing in list(logger.handlers):
        if isinstance(existing, RichHandler):
            logger.removeHandler(existing)
    logger.addHandler(handler)
    logger.propagate = False


def configure_logging(verbosity: int = 0, *, console: Console | None = None) -> logging.Logger:
    """Route the package loggers and captured warnings through one rich handler on stderr."""
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))

    logger = logging.getLogger("nlslab")
    _install(logger, handler)
    logger.setLevel(_LEVELS.get(verbosity, logging.DEBUG))

    _install(logging.getLogger(_WARNINGS_LOGGER), handler)
    logging.captureWarnings(True)
    return logger
