"""Rich-backed logging for the simulator packages."""

import logging

from rich.console import Console
from rich.logging import RichHandler

from core import config

console = Console()

_ROOT = "core"


def configure_logging(level=None):
    """
    Attach a RichHandler to the package logger.

    Args:
        level: Logging level name or number (defaults to config LOG_LEVEL)

    Returns:
        The configured package logger
    """
    level = level or config.LOG_LEVEL
    root = logging.getLogger(_ROOT)
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False
    return root
