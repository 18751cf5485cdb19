"""
logging_utils.py
One place to route library logging through rich.
"""

from __future__ import annotations

import logging
import os
from typing import Optional, Union

from rich.console import Console
from rich.logging import RichHandler

from .core.errors import ConfigError

ENV_LEVEL = "IBQ_LAB_LOG_LEVEL"
DEFAULT_LEVEL = "INFO"
LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def resolve_level(level: Optional[Union[str, int]] = None) -> int:
    """Explicit level, else $IBQ_LAB_LOG_LEVEL, else INFO."""
    if isinstance(level, int):
        return level
    name = (level or os.environ.get(ENV_LEVEL) or DEFAULT_LEVEL).upper()
    if name not in LEVELS:
        raise ConfigError(f"unknown log level {name!r}; use one of {', '.join(LEVELS)}")
    return getattr(logging, name)


def configure_logging(level: Optional[Union[str, int]] = None, console: Optional[Console] = None) -> logging.Logger:
    """Install a single RichHandler on the root logger; calling again only changes the level."""
    root = logging.getLogger()
    root.setLevel(resolve_level(level))
    if not any(isinstance(handler, RichHandler) for handler in root.handlers):
        handler = RichHandler(console=console or Console(stderr=True), show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        root.addHandler(handler)
    return logging.getLogger("ibq_lab")
