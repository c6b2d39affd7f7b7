"""
logger.py - rich-backed logging for the package.

All modules call get_logger(__name__); the first call installs a single
RichHandler on the package root logger. Level comes from CMH_LOG_LEVEL.
"""

import logging
import os

from rich.logging import RichHandler

_ROOT = "CommunityMembershipHiding"
_configured = False


def get_logger(name: str) -> logging.Logger:
    global _configured
    if not _configured:
        root = logging.getLogger(_ROOT)
        level = os.environ.get("CMH_LOG_LEVEL", "INFO").upper()
        root.setLevel(level if level in logging._nameToLevel else "INFO")
        handler = RichHandler(rich_tracebacks=True, show_path=False)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    return logging.getLogger(name)
