from __future__ import annotations

import logging
import os
from typing import Optional

from .consts import ENV_LOG_LEVEL

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(verbosity: int = 0, env_level: Optional[str] = None) -> int:
    """-v gives INFO, -vv DEBUG; MECHNUM_LOG_LEVEL wins when set."""
    env_level = env_level if env_level is not None else os.getenv(ENV_LOG_LEVEL)
    if env_level:
        level = logging.getLevelName(env_level.upper())
        if isinstance(level, int):
            return level
    if verbosity >= 2:
        return logging.DEBUG
    if verbosity == 1:
        return logging.INFO
    return logging.WARNING


def configure_logging(level: int = logging.WARNING) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    logging.getLogger("mechnum").setLevel(level)
