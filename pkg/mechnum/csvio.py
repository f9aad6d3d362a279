from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def write_csv(frame: pd.DataFrame, path: str | Path, *, config_hash: str, seed: int) -> Path:
    """Write a frame after a '# config_hash=... seed=...' comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_header(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().lstrip("#").split()
    return dict(part.split("=", 1) for part in first)
