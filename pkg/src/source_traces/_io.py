"""Small file helpers: atomic writes and 17-significant-digit float formatting."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x: float) -> str:
    """Format a float so that it round-trips exactly."""
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> Path:
    # write to a sibling temp file and rename, so readers never see a partial file
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def matrix_to_csv(a: np.ndarray) -> str:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return "".join(",".join(fmt(x) for x in row) + "\n" for row in a)


def write_vector(path, x: np.ndarray) -> Path:
    return atomic_write_text(path, matrix_to_csv(np.asarray(x, dtype=float)[None, :]))


def write_matrix(path, a: np.ndarray) -> Path:
    return atomic_write_text(path, matrix_to_csv(a))


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([float(tok) for tok in line.split(",")])
    return np.array(rows, dtype=float)
