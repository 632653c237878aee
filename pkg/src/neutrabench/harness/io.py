"""File formats for run artifacts.

Every real number is written as ``{:.16e}`` (17 significant digits), which
round-trips float64 exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

WEIGHT_COLUMN = "weight"


def fmt(x) -> str:
    return f"{float(x):.16e}"


def _cell(c) -> str:
    if isinstance(c, str):
        return c
    if c is None:
        return ""
    if isinstance(c, (int, np.integer)) and not isinstance(c, bool):
        return str(int(c))
    return fmt(c)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with numeric cells in round-trip scientific notation; strings pass through."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


def write_samples(path, names: Sequence[str], samples: np.ndarray, weights: Optional[np.ndarray] = None) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    header = list(names) + ([WEIGHT_COLUMN] if weights is not None else [])
    cols = samples if weights is None else np.column_stack([samples, weights])
    write_table(path, header, cols)


def read_samples(path) -> tuple[list[str], np.ndarray, Optional[np.ndarray]]:
    """``(parameter names, samples, weights or None)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64).reshape(-1, len(header))
    if header and header[-1] == WEIGHT_COLUMN:
        return header[:-1], data[:, :-1], data[:, -1]
    return header, data, None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
