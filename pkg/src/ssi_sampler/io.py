"""Run artifacts: samples CSV and JSON reports.

CSV files use a period decimal separator, a fixed column order, ``%.17g``
floats (exact round trip) and LF line endings regardless of platform.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["write_samples_csv", "read_samples_csv", "write_json", "write_table_csv", "to_jsonable"]


def write_samples_csv(path: str | Path, samples: np.ndarray) -> None:
    """One row per particle with header ``x0,...,x{d-1}``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    header = ",".join(f"x{j}" for j in range(samples.shape[1]))
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, samples, fmt="%.17g", delimiter=",", header=header, comments="", newline="\n")


def read_samples_csv(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path: str | Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_table_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Plain CSV table; floats are written with ``repr`` precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["nan" if isinstance(v, float) and math.isnan(v) else v for v in row])
