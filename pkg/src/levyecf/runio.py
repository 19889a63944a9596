"""File emission and ingestion: CSV traces, JSON summaries, increment data.

CSV files are comma-separated with a header row and 17-significant-digit
decimal values (full float64 round trip). JSON summaries use sorted keys so
identical runs produce identical bytes; wall-clock information lives only in
the ignorable "meta" field.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from .recursive import Trajectory

FLOAT_FMT = "%.17g"


class DataFormatError(ValueError):
    """Malformed data file; the message names the offending line."""


def format_float(x: float) -> str:
    return FLOAT_FMT % x


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else format_float(float(c)) for c in row])


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonify)
        fh.write("\n")


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def timestamp_meta() -> dict:
    return {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}


def write_increments_csv(path, values: np.ndarray, column: str = "dy") -> None:
    write_csv(path, [column], ([v] for v in values))


def read_increments_csv(path) -> np.ndarray:
    """Read a one-column increment file, reporting parse failures by line number."""
    path = Path(path)
    values = []
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: line 1: empty file, expected a header row")
        if len(header) != 1:
            raise DataFormatError(
                f"{path}: line 1: expected a single-column header, got {len(header)} columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 1:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 1 column, got {len(row)}")
            try:
                value = float(row[0])
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: not a number: {row[0]!r}") from None
            if not np.isfinite(value):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            values.append(value)
    return np.asarray(values, dtype=float)


def trajectory_to_csv(trajectory: Trajectory, path) -> None:
    """One row per processed datum: step, estimate components, reset flag."""
    header = ["n"] + trajectory.column_names() + ["reset"]
    mats = []
    for arr in trajectory.columns.values():
        mats.append(arr.reshape(len(trajectory), -1))
    body = np.hstack(mats) if mats else np.zeros((len(trajectory), 0))

    def rows():
        for i in range(len(trajectory)):
            yield ([float(trajectory.steps[i])]
                   + [float(v) for v in body[i]]
                   + [float(trajectory.resets[i])])

    write_csv(path, header, rows())


def trajectory_summary(trajectory: Trajectory, extra: dict | None = None) -> dict:
    final = {}
    for key, value in trajectory.final.items():
        if isinstance(value, np.ndarray):
            if np.iscomplexobj(value):
                final[key + "_re"] = value.real
                final[key + "_im"] = value.imag
            else:
                final[key] = value
        else:
            final[key] = value
    out = {
        "final": final,
        "reset_count": trajectory.reset_count,
        "ridge_events": trajectory.ridge_events,
        "n_steps": int(len(trajectory)),
    }
    if extra:
        out.update(extra)
    return out
