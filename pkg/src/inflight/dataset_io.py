"""Dataset files: one JSON-lines file per dataset.

Line 1 is a header ``{"object_id", "dt", "n_trajectories", "fields", ...}``;
every following line is ``{"id", "samples": [[t, px, py, pz, vx, vy, vz, ax, ay, az], ...]}``.
Velocity/acceleration entries may be ``null``, in which case they are
derived from positions by finite differences.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .flight_sim import Trajectory, states_from_positions

FIELDS = ["t", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"]
SPACING_RTOL = 1e-6


class DatasetFormatError(ValueError):
    """Malformed dataset file; the message names the line and field."""

    def __init__(self, path, line: int, field: str, message: str):
        self.path, self.line, self.field = str(path), line, field
        super().__init__(f"{path}:{line}: field {field!r}: {message}")


def save_dataset(path, trajs: Sequence[Trajectory], extra_header: Mapping | None = None) -> None:
    trajs = list(trajs)
    if not trajs:
        raise ValueError("cannot save an empty dataset")
    dt = trajs[0].dt
    if any(t.dt != dt for t in trajs):
        raise ValueError("all trajectories in a dataset must share dt")
    header = {"object_id": trajs[0].object_id, "dt": dt, "n_trajectories": len(trajs), "fields": FIELDS}
    header.update(extra_header or {})
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in trajs:
            rows = np.column_stack([t.times, t.states]).tolist()
            rec = {"id": t.id, "samples": rows}
            if t.object_id != header["object_id"]:
                rec["object_id"] = t.object_id
            fh.write(json.dumps(rec) + "\n")


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(path, 1, "header", f"invalid JSON ({e.msg})") from None
    if not isinstance(header, dict):
        raise DatasetFormatError(path, 1, "header", "expected a JSON object")
    for key in ("object_id", "dt", "n_trajectories"):
        if key not in header:
            raise DatasetFormatError(path, 1, key, "missing from header")
    return header


def _check_times(path, lineno: int, t: np.ndarray, dt: float) -> float:
    if len(t) > 1:
        steps = np.diff(t)
        if (steps <= 0).any():
            bad = int(np.argmax(steps <= 0)) + 1
            raise DatasetFormatError(path, lineno, "t", f"timestamps not strictly increasing at sample {bad}")
        if np.abs(steps - dt).max() > SPACING_RTOL * dt + 1e-9:
            raise DatasetFormatError(path, lineno, "t", f"sample spacing differs from dt={dt}")
    return float(t[0])


def _build(path, lineno: int, rows, dt: float, object_id: str, traj_id: str) -> Trajectory:
    try:
        arr = np.array([[np.nan if v is None else float(v) for v in row] for row in rows], dtype=float)
    except (TypeError, ValueError):
        raise DatasetFormatError(path, lineno, "samples", "non-numeric sample entry") from None
    if arr.ndim != 2 or arr.shape[1] not in (4, 10):
        raise DatasetFormatError(path, lineno, "samples", "each sample needs 4 (t,x,y,z) or 10 entries")
    if len(arr) < 3:
        raise DatasetFormatError(path, lineno, "samples", f"need >= 3 samples, got {len(arr)}")
    if not np.isfinite(arr[:, :4]).all():
        raise DatasetFormatError(path, lineno, "samples", "time and position must be finite numbers")
    t0 = _check_times(path, lineno, arr[:, 0], dt)
    derived = arr.shape[1] == 4 or not np.isfinite(arr[:, 4:]).all()
    if derived:
        try:
            return states_from_positions(arr[:, 1:4], dt, t0=t0, object_id=object_id, traj_id=traj_id)
        except ValueError as e:
            raise DatasetFormatError(path, lineno, "samples", str(e)) from None
    return Trajectory(arr[:, 1:], dt=dt, t0=t0, object_id=object_id, id=traj_id)


def load_dataset(path) -> list[Trajectory]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    header = read_header(path)
    dt = float(header["dt"])
    if not dt > 0:
        raise DatasetFormatError(path, 1, "dt", "must be positive")
    trajs = []
    with open(path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(path, lineno, "record", f"invalid JSON ({e.msg})") from None
            for key in ("id", "samples"):
                if key not in rec:
                    raise DatasetFormatError(path, lineno, key, "missing")
            trajs.append(_build(path, lineno, rec["samples"], dt,
                                rec.get("object_id", header["object_id"]), str(rec["id"])))
    if len(trajs) != int(header["n_trajectories"]):
        raise DatasetFormatError(path, 1, "n_trajectories",
                                 f"header says {header['n_trajectories']}, file holds {len(trajs)}")
    return trajs


def import_csv(path, dt: float | None = None, columns: Mapping[str, str] | None = None,
               object_id: str = "object", traj_id: str = "0", time_scale: float = 1.0) -> Trajectory:
    """Position-only log to a full trajectory.

    ``columns`` maps the logical names ``t, x, y, z`` to header names in the
    file (identity by default). ``time_scale`` converts the time column to
    seconds. ``dt`` defaults to the median sample spacing.
    """
    cols = {"t": "t", "x": "x", "y": "y", "z": "z"}
    cols.update(columns or {})
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetFormatError(path, 1, missing[0], "column missing from CSV header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            vals = []
            for key in ("t", "x", "y", "z"):
                try:
                    vals.append(float(row[cols[key]]))
                except (TypeError, ValueError):
                    raise DatasetFormatError(path, lineno, cols[key], f"not a number: {row[cols[key]]!r}") from None
            rows.append(vals)
    arr = np.array(rows, dtype=float)
    if len(arr) < 5:
        raise DatasetFormatError(path, len(rows) + 1, "t", "need at least 5 samples")
    arr[:, 0] *= time_scale
    if dt is None:
        dt = float(np.median(np.diff(arr[:, 0])))
    t0 = _check_times(path, 2, arr[:, 0], dt)
    return states_from_positions(arr[:, 1:], dt, t0=t0, object_id=object_id, traj_id=traj_id)


def datasets_equal(a: Iterable[Trajectory], b: Iterable[Trajectory]) -> bool:
    a, b = list(a), list(b)
    return len(a) == len(b) and all(x.equals(y) for x, y in zip(a, b))
