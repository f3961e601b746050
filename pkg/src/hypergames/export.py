"""CSV and JSON emitters. Every write goes to a temporary file that is then renamed."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from hypergames.game import Trajectory

TRAJECTORY_COLUMNS = ["t_index", "time_s", "robot", "x", "y", "z", "vx", "vy", "vz", "ux", "uy", "uz"]


@contextlib.contextmanager
def atomic_open(path, mode: str = "w"):
    """Yield a handle to a temporary sibling of ``path``; rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None, encoding=None if "b" in mode else "utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_csv(path, rows) -> None:
    with atomic_open(path) as fh:
        csv.writer(fh).writerows(rows)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload) -> None:
    with atomic_open(path) as fh:
        json.dump(payload, fh, indent=2, default=_jsonable)
        fh.write("\n")


def trajectory_rows(traj: Trajectory, dt: float) -> list:
    """Rows in :data:`TRAJECTORY_COLUMNS` order; planar games get zero out-of-plane columns.

    The last time step has no control, so its control columns are left empty.
    """
    T, N, nx = traj.states.shape
    if nx == 4:
        states = np.zeros((T, N, 6))
        states[..., [0, 1, 3, 4]] = traj.states
        controls = np.zeros((T - 1, N, 3))
        controls[..., :2] = traj.controls
    elif nx == 6:
        states, controls = traj.states, traj.controls
    else:
        raise ValueError(f"unsupported state dimension {nx}")
    rows = [list(TRAJECTORY_COLUMNS)]
    for t in range(T):
        for i in range(N):
            u = [repr(float(c)) for c in controls[t, i]] if t < T - 1 else ["", "", ""]
            rows.append([t + 1, repr(t * dt), i, *(repr(float(s)) for s in states[t, i]), *u])
    return rows


def write_trajectory_csv(path, traj: Trajectory, dt: float) -> None:
    write_csv(path, trajectory_rows(traj, dt))


def trajectory_csv_text(traj: Trajectory, dt: float) -> str:
    buf = io.StringIO()
    csv.writer(buf).writerows(trajectory_rows(traj, dt))
    return buf.getvalue()


def read_trajectory_csv(path, state_dim: int = 4) -> Trajectory:
    """Parse a trajectory CSV back into arrays.

    Args:
        path: file written by :func:`write_trajectory_csv` (or any file with
            the same header).
        state_dim: 4 to keep the planar components, 6 for the full state.

    Raises:
        ValueError: missing columns, ragged robot/time grid or non-numeric cells.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"trajectory CSV lacks columns {sorted(missing)}")
        records = list(reader)
    if not records:
        raise ValueError("trajectory CSV has no rows")
    try:
        ts = np.array([int(r["t_index"]) for r in records])
        robots = np.array([int(r["robot"]) for r in records])
        full = np.array([[float(r[c]) for c in ("x", "y", "z", "vx", "vy", "vz")] for r in records])
    except ValueError as exc:
        raise ValueError(f"non-numeric trajectory entry: {exc}") from exc
    T, N = ts.max(), robots.max() + 1
    if ts.min() != 1 or len(records) != T * N:
        raise ValueError(f"expected {T} x {N} rows with t_index starting at 1, got {len(records)}")
    states = np.full((T, N, 6), np.nan)
    controls = np.zeros((T - 1, N, 3))
    for k, r in enumerate(records):
        states[ts[k] - 1, robots[k]] = full[k]
        if ts[k] < T:
            controls[ts[k] - 1, robots[k]] = [float(r[c]) if r[c] != "" else 0.0 for c in ("ux", "uy", "uz")]
    if np.isnan(states).any():
        raise ValueError("trajectory CSV has duplicate or missing (t_index, robot) entries")
    if state_dim == 4:
        return Trajectory(states[..., [0, 1, 3, 4]], controls[..., :2])
    if state_dim == 6:
        return Trajectory(states, controls)
    raise ValueError(f"unsupported state dimension {state_dim}")
