"""File formats: trajectory and kernel CSV, PLF1 field snapshots, NDJSON reports.

All writers go through :func:`atomic_write`, so a crashed or concurrent run
never leaves a half-written file behind.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

SNAPSHOT_MAGIC = b"PLF1"
_HEADER = struct.Struct("<4sIdd")

TRAJECTORY_COLUMNS = (
    ["t", "X1", "X2", "X3", "P1", "P2", "P3", "energy", "mom1", "mom2", "mom3", "re_delta_linf", "im_delta_linf"]
)


def atomic_write(path, payload) -> Path:
    """Write text or bytes to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode() if isinstance(payload, str) else bytes(payload)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# trajectories
# ----------------------------------------------------------------------------


def trajectory_rows(traj) -> np.ndarray:
    return np.column_stack([
        traj.t, traj.X, traj.P, traj.energy, traj.momentum, traj.re_delta_linf, traj.im_delta_linf,
    ])


def write_trajectory_csv(path, traj) -> Path:
    return atomic_write(path, _csv_text(TRAJECTORY_COLUMNS, trajectory_rows(traj)))


def read_csv(path) -> dict:
    """Columns of a numeric CSV written by this module, keyed by header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: body[:, i] for i, name in enumerate(header)}


# ----------------------------------------------------------------------------
# field snapshots
# ----------------------------------------------------------------------------


def snapshot_bytes(values: np.ndarray, L: float, t: float) -> bytes:
    values = np.asarray(values)
    N = values.shape[0]
    if values.shape != (N, N, N):
        raise ValueError(f"snapshot needs an N^3 array, got shape {values.shape}")
    # axis 0 is x1, so x-fastest order is column-major
    body = np.asarray(values.ravel(order="F"), dtype="<c16").tobytes()
    return _HEADER.pack(SNAPSHOT_MAGIC, N, float(L), float(t)) + body


def write_snapshot(path, values: np.ndarray, L: float, t: float) -> Path:
    return atomic_write(path, snapshot_bytes(values, L, t))


@dataclass
class Snapshot:
    N: int
    L: float
    t: float
    values: np.ndarray


def read_snapshot(path) -> Snapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, N, L, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 16 * N**3
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    return Snapshot(N, L, t, flat.reshape((N, N, N), order="F").astype(complex))


# ----------------------------------------------------------------------------
# kernel series
# ----------------------------------------------------------------------------


def write_kernel_csv(path, times, M: np.ndarray, K: Optional[np.ndarray] = None) -> Path:
    """One row per sample: t, M11..M33 and, when given, K11..K33 (row-major)."""
    names = [f"{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    header = ["t"] + [f"M{n}" for n in names]
    cols = [np.asarray(times)[:, None], np.asarray(M).reshape(len(times), 9)]
    if K is not None:
        header += [f"K{n}" for n in names]
        cols.append(np.asarray(K).reshape(len(times), 9))
    return atomic_write(path, _csv_text(header, np.hstack(cols)))


def write_series_csv(path, columns: dict) -> Path:
    names = list(columns)
    return atomic_write(path, _csv_text(names, np.column_stack([np.asarray(columns[n], float) for n in names])))


# ----------------------------------------------------------------------------
# NDJSON
# ----------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex) or isinstance(obj, np.complexfloating):
        return {"re": _jsonable(float(obj.real)), "im": _jsonable(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None  # strict JSON has no NaN or inf
    return obj


def ndjson_text(records: Iterable[dict]) -> str:
    return "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in records)


def write_ndjson(path, records: Iterable[dict]) -> Path:
    return atomic_write(path, ndjson_text(records))


def read_ndjson(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class Check:
    """One line of a report: a measured value against its threshold."""

    name: str
    value: object
    threshold: object
    passed: bool
    window: Optional[tuple] = None
    detail: Optional[dict] = None

    def record(self) -> dict:
        out = {"name": self.name, "value": self.value, "threshold": self.threshold,
               "pass": bool(self.passed), "window": None if self.window is None else list(self.window)}
        if self.detail:
            out["detail"] = self.detail
        return out


def at_most(name, value, bound, window=None, **detail) -> Check:
    return Check(name, float(value), f"<= {bound:g}", bool(value <= bound), window, detail or None)


def below(name, value, bound, window=None, **detail) -> Check:
    return Check(name, float(value), f"< {bound:g}", bool(value < bound), window, detail or None)


def above(name, value, bound, window=None, **detail) -> Check:
    return Check(name, float(value), f"> {bound:g}", bool(value > bound), window, detail or None)


def inside(name, value, lo, hi, window=None, **detail) -> Check:
    return Check(name, float(value), [lo, hi], bool(lo <= value <= hi), window, detail or None)


def flag(name, ok: bool, value=None, window=None, **detail) -> Check:
    return Check(name, ok if value is None else value, True, bool(ok), window, detail or None)
