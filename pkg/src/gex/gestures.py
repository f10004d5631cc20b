"""Gesture persistence: line-delimited records of timed glove targets.

One JSON object per line: {"t": seconds, "q_glove": [degrees, ...]}.
Timestamps must be strictly increasing; joint counts must match the
glove model. Appendable, and partial files read up to the damage point
are still usable for replay.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError


def read_gesture_file(path, n_joints: int = 12) -> list[tuple[float, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"gesture file does not exist: {path}")
    records: list[tuple[float, np.ndarray]] = []
    last_t = -np.inf
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                t = float(doc["t"])
                q = np.asarray(doc["q_glove"], dtype=float)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"{path}:{lineno}: malformed gesture record: {e}") from e
            if q.shape != (n_joints,):
                raise ConfigError(
                    f"{path}:{lineno}: expected {n_joints} joint values, got {q.shape}"
                )
            if not np.all(np.isfinite(q)) or not np.isfinite(t):
                raise ConfigError(f"{path}:{lineno}: non-finite value in record")
            if t <= last_t:
                raise ConfigError(f"{path}:{lineno}: timestamps must strictly increase")
            last_t = t
            records.append((t, q))
    if not records:
        raise ConfigError(f"gesture file is empty: {path}")
    return records


def targets_by_tick(records: list[tuple[float, np.ndarray]], dt: float,
                    hold_start: np.ndarray) -> list[np.ndarray]:
    """Expand timed records into one target per control tick (hold-last)."""
    t_last = records[-1][0]
    n_ticks = int(round(t_last / dt)) + 1
    out = []
    idx = 0
    current = np.asarray(hold_start, dtype=float)
    for k in range(n_ticks):
        now = k * dt
        while idx < len(records) and records[idx][0] <= now + 1e-9:
            current = records[idx][1]
            idx += 1
        out.append(current)
    return out
