"""JSON-lines trajectory logs: one record per logged step.

Record layout::

    {"user_id": str, "arm": "A"|"B", "t": int >= 1, "state": [float, ...],
     "action": int, "reward": float, "logged_propensity": float}

Records of one user need not be contiguous; they are grouped by ``user_id``
(first-appearance order) and sorted by ``t``.
"""

from __future__ import annotations

import io
import json
from typing import BinaryIO, Iterable, TextIO

import numpy as np

from .core import Dataset
from .errors import IntegrityError, LogParseError

_FIELDS = ("user_id", "arm", "t", "state", "action", "reward", "logged_propensity")


def _parse_record(line_number: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogParseError(line_number, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise LogParseError(line_number, "record is not a JSON object")
    missing = [k for k in _FIELDS if k not in rec]
    if missing:
        raise LogParseError(line_number, f"missing field(s) {', '.join(missing)}")
    if not isinstance(rec["user_id"], str):
        raise LogParseError(line_number, "user_id must be a string")
    if rec["arm"] not in ("A", "B"):
        raise LogParseError(line_number, f"arm must be 'A' or 'B', got {rec['arm']!r}")
    for key in ("t", "action"):
        if not isinstance(rec[key], int) or isinstance(rec[key], bool):
            raise LogParseError(line_number, f"{key} must be an integer")
    if rec["t"] < 1:
        raise LogParseError(line_number, "t must be >= 1")
    if rec["action"] < 0:
        raise LogParseError(line_number, "action must be nonnegative")
    state = rec["state"]
    if not isinstance(state, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in state
    ):
        raise LogParseError(line_number, "state must be a list of numbers")
    for key in ("reward", "logged_propensity"):
        if not isinstance(rec[key], (int, float)) or isinstance(rec[key], bool):
            raise LogParseError(line_number, f"{key} must be a number")
    if not 0.0 <= rec["reward"] <= 1.0:
        raise LogParseError(line_number, "reward must lie in [0, 1]")
    if not 0.0 < rec["logged_propensity"] <= 1.0:
        raise LogParseError(line_number, "logged_propensity must lie in (0, 1]")
    return rec


def _lines(source: bytes | str | BinaryIO | TextIO | Iterable[str]) -> Iterable[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        return io.StringIO(source)
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    return source


def read_trajectory_log(source: bytes | str | BinaryIO | TextIO | Iterable[str]) -> Dataset:
    """Parse a JSON-lines log into a :class:`Dataset`.

    Blank lines are skipped. Raises :class:`LogParseError` for malformed
    lines and :class:`IntegrityError` for duplicated or missing step indices,
    conflicting arm labels or mixed state dimensions.
    """
    users: dict[str, dict] = {}
    dim = None
    for line_number, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        rec = _parse_record(line_number, line)
        if dim is None:
            dim = len(rec["state"])
        elif len(rec["state"]) != dim:
            raise IntegrityError(
                f"line {line_number}: state dimension {len(rec['state'])} differs from {dim}"
            )
        entry = users.setdefault(rec["user_id"], {"arm": rec["arm"], "steps": {}})
        if entry["arm"] != rec["arm"]:
            raise IntegrityError(f"line {line_number}: user {rec['user_id']!r} appears in both arms")
        if rec["t"] in entry["steps"]:
            raise IntegrityError(f"line {line_number}: duplicate step t={rec['t']} for user {rec['user_id']!r}")
        entry["steps"][rec["t"]] = rec

    if not users:
        return Dataset.empty()
    ids, arms, lengths, rows = [], [], [], []
    for uid, entry in users.items():
        ts = sorted(entry["steps"])
        if ts != list(range(1, len(ts) + 1)):
            raise IntegrityError(f"user {uid!r} has non-contiguous step indices {ts[:5]}...")
        ids.append(uid)
        arms.append(entry["arm"])
        lengths.append(len(ts))
        rows.extend(entry["steps"][t] for t in ts)
    return Dataset(
        user_ids=ids,
        arms=arms,
        offsets=np.concatenate([[0], np.cumsum(lengths)]),
        states=np.array([r["state"] for r in rows], dtype=float).reshape(len(rows), dim),
        actions=np.array([r["action"] for r in rows], dtype=np.int64),
        rewards=np.array([r["reward"] for r in rows], dtype=float),
        logged_propensities=np.array([r["logged_propensity"] for r in rows], dtype=float),
    )


def iter_log_records(data: Dataset) -> Iterable[dict]:
    t = data.step_t
    users = data.step_user
    for k in range(data.n_steps):
        i = int(users[k])
        yield {
            "user_id": data.user_ids[i],
            "arm": "B" if data.is_b[i] else "A",
            "t": int(t[k]),
            "state": [float(v) for v in data.states[k]],
            "action": int(data.actions[k]),
            "reward": float(data.rewards[k]),
            "logged_propensity": float(data.logged_propensities[k]),
        }


def write_trajectory_log(data: Dataset) -> bytes:
    """Serialise ``data`` canonically (fixed key order, compact separators)."""
    out = io.StringIO()
    for rec in iter_log_records(data):
        out.write(json.dumps(rec, separators=(",", ":")))
        out.write("\n")
    return out.getvalue().encode("utf-8")
