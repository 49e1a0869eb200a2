"""Flat-file formats: event/snapshot/schedule JSONL, JSON documents, CSV tables.

Every writer is deterministic (fixed key order, compact separators, repr
floats) so write -> parse -> write is byte-identical. Files are written to a
temporary sibling and renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .simulator import Schedule
from .types import SIGNALS, EmbeddingSnapshot, EventLog, SnapshotStore, CheckpointGrid

EVENT_KEYS = ("seq", "user", "item", "views_at_imp", "outcomes", "t")
SNAPSHOT_KEYS = ("item", "checkpoint", "vec", "seq")
SCHEDULE_KEYS = ("seq", "user", "item", "t")


class LogParseError(ValueError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = str(path)
        self.lineno = lineno


class SchemaVersionError(ValueError):
    pass


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def dump_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise LogParseError(path, exc.lineno, exc.msg) from None


def _iter_jsonl(path, keys):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or tuple(obj) != keys:
                raise LogParseError(path, lineno, f"expected keys {list(keys)}")
            yield lineno, obj


# -- event log ----------------------------------------------------------------


def format_event_log(log: EventLog) -> str:
    names = [s.value for s in SIGNALS]
    seq, user, item, views = (c.tolist() for c in (log.seq, log.user, log.item, log.views_at_imp))
    outcomes, t = log.outcomes.tolist(), log.t.tolist()
    lines = []
    for i in range(len(log)):
        rec = {
            "seq": seq[i],
            "user": user[i],
            "item": item[i],
            "views_at_imp": views[i],
            "outcomes": dict(zip(names, outcomes[i])),
            "t": float(t[i]),
        }
        lines.append(_dumps(rec))
    return "".join(line + "\n" for line in lines)


def write_event_log(path, log: EventLog) -> Path:
    return atomic_write_text(path, format_event_log(log))


def read_event_log(path) -> EventLog:
    names = tuple(s.value for s in SIGNALS)
    cols = {k: [] for k in EVENT_KEYS}
    for lineno, obj in _iter_jsonl(path, EVENT_KEYS):
        out = obj["outcomes"]
        if not isinstance(out, dict) or tuple(out) != names or any(v not in (0, 1) for v in out.values()):
            raise LogParseError(path, lineno, f"outcomes must map {list(names)} to 0/1")
        for key in ("seq", "user", "item", "views_at_imp"):
            if not isinstance(obj[key], int):
                raise LogParseError(path, lineno, f"{key} must be an integer")
        if not isinstance(obj["t"], (int, float)):
            raise LogParseError(path, lineno, "t must be a number")
        for key in ("seq", "user", "item", "views_at_imp"):
            cols[key].append(obj[key])
        cols["outcomes"].append([out[n] for n in names])
        cols["t"].append(float(obj["t"]))
    if not cols["seq"]:
        return EventLog.empty()
    return EventLog(cols["seq"], cols["user"], cols["item"], cols["views_at_imp"], cols["outcomes"], cols["t"])


# -- snapshot log -------------------------------------------------------------


def format_snapshots(store: SnapshotStore) -> str:
    lines = []
    for item in store.items():
        for snap in store.series(item):
            rec = {"item": item, "checkpoint": snap.checkpoint_view_count, "vec": snap.vector.tolist(), "seq": snap.wall_seq}
            lines.append(_dumps(rec))
    return "".join(line + "\n" for line in lines)


def write_snapshots(path, store: SnapshotStore) -> Path:
    return atomic_write_text(path, format_snapshots(store))


def read_snapshots(path, grid: CheckpointGrid) -> SnapshotStore:
    store = SnapshotStore(grid)
    for lineno, obj in _iter_jsonl(path, SNAPSHOT_KEYS):
        try:
            store.add(EmbeddingSnapshot(int(obj["item"]), int(obj["checkpoint"]), np.array(obj["vec"], dtype=np.float64), int(obj["seq"])))
        except (ValueError, TypeError) as exc:
            raise LogParseError(path, lineno, str(exc)) from None
    return store


# -- schedule -----------------------------------------------------------------


def write_schedule(path, schedule: Schedule) -> Path:
    seq, user, item, t = (c.tolist() for c in (schedule.seq, schedule.user, schedule.item, schedule.t))
    text = "".join(
        _dumps({"seq": seq[i], "user": user[i], "item": item[i], "t": float(t[i])}) + "\n" for i in range(len(seq))
    )
    return atomic_write_text(path, text)


def read_schedule(path) -> Schedule:
    cols = {k: [] for k in SCHEDULE_KEYS}
    for _, obj in _iter_jsonl(path, SCHEDULE_KEYS):
        for k in SCHEDULE_KEYS:
            cols[k].append(obj[k])
    return Schedule(
        np.array(cols["seq"], dtype=np.int64),
        np.array(cols["user"], dtype=np.int64),
        np.array(cols["item"], dtype=np.int64),
        np.array(cols["t"], dtype=np.float64),
    )


# -- tables -------------------------------------------------------------------


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, format_csv(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
