import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_log, random_store
from embcycle.io import (
    LogParseError,
    atomic_write_text,
    format_csv,
    format_event_log,
    format_snapshots,
    read_csv,
    read_event_log,
    read_schedule,
    read_snapshots,
    write_csv,
    write_event_log,
    write_schedule,
    write_snapshots,
)
from embcycle.simulator import Schedule
from embcycle.types import EventLog


def test_event_log_line_format(tmp_path):
    log = make_log([5], users=[2], views=[1], t=[1.5])
    line = format_event_log(log).strip()
    obj = json.loads(line)
    assert list(obj) == ["seq", "user", "item", "views_at_imp", "outcomes", "t"]
    assert list(obj["outcomes"]) == ["view", "skip", "click", "like", "share"]
    assert obj["t"] == 1.5 and " " not in line


@given(st.lists(st.integers(0, 5), max_size=40), st.integers(0, 1000))
def test_event_log_round_trip_is_byte_identical(items, seed):
    import tempfile

    log = make_log(items, seed=seed, t=np.sort(np.random.default_rng(seed).uniform(0, 100, len(items))))
    with tempfile.TemporaryDirectory() as d:
        path = write_event_log(os.path.join(d, "e.jsonl"), log)
        back = read_event_log(path)
        assert back == log
        assert format_event_log(back) == path.read_text()


def test_snapshot_round_trip_is_byte_identical(tmp_path):
    store = random_store(np.random.default_rng(0))
    path = write_snapshots(tmp_path / "s.jsonl", store)
    back = read_snapshots(path, store.grid)
    assert back == store
    assert format_snapshots(back) == path.read_text()


def test_schedule_round_trip(tmp_path):
    sched = Schedule(np.arange(3), np.array([1, 2, 1]), np.array([0, 0, 4]), np.array([0.0, 0.25, 0.5]))
    path = write_schedule(tmp_path / "sched.jsonl", sched)
    back = read_schedule(path)
    assert all(np.array_equal(getattr(back, k), getattr(sched, k)) for k in ("seq", "user", "item", "t"))
    assert write_schedule(tmp_path / "again.jsonl", back).read_bytes() == path.read_bytes()


def test_truncated_line_reports_line_number(tmp_path):
    text = format_event_log(make_log([1, 2, 3]))
    lines = text.splitlines()
    lines[1] = lines[1][:25]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(LogParseError) as info:
        read_event_log(path)
    assert info.value.lineno == 2 and ":2:" in str(info.value)


@pytest.mark.parametrize("mutate", [
    lambda o: o.pop("t"),
    lambda o: o.update(extra=1),
    lambda o: o["outcomes"].update(view=2),
    lambda o: o.update(user="a"),
])
def test_malformed_records_rejected(tmp_path, mutate):
    obj = json.loads(format_event_log(make_log([1])).strip())
    mutate(obj)
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(LogParseError):
        read_event_log(path)


def test_empty_log_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert len(read_event_log(path)) == 0
    assert read_event_log(path) == EventLog.empty()


def test_csv_round_trip(tmp_path):
    rows = [["a", 1, 0.1, None], ["b", 2, 1e-17, 3.0]]
    path = write_csv(tmp_path / "t.csv", ["k", "n", "x", "y"], rows)
    parsed = read_csv(path)
    assert parsed[0] == {"k": "a", "n": "1", "x": "0.1", "y": ""}
    back = [[r["k"], int(r["n"]), float(r["x"]), float(r["y"]) if r["y"] else None] for r in parsed]
    assert format_csv(["k", "n", "x", "y"], back) == path.read_text()


def test_atomic_write_leaves_no_temporaries(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert os.listdir(tmp_path / "sub") == ["f.txt"]
