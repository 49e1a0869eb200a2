import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from embcycle.types import SIGNAL_INDEX, SIGNALS, EventLog, SignalType, impression_counters

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_log(items, users=None, views=None, t=None, seed=0) -> EventLog:
    """Event log for a given item sequence with random (or given) view outcomes."""
    rng = np.random.default_rng(seed)
    items = np.asarray(items, dtype=np.int64)
    n = len(items)
    users = np.asarray(users if users is not None else rng.integers(0, 5, size=n), dtype=np.int64)
    if views is None:
        views = rng.integers(0, 2, size=n)
    outcomes = np.zeros((n, len(SIGNALS)), dtype=np.int8)
    outcomes[:, SIGNAL_INDEX[SignalType.VIEW]] = views
    outcomes[:, SIGNAL_INDEX[SignalType.SKIP]] = 1 - np.asarray(views)
    outcomes[:, SIGNAL_INDEX[SignalType.CLICK]] = rng.integers(0, 2, size=n) * np.asarray(views)
    t = np.asarray(t if t is not None else np.arange(n) * 0.01, dtype=np.float64)
    return EventLog(np.arange(n), users, items, impression_counters(items), outcomes, t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_store(rng, max_items=10, max_checkpoints=6, dim=4):
    """A small SnapshotStore on a random grid; items hold random-length grid prefixes."""
    from embcycle.types import CheckpointGrid, EmbeddingSnapshot, SnapshotStore

    n_cp = int(rng.integers(2, max_checkpoints + 1))
    views = np.concatenate([[0], np.cumsum(rng.integers(1, 50, size=n_cp - 1))])
    grid = CheckpointGrid(tuple(int(v) for v in views))
    store = SnapshotStore(grid)
    for item in rng.choice(1000, size=int(rng.integers(1, max_items + 1)), replace=False):
        for j in range(int(rng.integers(1, n_cp + 1))):
            store.add(EmbeddingSnapshot(int(item), grid.views[j], rng.normal(size=dim), j))
    return store


def random_event_log(rng, n_max=200, edges_top=60):
    n = int(rng.integers(1, n_max))
    items = rng.integers(0, 6, size=n)
    return make_log(items, users=rng.integers(0, 4, size=n), seed=int(rng.integers(1 << 30)))
