"""Real-time and windowed-batch training drivers with checkpoint snapshotting.

Both drivers consume a columnar :class:`EventLog`, train one FFM on one
signal and record the *published* item embedding whenever an item's
impression counter first reaches a grid checkpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ffm import ITEM_FIELD, USER_FIELD, DivergenceError, FfmModel, Hyperparams
from .types import (
    CheckpointGrid,
    ConfigError,
    EmbeddingSnapshot,
    EventLog,
    SignalType,
    SnapshotStore,
    as_event_log,
    impression_counters,
)

log = logging.getLogger(__name__)

# ordering of actions attached to one event
_PRE_SNAP, _COUNT_FLUSH, _POST_SNAP, _TIME_FLUSH = 0, 1, 2, 3


@dataclass(frozen=True)
class BatchWindow:
    kind: str = "sim_hours"
    size: float = 6.0

    def __post_init__(self):
        if self.kind not in ("sim_hours", "event_count"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if not self.size > 0:
            raise ConfigError("window size must be > 0")
        if self.kind == "event_count" and int(self.size) != self.size:
            raise ConfigError("event_count window size must be an integer")

    def window_ids(self, t: np.ndarray) -> np.ndarray:
        """Window index of each event (by position for event_count windows)."""
        if self.kind == "sim_hours":
            return np.floor(np.asarray(t) / self.size).astype(np.int64)
        return np.arange(len(t), dtype=np.int64) // int(self.size)


class PublishedEmbeddings:
    """What the serving layer sees.

    ``live=True`` is a view on the model (real-time mode). Otherwise the
    parameters are frozen copies refreshed by :meth:`publish`; rows created
    after the last publication are untrained, so their live value is served.
    """

    def __init__(self, model: FfmModel, live: bool):
        self.model = model
        self.live = live
        self.version = 0
        self._latent = self._linear = self._glob = None
        if not live:
            self._freeze()

    def _freeze(self) -> None:
        n = self.model.n_rows
        self._latent = self.model.latent[:n].copy()
        self._linear = self.model.linear[:n].copy()
        self._glob = self.model.glob.copy()
        for arr in (self._latent, self._linear, self._glob):
            arr.setflags(write=False)

    def publish(self, n_updates: int = 1) -> None:
        if self.live:
            self.version += n_updates
        else:
            self._freeze()
            self.version += 1

    def item_vector(self, item_id) -> np.ndarray:
        r = self.model.row(ITEM_FIELD, item_id)
        if self.live or r >= len(self._latent):
            return self.model.latent[r, USER_FIELD].copy()
        return self._latent[r, USER_FIELD].copy()


def snapshot_crossings(counter_before: int, counter_after: int, grid: CheckpointGrid) -> list[int]:
    """Checkpoints ``V`` with ``counter_before < V <= counter_after``."""
    return [v for v in grid.views if counter_before < v <= counter_after]


def context_column(t: np.ndarray) -> np.ndarray:
    return (np.asarray(t).astype(np.int64) % 24) // 6


class _Prepared:
    def __init__(self, events: EventLog, model: FfmModel, grid: CheckpointGrid, signal):
        self.events = events
        counters = impression_counters(events.item)
        if not np.array_equal(counters, events.views_at_imp):
            bad = int(np.flatnonzero(counters != events.views_at_imp)[0])
            raise ValueError(f"event seq={int(events.seq[bad])}: views_at_imp disagrees with replay")
        self.rows = model.rows_for_log(events.user, events.item, context_column(events.t))
        self.ys = events.signal_column(signal).astype(np.float64)
        self.counters = counters
        self.grid_set = np.asarray(grid.views[1:], dtype=np.int64)

    def snapshot_points(self) -> list[tuple[int, int, int]]:
        """(event index, phase, checkpoint) for every snapshot."""
        pts = [(int(e), _PRE_SNAP, 0) for e in np.flatnonzero(self.counters == 0)]
        after = self.counters + 1
        hits = np.flatnonzero(np.isin(after, self.grid_set))
        pts += [(int(e), _POST_SNAP, int(after[e])) for e in hits]
        return pts


def _train_or_abort(model, prep, start, stop, hyper, epochs=1):
    bad = model.train_rows(prep.rows[start:stop], prep.ys[start:stop], hyper, epochs)
    if bad >= 0:
        seq = int(prep.events.seq[start + bad])
        raise DivergenceError(f"non-finite gradient at seq {seq}", seq)


def _snap(store, published, prep, e, checkpoint):
    item = int(prep.events.item[e])
    store.add(EmbeddingSnapshot(item, checkpoint, published.item_vector(item), int(prep.events.seq[e])))


def run_realtime(stream, model: FfmModel, grid: CheckpointGrid, hyper: Hyperparams,
                 signal=SignalType.VIEW) -> tuple[SnapshotStore, EventLog]:
    """Update after every event, publish immediately, snapshot on crossings."""
    events = as_event_log(stream)
    prep = _Prepared(events, model, grid, signal)
    published = PublishedEmbeddings(model, live=True)
    store = SnapshotStore(grid)
    pos = 0
    for e, phase, checkpoint in sorted(prep.snapshot_points()):
        stop = e if phase == _PRE_SNAP else e + 1
        if stop > pos:
            _train_or_abort(model, prep, pos, stop, hyper)
            published.publish(stop - pos)
            pos = stop
        _snap(store, published, prep, e, checkpoint)
    if pos < len(events):
        _train_or_abort(model, prep, pos, len(events), hyper)
        published.publish(len(events) - pos)
    return store, events


def run_batch(stream, model: FfmModel, window: BatchWindow, grid: CheckpointGrid, hyper: Hyperparams,
              signal=SignalType.VIEW) -> tuple[SnapshotStore, EventLog]:
    """Buffer events per window; train ``batch_epochs`` passes and publish when it closes.

    Snapshots read the published (possibly stale) embeddings. The last partial
    window is flushed at end of stream.
    """
    events = as_event_log(stream)
    prep = _Prepared(events, model, grid, signal)
    published = PublishedEmbeddings(model, live=False)
    store = SnapshotStore(grid)
    n = len(events)
    wid = window.window_ids(events.t) if n else np.zeros(0, dtype=np.int64)
    actions = prep.snapshot_points()
    if window.kind == "event_count":
        # a count window closes on the event that fills it, before that event's snapshots
        closes = np.flatnonzero((np.arange(n) + 1) % int(window.size) == 0)
        actions += [(int(e), _COUNT_FLUSH, -1) for e in closes]
    elif n:
        # a time window closes when the next event falls in a later window
        closes = np.flatnonzero(wid[1:] != wid[:-1])
        actions += [(int(e), _TIME_FLUSH, -1) for e in closes]
    start = 0
    n_windows = 0
    for e, phase, checkpoint in sorted(actions):
        if phase in (_COUNT_FLUSH, _TIME_FLUSH):
            _train_or_abort(model, prep, start, e + 1, hyper, hyper.batch_epochs)
            published.publish()
            start = e + 1
            n_windows += 1
        else:
            _snap(store, published, prep, e, checkpoint)
    if start < n:
        _train_or_abort(model, prep, start, n, hyper, hyper.batch_epochs)
        published.publish()
        n_windows += 1
    log.debug("batch run: %d events, %d windows", n, n_windows)
    return store, events
