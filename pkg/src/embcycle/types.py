"""Shared value types: signals, interaction events, checkpoint grids, snapshots."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

SCHEMA_VERSION = "embcycle-log-v1"


class ConfigError(ValueError):
    """Raised for invalid configuration or precondition violations."""


class SignalType(str, enum.Enum):
    VIEW = "view"
    SKIP = "skip"
    CLICK = "click"
    LIKE = "like"
    SHARE = "share"


# Column order used by every columnar outcome array and by the JSONL writer.
SIGNALS: tuple[SignalType, ...] = tuple(SignalType)
SIGNAL_INDEX = {s: i for i, s in enumerate(SIGNALS)}


def as_signal(value) -> SignalType:
    if isinstance(value, SignalType):
        return value
    try:
        return SignalType(str(value))
    except ValueError:
        raise ConfigError(f"unknown signal {value!r}") from None


@dataclass(frozen=True)
class InteractionEvent:
    seq_no: int
    user_id: int
    item_id: int
    item_view_count_at_impression: int
    outcomes: dict
    sim_time: float

    def outcome(self, signal) -> int:
        return int(self.outcomes[as_signal(signal)])


class EventLog:
    """Columnar, append-free store of interaction events.

    Iterating yields :class:`InteractionEvent` objects; the pipelines read the
    numpy columns directly.
    """

    __slots__ = ("seq", "user", "item", "views_at_imp", "outcomes", "t")

    def __init__(self, seq, user, item, views_at_imp, outcomes, t):
        self.seq = np.asarray(seq, dtype=np.int64)
        self.user = np.asarray(user, dtype=np.int64)
        self.item = np.asarray(item, dtype=np.int64)
        self.views_at_imp = np.asarray(views_at_imp, dtype=np.int64)
        self.outcomes = np.asarray(outcomes, dtype=np.int8).reshape(-1, len(SIGNALS))
        self.t = np.asarray(t, dtype=np.float64)
        n = len(self.seq)
        for name in ("user", "item", "views_at_imp", "outcomes", "t"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def empty(cls) -> EventLog:
        return cls([], [], [], [], np.zeros((0, len(SIGNALS))), [])

    @classmethod
    def from_events(cls, events: Iterable[InteractionEvent]) -> EventLog:
        rows = list(events)
        if not rows:
            return cls.empty()
        outcomes = np.array(
            [[ev.outcomes.get(s, 0) for s in SIGNALS] for ev in rows], dtype=np.int8
        )
        return cls(
            [ev.seq_no for ev in rows],
            [ev.user_id for ev in rows],
            [ev.item_id for ev in rows],
            [ev.item_view_count_at_impression for ev in rows],
            outcomes,
            [ev.sim_time for ev in rows],
        )

    def __len__(self) -> int:
        return len(self.seq)

    def __getitem__(self, i: int) -> InteractionEvent:
        return InteractionEvent(
            seq_no=int(self.seq[i]),
            user_id=int(self.user[i]),
            item_id=int(self.item[i]),
            item_view_count_at_impression=int(self.views_at_imp[i]),
            outcomes={s: int(self.outcomes[i, j]) for j, s in enumerate(SIGNALS)},
            sim_time=float(self.t[i]),
        )

    def __iter__(self) -> Iterator[InteractionEvent]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.__slots__)

    def signal_column(self, signal) -> np.ndarray:
        return self.outcomes[:, SIGNAL_INDEX[as_signal(signal)]]

    def validate(self) -> None:
        """Check seq monotonicity, view/skip complementarity and counter causality."""
        if len(self) == 0:
            return
        if np.any(np.diff(self.seq) <= 0):
            raise ValueError("seq_no must strictly increase")
        view = self.signal_column(SignalType.VIEW)
        skip = self.signal_column(SignalType.SKIP)
        if np.any(view + skip != 1):
            raise ValueError("skip must be the complement of view")
        if np.any(self.t < 0):
            raise ValueError("sim_time must be non-negative")
        expected = impression_counters(self.item)
        bad = np.flatnonzero(expected != self.views_at_imp)
        if len(bad):
            i = int(bad[0])
            raise ValueError(
                f"event seq={int(self.seq[i])}: views_at_imp={int(self.views_at_imp[i])}, "
                f"replay gives {int(expected[i])}"
            )


def as_event_log(stream) -> EventLog:
    if isinstance(stream, EventLog):
        return stream
    return EventLog.from_events(stream)


def impression_counters(items: np.ndarray) -> np.ndarray:
    """Number of earlier occurrences of each entry's item id (a per-item cumcount)."""
    items = np.asarray(items)
    n = len(items)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(items, kind="stable")
    sorted_items = items[order]
    starts = np.r_[True, sorted_items[1:] != sorted_items[:-1]]
    group_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    out = np.empty(n, dtype=np.int64)
    out[order] = np.arange(n) - group_start
    return out


@dataclass(frozen=True)
class CheckpointGrid:
    views: tuple[int, ...]

    def __post_init__(self):
        views = tuple(int(v) for v in self.views)
        if not views or views[0] != 0:
            raise ConfigError("checkpoint grid must start at 0")
        if any(b <= a for a, b in zip(views, views[1:])):
            raise ConfigError("checkpoint grid must be strictly increasing")
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    @property
    def final(self) -> int:
        return self.views[-1]


def make_grid(spec: dict) -> CheckpointGrid:
    """Build a checkpoint grid ``[0, start, ..., stop]``.

    ``spec`` has keys ``kind`` (``linear`` or ``geometric``), ``start``,
    ``stop`` and ``points``. Values are rounded to integers and deduplicated.
    """
    try:
        kind = spec["kind"]
        start, stop, points = int(spec["start"]), int(spec["stop"]), int(spec["points"])
    except KeyError as exc:
        raise ConfigError(f"grid spec missing {exc.args[0]!r}") from None
    if start < 1:
        raise ConfigError("grid start must be >= 1")
    if stop <= start:
        raise ConfigError("grid stop must exceed start")
    if points < 2:
        raise ConfigError("grid needs at least 2 points")
    if kind == "linear":
        raw = [start + (stop - start) * i / (points - 1) for i in range(points)]
    elif kind == "geometric":
        ratio = math.log(stop / start)
        raw = [start * math.exp(ratio * i / (points - 1)) for i in range(points)]
    else:
        raise ConfigError(f"unknown grid kind {kind!r}")
    raw[-1] = stop
    views = sorted({0, *(int(round(v)) for v in raw)})
    return CheckpointGrid(tuple(views))


@dataclass(frozen=True)
class EmbeddingSnapshot:
    item_id: int
    checkpoint_view_count: int
    vector: np.ndarray
    wall_seq: int

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ValueError("snapshot vector must be 1-d")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite snapshot for item {self.item_id}")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


@dataclass
class SnapshotStore:
    grid: CheckpointGrid
    per_item: dict[int, list[EmbeddingSnapshot]] = field(default_factory=dict)

    def add(self, snap: EmbeddingSnapshot) -> None:
        series = self.per_item.setdefault(snap.item_id, [])
        idx = len(series)
        if idx >= len(self.grid) or self.grid.views[idx] != snap.checkpoint_view_count:
            raise ValueError(
                f"item {snap.item_id}: snapshot at {snap.checkpoint_view_count} "
                f"breaks the grid prefix (expected {self.grid.views[idx] if idx < len(self.grid) else None})"
            )
        series.append(snap)

    def series(self, item_id: int) -> list[EmbeddingSnapshot]:
        return self.per_item.get(item_id, [])

    def items(self) -> list[int]:
        return sorted(self.per_item)

    def at(self, item_id: int, checkpoint: int) -> EmbeddingSnapshot | None:
        series = self.per_item.get(item_id, [])
        try:
            idx = self.grid.views.index(checkpoint)
        except ValueError:
            return None
        return series[idx] if idx < len(series) else None

    def retained(self, min_views: int | None = None) -> SnapshotStore:
        """Items whose series reaches ``min_views`` (default: the final checkpoint)."""
        threshold = self.grid.final if min_views is None else min_views
        keep = {
            item: series
            for item, series in self.per_item.items()
            if series and series[-1].checkpoint_view_count >= threshold
        }
        return SnapshotStore(self.grid, keep)

    def __len__(self) -> int:
        return sum(len(s) for s in self.per_item.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SnapshotStore):
            return NotImplemented
        if self.grid != other.grid or set(self.per_item) != set(other.per_item):
            return False
        for item, series in self.per_item.items():
            theirs = other.per_item[item]
            if len(series) != len(theirs):
                return False
            for a, b in zip(series, theirs):
                if (a.checkpoint_view_count, a.wall_seq) != (b.checkpoint_view_count, b.wall_seq):
                    return False
                if not np.array_equal(a.vector, b.vector):
                    return False
        return True


@dataclass(frozen=True)
class RunSeed:
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))

    def generator(self, *stream: int) -> np.random.Generator:
        """Independent generator for a named sub-stream of this run."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=tuple(stream)))


def as_seed(seed) -> RunSeed:
    return seed if isinstance(seed, RunSeed) else RunSeed(int(seed))
