"""Embedding-evolution metrics computed post hoc from snapshot stores and event logs.

All functions are pure. Item-level reductions iterate items in sorted id
order so floating-point sums are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import ConfigError, EmbeddingSnapshot, EventLog, SignalType, SnapshotStore


class UndefinedMetricError(ValueError):
    """A distance or ratio involving a zero-norm vector."""


def cosine_distance(x, y) -> float:
    """``1 - <x, y> / (|x| |y|)``, clamped to [0, 2]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    nx = math.sqrt(float(x @ x))
    ny = math.sqrt(float(y @ y))
    if nx == 0.0 or ny == 0.0:
        raise UndefinedMetricError("cosine distance undefined for a zero vector")
    if np.array_equal(x, y):
        # exact zero, so converged points and stale snapshots do not pick up rounding noise
        return 0.0
    return min(2.0, max(0.0, 1.0 - float(x @ y) / (nx * ny)))


# -- maturity -----------------------------------------------------------------


@dataclass(frozen=True)
class MaturityCurve:
    item_id: int
    points: tuple[tuple[int, float], ...]


def maturity_curve(series: Sequence[EmbeddingSnapshot]) -> MaturityCurve:
    """Distance of every snapshot to the item's last one (taken as converged)."""
    if len(series) < 2:
        raise ValueError("maturity curve needs at least 2 snapshots")
    final = series[-1].vector
    points = tuple((s.checkpoint_view_count, cosine_distance(s.vector, final)) for s in series)
    return MaturityCurve(series[0].item_id, points)


def maturity_curves(store: SnapshotStore) -> tuple[list[MaturityCurve], int]:
    """Curves for every item with >= 2 usable snapshots, plus the skipped count."""
    curves, skipped = [], 0
    for item in store.items():
        try:
            curves.append(maturity_curve(store.series(item)))
        except ValueError:
            skipped += 1
    return curves, skipped


def maturity_crossing(curve: MaturityCurve, alpha: float) -> int | None:
    """Smallest checkpoint from which the distance stays below ``alpha``."""
    if not 0.0 < alpha < 2.0:
        raise ConfigError("alpha must lie in (0, 2)")
    crossing = None
    for view, dist in reversed(curve.points):
        if dist >= alpha:
            break
        crossing = view
    return crossing


def mean_maturity(curves: Sequence[MaturityCurve]) -> list[tuple[int, float, int]]:
    """Per-checkpoint mean distance over the items that reached it: (V, mean, N)."""
    acc: dict[int, list[float]] = {}
    for curve in sorted(curves, key=lambda c: c.item_id):
        for view, dist in curve.points:
            acc.setdefault(view, []).append(dist)
    return [(v, math.fsum(d) / len(d), len(d)) for v, d in sorted(acc.items())]


# -- information per view -------------------------------------------------------


@dataclass(frozen=True)
class LearningCurve:
    points: tuple[tuple[int, float, int], ...]

    @property
    def views(self) -> list[int]:
        return [p[0] for p in self.points]

    @property
    def values(self) -> list[float]:
        return [p[1] for p in self.points]


def learning_curve(store: SnapshotStore, average: bool = True) -> LearningCurve:
    """Mean cosine movement between consecutive checkpoints, per view.

    ``L(V_i) = sum_j Dist(V_i^j, V_{i-1}^j) / (N_i (V_i - V_{i-1}))`` over the
    ``N_i`` items holding both snapshots. ``average=False`` drops the ``1/N_i``.
    Checkpoints with no contributing item are omitted.
    """
    views = store.grid.views
    if len(views) < 2:
        raise ConfigError("learning curve needs a grid with >= 2 checkpoints")
    sums = [0.0] * len(views)
    terms: list[list[float]] = [[] for _ in views]
    for item in store.items():
        series = store.series(item)
        for i in range(1, len(series)):
            terms[i].append(cosine_distance(series[i].vector, series[i - 1].vector))
    points = []
    for i in range(1, len(views)):
        n_i = len(terms[i])
        if n_i == 0:
            continue
        sums[i] = math.fsum(terms[i])
        denom = (views[i] - views[i - 1]) * (n_i if average else 1)
        points.append((views[i], sums[i] / denom, n_i))
    return LearningCurve(tuple(points))


def peak_and_saturation(curve: LearningCurve, sat_frac: float = 0.1) -> tuple[int, int | None]:
    """Checkpoint of maximal L (first on ties) and the first later checkpoint
    from which L stays at or below ``sat_frac`` of that maximum."""
    if not curve.points:
        raise ValueError("empty learning curve")
    if not 0.0 < sat_frac < 1.0:
        raise ConfigError("sat_frac must lie in (0, 1)")
    values = curve.values
    peak_idx = int(np.argmax(values))
    cutoff = sat_frac * values[peak_idx]
    saturation = None
    for idx in range(len(values) - 1, peak_idx, -1):
        if values[idx] > cutoff:
            break
        saturation = curve.points[idx][0]
    return curve.points[peak_idx][0], saturation


# -- norms ----------------------------------------------------------------------


def norm_ratio(series: Sequence[EmbeddingSnapshot], x: int) -> float:
    """``|emb at x views| / |emb at 0 views|``."""
    by_view = {s.checkpoint_view_count: s.vector for s in series}
    if 0 not in by_view or x not in by_view:
        raise KeyError(f"no snapshot at view 0 and {x}")
    base = float(np.linalg.norm(by_view[0]))
    if base == 0.0:
        raise UndefinedMetricError("initial embedding has zero norm")
    return float(np.linalg.norm(by_view[x])) / base


def norm_ratios(store: SnapshotStore, x: int) -> tuple[dict[int, float], int]:
    """Ratios for every item with snapshots at 0 and ``x``; second value counts exclusions."""
    out, excluded = {}, 0
    for item in store.items():
        try:
            out[item] = norm_ratio(store.series(item), x)
        except (KeyError, UndefinedMetricError):
            excluded += 1
    return out, excluded


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean: float | None
    excluded: int

    @property
    def total(self) -> int:
        return sum(self.counts)


def norm_ratio_histogram(store: SnapshotStore, x: int, bins: int | Sequence[float] = 20) -> Histogram:
    ratios, excluded = norm_ratios(store, x)
    values = np.array([ratios[i] for i in sorted(ratios)], dtype=np.float64)
    if isinstance(bins, (int, np.integer)):
        if bins < 1:
            raise ConfigError("bins must be >= 1")
        if len(values):
            lo, hi = float(values.min()), float(values.max())
        else:
            lo, hi = 0.0, 1.0
        if hi <= lo:
            lo, hi = lo - 0.5, lo + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigError("histogram edges must be strictly increasing")
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    mean = math.fsum(values.tolist()) / len(values) if len(values) else None
    return Histogram(tuple(edges.tolist()), tuple(int(c) for c in counts), mean, excluded)


# -- view buckets -----------------------------------------------------------------


@dataclass(frozen=True)
class ViewBucketSpec:
    edges: tuple[int, ...] = (0, 1000, 2000, 5000, 10000)

    def __post_init__(self):
        edges = tuple(int(e) for e in self.edges)
        if not edges or edges[0] != 0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError("bucket edges must start at 0 and strictly increase")
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return len(self.edges)

    def labels(self) -> list[str]:
        out = [f"[{a},{b})" for a, b in zip(self.edges, self.edges[1:])]
        return out + [f"[{self.edges[-1]},inf)"]

    def index(self, views) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), np.asarray(views), side="right") - 1


def bucket_counts(log: EventLog, buckets: ViewBucketSpec) -> np.ndarray:
    return np.bincount(buckets.index(log.views_at_imp), minlength=len(buckets)).astype(np.int64)


def popularity_share(log: EventLog, buckets: ViewBucketSpec) -> list[float]:
    """Fraction of impressions landing in each bucket of the item's prior view count."""
    if len(log) == 0:
        raise ValueError("popularity share of an empty log")
    counts = bucket_counts(log, buckets)
    return (counts / counts.sum()).tolist()


def engagement_by_bucket(log: EventLog, buckets: ViewBucketSpec) -> list[dict | None]:
    """Per-bucket click rate and successful-play (view) rate; ``None`` for empty buckets."""
    if len(log) == 0:
        raise ValueError("engagement of an empty log")
    idx = buckets.index(log.views_at_imp)
    n = np.bincount(idx, minlength=len(buckets))
    clicks = np.bincount(idx, weights=log.signal_column(SignalType.CLICK), minlength=len(buckets))
    views = np.bincount(idx, weights=log.signal_column(SignalType.VIEW), minlength=len(buckets))
    out = []
    for b in range(len(buckets)):
        if n[b] == 0:
            out.append(None)
        else:
            out.append({"impressions": int(n[b]), "click_rate": float(clicks[b] / n[b]), "svp_rate": float(views[b] / n[b])})
    return out


def play_counts(log: EventLog) -> dict[int, int]:
    """Positive view outcomes per item (the alternative reading of "views")."""
    plays = np.bincount(log.item, weights=log.signal_column(SignalType.VIEW)) if len(log) else np.zeros(0)
    return {int(i): int(plays[i]) for i in np.unique(log.item)}
