"""End-to-end run orchestration shared by the CLI and the acceptance tests.

A run is fully determined by its :class:`RunConfig`; nothing here reads the
clock or the environment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import MODES, RunConfig
from .ffm import init_model
from .pipeline import run_batch, run_realtime
from .simulator import GroundTruth, Schedule, closed_loop_run, init_world, make_schedule, replay_open_loop
from .types import EventLog, SignalType, SnapshotStore

log = logging.getLogger(__name__)


@dataclass
class ModeRun:
    mode: str
    events: EventLog
    # one snapshot store per trained signal; the first is the primary one
    stores: dict[SignalType, SnapshotStore] = field(default_factory=dict)

    @property
    def store(self) -> SnapshotStore:
        return next(iter(self.stores.values()))


@dataclass
class RunResult:
    config: RunConfig
    world: GroundTruth
    schedule: Schedule | None
    runs: dict[str, ModeRun]


def _model(cfg: RunConfig):
    return init_model({"k_dim": cfg.k_dim}, cfg.hyper, cfg.seed)


def train_on_log(cfg: RunConfig, mode: str, events: EventLog, signal) -> SnapshotStore:
    """Train a fresh model on a fixed log in the given mode and return its snapshots."""
    grid = cfg.grid.build()
    model = _model(cfg)
    if mode == "realtime":
        store, _ = run_realtime(events, model, grid, cfg.hyper, signal)
    else:
        store, _ = run_batch(events, model, cfg.window, grid, cfg.hyper, signal)
    return store


def open_loop_log(cfg: RunConfig, world: GroundTruth) -> tuple[Schedule, EventLog]:
    schedule = make_schedule(world, cfg.loop, cfg.seed)
    return schedule, replay_open_loop(schedule, world, cfg.seed)


def run_mode(cfg: RunConfig, mode: str, world: GroundTruth, events: EventLog | None = None) -> ModeRun:
    """One mode of one run.

    Open loop trains every configured signal on ``events``. Closed loop serves
    with the model of the primary signal; secondary signals are then trained
    on the resulting log, which is fixed by that point.
    """
    grid = cfg.grid.build()
    stores: dict[SignalType, SnapshotStore] = {}
    if cfg.stream_regime == "closed":
        model = _model(cfg)
        events, stores[cfg.signal], _ = closed_loop_run(
            cfg.loop, world, mode, model, grid, cfg.hyper, cfg.seed, cfg.window, cfg.signal, None
        )
    elif events is None:
        raise ValueError("open-loop runs need an event log")
    for signal in cfg.signals:
        if signal not in stores:
            stores[signal] = train_on_log(cfg, mode, events, signal)
    log.info("%s/%s: %d events, %d items snapshotted", cfg.stream_regime, mode, len(events), len(stores[cfg.signal].per_item))
    return ModeRun(mode, events, stores)


def simulate(cfg: RunConfig, modes=None) -> RunResult:
    """Run the configured regime for ``modes`` (default: the configured mode).

    Open-loop modes share one schedule and one event log.
    """
    modes = tuple(modes or (cfg.mode,))
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
    world = init_world(cfg.loop, cfg.truth, cfg.seed)
    schedule = events = None
    if cfg.stream_regime == "open":
        schedule, events = open_loop_log(cfg, world)
    runs = {mode: run_mode(cfg, mode, world, events) for mode in modes}
    return RunResult(cfg, world, schedule, runs)


def compare(cfg: RunConfig) -> RunResult:
    return simulate(cfg, MODES)
