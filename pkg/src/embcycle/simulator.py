"""Synthetic interaction streams.

Two regimes:

* open loop -- a model-independent schedule of (user, item) impressions whose
  outcomes are sampled from a hidden ground truth, so real-time and batch
  training see the very same events;
* closed loop -- the model under training ranks candidates, so what gets
  shown (and hence learned) depends on the update mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .ffm import CONTEXT_FIELD, ITEM_FIELD, USER_FIELD, DivergenceError, FfmModel, Hyperparams, _sigmoid, _step, _train
from .pipeline import BatchWindow
from .types import (
    SIGNAL_INDEX,
    SIGNALS,
    CheckpointGrid,
    ConfigError,
    EmbeddingSnapshot,
    EventLog,
    SignalType,
    SnapshotStore,
    as_seed,
    as_signal,
    impression_counters,
)

log = logging.getLogger(__name__)

# signals sampled independently per impression; skip is derived from view
_SAMPLED = (SignalType.VIEW, SignalType.CLICK, SignalType.LIKE, SignalType.SHARE)
_CHUNK = 8192


@dataclass(frozen=True)
class LoopConfig:
    n_users: int = 2000
    n_items_initial: int = 40
    slate_size: int = 1
    explore_epsilon: float = 0.1
    impressions_per_hour: float = 10_000.0
    total_impressions: int = 1_000_000
    candidate_pool: int = 50

    def __post_init__(self):
        for name in ("n_users", "n_items_initial", "slate_size", "candidate_pool"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_impressions < 0:
            raise ConfigError("total_impressions must be >= 0")
        if not 0.0 <= self.explore_epsilon <= 1.0:
            raise ConfigError("explore_epsilon must lie in [0, 1]")
        if self.slate_size > self.candidate_pool:
            raise ConfigError("slate_size must not exceed candidate_pool")
        if not self.impressions_per_hour > 0:
            raise ConfigError("impressions_per_hour must be > 0")

    @property
    def horizon_hours(self) -> float:
        return self.total_impressions / self.impressions_per_hour


def _default_offsets() -> dict:
    return {"view": 0.0, "click": -2.0, "like": -3.0, "share": -4.0}


@dataclass(frozen=True)
class TruthConfig:
    d_true: int = 8
    vector_scale: float = 0.6
    item_bias_scale: float = 0.5
    signal_offsets: dict = field(default_factory=_default_offsets)
    arrival_rate: float = 0.8
    item_lifetime_hours: float = 48.0  # 0 means items never expire

    def __post_init__(self):
        if self.d_true < 1:
            raise ConfigError("d_true must be >= 1")
        if self.vector_scale < 0 or self.item_bias_scale < 0:
            raise ConfigError("scales must be >= 0")
        if self.arrival_rate < 0:
            raise ConfigError("arrival_rate must be >= 0")
        if self.item_lifetime_hours < 0:
            raise ConfigError("item_lifetime_hours must be >= 0")
        for key in self.signal_offsets:
            if as_signal(key) == SignalType.SKIP:
                raise ConfigError("skip has no offset; it is the complement of view")


@dataclass
class GroundTruth:
    user_vecs: np.ndarray
    item_vecs: np.ndarray
    item_bias: np.ndarray
    signal_offsets: dict
    arrival_rate: float
    d_true: int
    arrival_time: np.ndarray
    expiry_time: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_vecs)

    @property
    def n_items(self) -> int:
        return len(self.item_vecs)

    def offset(self, signal) -> float:
        return float(self.signal_offsets.get(as_signal(signal), 0.0))

    def offsets_array(self) -> np.ndarray:
        return np.array([self.offset(s) for s in _SAMPLED])

    def live_items(self, t: float) -> np.ndarray:
        return np.flatnonzero((self.arrival_time <= t) & (t < self.expiry_time))

    def change_times(self) -> np.ndarray:
        times = np.concatenate([self.arrival_time, self.expiry_time])
        return np.unique(times[np.isfinite(times) & (times > 0)])

    def to_json_dict(self) -> dict:
        return {
            "d_true": self.d_true,
            "arrival_rate": self.arrival_rate,
            "signal_offsets": {s.value: self.offset(s) for s in _SAMPLED},
            "user_vecs": self.user_vecs.tolist(),
            "item_vecs": self.item_vecs.tolist(),
            "item_bias": self.item_bias.tolist(),
            "arrival_time": self.arrival_time.tolist(),
            "expiry_time": [t if math.isfinite(t) else None for t in self.expiry_time.tolist()],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> GroundTruth:
        return cls(
            user_vecs=np.array(data["user_vecs"], dtype=np.float64).reshape(len(data["user_vecs"]), -1),
            item_vecs=np.array(data["item_vecs"], dtype=np.float64).reshape(len(data["item_vecs"]), -1),
            item_bias=np.array(data["item_bias"], dtype=np.float64),
            signal_offsets={as_signal(k): float(v) for k, v in data["signal_offsets"].items()},
            arrival_rate=float(data["arrival_rate"]),
            d_true=int(data["d_true"]),
            arrival_time=np.array(data["arrival_time"], dtype=np.float64),
            expiry_time=np.array([math.inf if t is None else t for t in data["expiry_time"]], dtype=np.float64),
        )


def init_world(cfg: LoopConfig, truth_cfg: TruthConfig | None = None, seed=0) -> GroundTruth:
    """Draw users, the initial catalogue and Poisson arrivals over the run horizon."""
    truth_cfg = truth_cfg or TruthConfig()
    rng = as_seed(seed).generator(2)
    d, scale = truth_cfg.d_true, truth_cfg.vector_scale
    arrivals = [0.0] * cfg.n_items_initial
    if truth_cfg.arrival_rate > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / truth_cfg.arrival_rate)
            if t >= cfg.horizon_hours:
                break
            arrivals.append(t)
    n_items = len(arrivals)
    user_vecs = rng.normal(0.0, scale, size=(cfg.n_users, d))
    item_vecs = rng.normal(0.0, scale, size=(n_items, d))
    item_bias = rng.normal(0.0, truth_cfg.item_bias_scale, size=n_items)
    arrival_time = np.array(arrivals, dtype=np.float64)
    life = truth_cfg.item_lifetime_hours
    expiry_time = arrival_time + life if life > 0 else np.full(n_items, math.inf)
    return GroundTruth(
        user_vecs=user_vecs,
        item_vecs=item_vecs,
        item_bias=item_bias,
        signal_offsets={as_signal(k): float(v) for k, v in truth_cfg.signal_offsets.items()},
        arrival_rate=float(truth_cfg.arrival_rate),
        d_true=d,
        arrival_time=arrival_time,
        expiry_time=expiry_time,
    )


def feedback_probability(truth: GroundTruth, user_id, item_id, signal) -> float:
    signal = as_signal(signal)
    if signal == SignalType.SKIP:
        return 1.0 - feedback_probability(truth, user_id, item_id, SignalType.VIEW)
    logit = float(truth.user_vecs[user_id] @ truth.item_vecs[item_id]) + truth.item_bias[item_id] + truth.offset(signal)
    return float(_sigmoid(logit))


def sample_feedback(truth: GroundTruth, user_id, item_id, signal, rng: np.random.Generator) -> int:
    """One Bernoulli draw of ``signal`` for ``user_id`` shown ``item_id``."""
    if not (0 <= user_id < truth.n_users and 0 <= item_id < truth.n_items):
        raise KeyError(f"unknown user/item ({user_id}, {item_id})")
    return int(rng.random() < feedback_probability(truth, user_id, item_id, signal))


def _outcomes(truth: GroundTruth, users, items, uniforms) -> np.ndarray:
    """Outcome matrix in SIGNALS column order from uniforms of shape (n, 4)."""
    affinity = np.einsum("ij,ij->i", truth.user_vecs[users], truth.item_vecs[items]) + truth.item_bias[items]
    out = np.zeros((len(users), len(SIGNALS)), dtype=np.int8)
    for k, signal in enumerate(_SAMPLED):
        logit = affinity + truth.offset(signal)
        p = np.where(logit >= 0, 1.0 / (1.0 + np.exp(-np.abs(logit))), np.exp(-np.abs(logit)) / (1.0 + np.exp(-np.abs(logit))))
        out[:, SIGNAL_INDEX[signal]] = uniforms[:, k] < p
    out[:, SIGNAL_INDEX[SignalType.SKIP]] = 1 - out[:, SIGNAL_INDEX[SignalType.VIEW]]
    return out


# -- open loop ----------------------------------------------------------------


@dataclass
class Schedule:
    """Model-independent impression plan: who sees what, and when."""

    seq: np.ndarray
    user: np.ndarray
    item: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.seq)


def _live_segments(truth: GroundTruth, n_requests: int, hours_per_request: float):
    """Yield (first request, end request, live item ids) with a constant live set."""
    bounds = [0]
    for ct in truth.change_times():
        r = math.ceil(ct / hours_per_request - 1e-12)
        if 0 < r < n_requests:
            bounds.append(r)
    bounds = sorted(set(bounds)) + [n_requests]
    for r0, r1 in zip(bounds, bounds[1:]):
        yield r0, r1, truth.live_items(r0 * hours_per_request)


def make_schedule(truth: GroundTruth, cfg: LoopConfig, seed=0) -> Schedule:
    """Uniform users, uniform live items: the closed loop under pure exploration."""
    rng = as_seed(seed).generator(4)
    n = cfg.total_impressions
    hours = 1.0 / cfg.impressions_per_hour
    users = rng.integers(0, cfg.n_users, size=n)
    picks = rng.random(n)
    items = np.full(n, -1, dtype=np.int64)
    for r0, r1, live in _live_segments(truth, n, hours):
        if len(live):
            items[r0:r1] = live[np.minimum((picks[r0:r1] * len(live)).astype(np.int64), len(live) - 1)]
    keep = items >= 0
    t = np.arange(n) * hours
    m = int(keep.sum())
    return Schedule(np.arange(m, dtype=np.int64), users[keep].astype(np.int64), items[keep], t[keep])


def replay_open_loop(schedule: Schedule, truth: GroundTruth, seed=0) -> EventLog:
    """Fill a schedule's outcomes from the ground truth."""
    if len(schedule) and (
        schedule.user.min() < 0 or schedule.user.max() >= truth.n_users
        or schedule.item.min() < 0 or schedule.item.max() >= truth.n_items
    ):
        raise KeyError("schedule references ids unknown to the world")
    rng = as_seed(seed).generator(5)
    uniforms = rng.random((len(schedule), len(_SAMPLED)))
    outcomes = _outcomes(truth, schedule.user, schedule.item, uniforms)
    return EventLog(schedule.seq, schedule.user, schedule.item, impression_counters(schedule.item), outcomes, schedule.t)


# -- closed loop --------------------------------------------------------------


@dataclass
class BucketTally:
    edges: tuple[int, ...]
    counts: list[int]

    def shares(self) -> list[float]:
        total = sum(self.counts)
        return [c / total if total else 0.0 for c in self.counts]


@njit(cache=True)
def _publish(buf_start, buf_stop, ev_user, ev_item, ev_t, user_rows, item_rows, ctx_rows,
             lat, lin, glob, pub_lat, pub_lin, pub_glob, user_live, user_pub):
    for e in range(buf_start, buf_stop):
        rs = (user_rows[ev_user[e]], item_rows[ev_item[e]], ctx_rows[(int(ev_t[e]) % 24) // 6])
        for r in rs:
            pub_lat[r] = lat[r]
            pub_lin[r] = lin[r]
        user_pub[ev_user[e]] = user_live[ev_user[e]]
    pub_glob[0] = glob[0]
    pub_glob[1] = glob[1]


@njit(cache=True)
def _flush(buf_start, buf_stop, ev_user, ev_item, ev_t, ev_out, sig_col, user_rows, item_rows, ctx_rows,
           lat, acc_lat, lin, acc_lin, glob, pub_lat, pub_lin, pub_glob, user_live, user_pub,
           lr, l2, eps, epochs):
    n = buf_stop - buf_start
    if n <= 0:
        return -1
    rows = np.empty((n, 3), dtype=np.int64)
    ys = np.empty(n)
    for j in range(n):
        e = buf_start + j
        rows[j, 0] = user_rows[ev_user[e]]
        rows[j, 1] = item_rows[ev_item[e]]
        rows[j, 2] = ctx_rows[(int(ev_t[e]) % 24) // 6]
        ys[j] = ev_out[e, sig_col]
    if lr > 0:
        bad = _train(lat, acc_lat, lin, acc_lin, glob, rows, ys, lr, l2, eps, epochs)
        if bad >= 0:
            return buf_start + bad
    _publish(buf_start, buf_stop, ev_user, ev_item, ev_t, user_rows, item_rows, ctx_rows,
             lat, lin, glob, pub_lat, pub_lin, pub_glob, user_live, user_pub)
    return -1


@njit(cache=True)
def _serve(r0, r1, hours_per_request, state,
           realtime, window_kind, window_size, lr, l2, eps, epochs, sig_col,
           lat, acc_lat, lin, acc_lin, glob, pub_lat, pub_lin, pub_glob,
           user_rows, item_rows, ctx_rows, live_items,
           tu, ti, tb, offsets,
           r_user, r_cand, r_coin, r_fb, chunk_base,
           total, slate, explore,
           counters, user_live, user_pub, is_checkpoint,
           snap_vec, snap_item, snap_cp, snap_seq,
           ev_user, ev_item, ev_views, ev_out, ev_t):
    """Serve requests [r0, r1). ``state`` = [emitted, window id, buffer start, snapshots].

    Returns -1, or the index of the event whose update diverged.
    """
    k = lat.shape[2]
    n_users = tu.shape[0]
    nl = live_items.shape[0]
    pool = r_cand.shape[1]
    g_lat = np.zeros((3, 3, k))
    g_lin = np.zeros(3)
    cand = np.empty(pool, dtype=np.int64)
    chosen = np.empty(slate, dtype=np.int64)
    scores = np.empty(pool)
    row = np.empty(3, dtype=np.int64)
    for r in range(r0, r1):
        if state[0] >= total or nl == 0:
            return -1
        t = r * hours_per_request
        if not realtime and window_kind == 0:
            w = int(math.floor(t / window_size))
            if w != state[1]:
                bad = _flush(state[2], state[0], ev_user, ev_item, ev_t, ev_out, sig_col, user_rows, item_rows,
                             ctx_rows, lat, acc_lat, lin, acc_lin, glob, pub_lat, pub_lin, pub_glob,
                             user_live, user_pub, lr, l2, eps, epochs)
                if bad >= 0:
                    return bad
                state[1] = w
                state[2] = state[0]
        c = r - chunk_base
        u = min(int(r_user[c] * n_users), n_users - 1)
        for j in range(pool):
            cand[j] = live_items[min(int(r_cand[c, j] * nl), nl - 1)]
        ctx = ctx_rows[(int(t) % 24) // 6]
        ur = user_rows[u]
        if user_pub[u] == 0 or r_coin[c] < explore:
            for s in range(slate):
                chosen[s] = cand[s]
        else:
            for j in range(pool):
                row[0] = ur
                row[1] = item_rows[cand[j]]
                row[2] = ctx
                phi = pub_glob[0] + pub_lin[row[0]] + pub_lin[row[1]] + pub_lin[row[2]]
                for a in range(3):
                    for b in range(a + 1, 3):
                        acc = 0.0
                        for d in range(k):
                            acc += pub_lat[row[a], b, d] * pub_lat[row[b], a, d]
                        phi += acc
                scores[j] = phi
            for s in range(slate):
                best = -1
                for j in range(pool):
                    dup = False
                    for q in range(s):
                        if chosen[q] == cand[j]:
                            dup = True
                    if dup:
                        continue
                    if best < 0 or scores[j] > scores[best]:
                        best = j
                chosen[s] = cand[best] if best >= 0 else cand[s]
        for s in range(slate):
            e = state[0]
            if e >= total:
                return -1
            item = chosen[s]
            ir = item_rows[item]
            if counters[item] == 0:
                snap_vec[state[3]] = pub_lat[ir, 0]
                snap_item[state[3]] = item
                snap_cp[state[3]] = 0
                snap_seq[state[3]] = e
                state[3] += 1
            aff = tb[item]
            for d in range(tu.shape[1]):
                aff += tu[u, d] * ti[item, d]
            view = 1 if r_fb[c, s, 0] < _sigmoid(aff + offsets[0]) else 0
            ev_out[e, 0] = view
            ev_out[e, 1] = 1 - view
            for q in range(1, 4):
                ev_out[e, q + 1] = 1 if r_fb[c, s, q] < _sigmoid(aff + offsets[q]) else 0
            ev_user[e] = u
            ev_item[e] = item
            ev_views[e] = counters[item]
            ev_t[e] = t
            state[0] = e + 1
            user_live[u] += 1
            if realtime:
                if lr > 0:
                    row[0] = ur
                    row[1] = ir
                    row[2] = ctx
                    if not _step(lat, acc_lat, lin, acc_lin, glob, row, float(ev_out[e, sig_col]),
                                 lr, l2, eps, g_lat, g_lin):
                        return e
            elif window_kind == 1 and (e + 1 - state[2]) >= window_size:
                bad = _flush(state[2], e + 1, ev_user, ev_item, ev_t, ev_out, sig_col, user_rows, item_rows,
                             ctx_rows, lat, acc_lat, lin, acc_lin, glob, pub_lat, pub_lin, pub_glob,
                             user_live, user_pub, lr, l2, eps, epochs)
                if bad >= 0:
                    return bad
                state[2] = e + 1
            counters[item] += 1
            v = counters[item]
            if v < is_checkpoint.shape[0] and is_checkpoint[v]:
                snap_vec[state[3]] = pub_lat[ir, 0]
                snap_item[state[3]] = item
                snap_cp[state[3]] = v
                snap_seq[state[3]] = e
                state[3] += 1
    return -1


def closed_loop_run(cfg: LoopConfig, truth: GroundTruth, mode: str, model: FfmModel, grid: CheckpointGrid,
                    hyper: Hyperparams, seed=0, window: BatchWindow | None = None,
                    signal=SignalType.VIEW, buckets=None) -> tuple[EventLog, SnapshotStore, BucketTally]:
    """Serve ``cfg.total_impressions`` impressions ranked by the published model and train on them.

    Per request: a uniform user, ``candidate_pool`` uniform draws from the live
    items, then either the first ``slate_size`` candidates (exploration, or a
    user the published model has never been trained on) or the top-scoring
    ones under the published model. Randomness is drawn in fixed chunks that do
    not depend on the model, so both modes share common random numbers.
    """
    if mode not in ("realtime", "batch"):
        raise ConfigError(f"mode must be realtime or batch, got {mode!r}")
    window = window or BatchWindow()
    realtime = mode == "realtime"
    signal = as_signal(signal)
    if signal == SignalType.SKIP:
        sig_col = SIGNAL_INDEX[SignalType.SKIP]
    else:
        sig_col = SIGNAL_INDEX[signal]
    if truth.n_users != cfg.n_users:
        raise ConfigError("world and loop config disagree on n_users")
    rng = as_seed(seed).generator(3)

    n_users, n_items = truth.n_users, truth.n_items
    model._grow(model.n_rows + n_users + n_items + 4)
    user_rows = np.array([model.row(USER_FIELD, u) for u in range(n_users)], dtype=np.int64)
    ctx_rows = np.array([model.row(CONTEXT_FIELD, c) for c in range(4)], dtype=np.int64)
    item_rows = np.full(n_items, -1, dtype=np.int64)
    if realtime:
        pub_lat, pub_lin, pub_glob = model.latent, model.linear, model.glob
    else:
        pub_lat, pub_lin, pub_glob = model.latent.copy(), model.linear.copy(), model.glob.copy()

    slate, pool = cfg.slate_size, cfg.candidate_pool
    total = cfg.total_impressions
    n_requests = -(-total // slate)
    hours = slate / cfg.impressions_per_hour
    counters = np.zeros(n_items, dtype=np.int64)
    user_live = np.zeros(n_users, dtype=np.int64)
    user_pub = user_live if realtime else np.zeros(n_users, dtype=np.int64)
    is_checkpoint = np.zeros(grid.final + 1, dtype=np.bool_)
    is_checkpoint[list(grid.views[1:])] = True
    max_snaps = n_items * len(grid)
    snap_vec = np.zeros((max_snaps, model.k_dim))
    snap_item = np.zeros(max_snaps, dtype=np.int64)
    snap_cp = np.zeros(max_snaps, dtype=np.int64)
    snap_seq = np.zeros(max_snaps, dtype=np.int64)
    ev_user = np.zeros(total, dtype=np.int64)
    ev_item = np.zeros(total, dtype=np.int64)
    ev_views = np.zeros(total, dtype=np.int64)
    ev_out = np.zeros((total, len(SIGNALS)), dtype=np.int8)
    ev_t = np.zeros(total)
    state = np.zeros(4, dtype=np.int64)
    offsets = truth.offsets_array()
    window_kind = 0 if window.kind == "sim_hours" else 1
    lr, l2, eps = float(hyper.learning_rate), float(hyper.l2_reg), float(hyper.adagrad_epsilon)

    def touch(items):
        for item in items:
            if item_rows[item] < 0:
                r = model.row(ITEM_FIELD, int(item))
                item_rows[item] = r
                if not realtime:
                    pub_lat[r] = model.latent[r]
                    pub_lin[r] = model.linear[r]

    last_arrival = float(truth.arrival_time.max()) if n_items else 0.0
    chunk_base = -1
    r_user = r_cand = r_coin = r_fb = None
    for r0, r1, live in _live_segments(truth, n_requests, hours):
        touch(live)
        r = r0
        while r < r1 and state[0] < total:
            base = (r // _CHUNK) * _CHUNK
            if base != chunk_base:
                chunk_base = base
                r_user = rng.random(_CHUNK)
                r_cand = rng.random((_CHUNK, pool))
                r_coin = rng.random(_CHUNK)
                r_fb = rng.random((_CHUNK, slate, len(_SAMPLED)))
            stop = min(r1, base + _CHUNK)
            bad = _serve(r, stop, hours, state, realtime, window_kind, float(window.size), lr, l2, eps,
                         int(hyper.batch_epochs), sig_col, model.latent, model.acc_latent, model.linear,
                         model.acc_linear, model.glob, pub_lat, pub_lin, pub_glob, user_rows, item_rows,
                         ctx_rows, live, truth.user_vecs, truth.item_vecs, truth.item_bias, offsets,
                         r_user, r_cand, r_coin, r_fb, chunk_base, total, slate, float(cfg.explore_epsilon),
                         counters, user_live, user_pub, is_checkpoint, snap_vec, snap_item, snap_cp, snap_seq,
                         ev_user, ev_item, ev_views, ev_out, ev_t)
            if bad >= 0:
                raise DivergenceError(f"non-finite gradient at seq {bad}", int(bad))
            r = stop
        if state[0] >= total:
            break
        if len(live) == 0 and r1 * hours > last_arrival:
            log.warning("no live items left after %.1f h; stopping early", r1 * hours)
            break
    n = int(state[0])
    if not realtime:
        bad = _flush(state[2], n, ev_user, ev_item, ev_t, ev_out, sig_col, user_rows, item_rows, ctx_rows,
                     model.latent, model.acc_latent, model.linear, model.acc_linear, model.glob,
                     pub_lat, pub_lin, pub_glob, user_live, user_pub, lr, l2, eps, int(hyper.batch_epochs))
        if bad >= 0:
            raise DivergenceError(f"non-finite gradient at seq {bad}", int(bad))

    events = EventLog(np.arange(n), ev_user[:n], ev_item[:n], ev_views[:n], ev_out[:n], ev_t[:n])
    store = SnapshotStore(grid)
    for j in range(int(state[3])):
        store.add(EmbeddingSnapshot(int(snap_item[j]), int(snap_cp[j]), snap_vec[j], int(snap_seq[j])))
    from .metrics import ViewBucketSpec, bucket_counts

    buckets = buckets or ViewBucketSpec()
    tally = BucketTally(tuple(buckets.edges), bucket_counts(events, buckets).tolist())
    return events, store, tally


def world_config_dict(cfg: LoopConfig, truth_cfg: TruthConfig) -> dict:
    return {"loop": asdict(cfg), "truth": asdict(truth_cfg)}
