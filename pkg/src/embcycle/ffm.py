"""Field-aware factorization machine with AdaGrad updates.

Three fields (user, item, context), one active feature per field. Each
feature keeps one latent vector per partner field, so an event scores

    phi = bias + sum(linear) + <w[u, item], w[i, user]>
                             + <w[u, ctx],  w[c, user]>
                             + <w[i, ctx],  w[c, item]>

Parameters live in dense row-major arrays; a feature gets its row (and its
random latent draw) the first time it is touched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .types import ConfigError, InteractionEvent, RunSeed, as_seed, as_signal

USER_FIELD, ITEM_FIELD, CONTEXT_FIELD = 0, 1, 2
FIELD_NAMES = ("user", "item", "context")
_PREFIX = ("u", "i", "c")
N_FIELDS = 3


class DivergenceError(RuntimeError):
    """A gradient step produced a non-finite value."""

    def __init__(self, message: str, seq_no: int | None = None):
        super().__init__(message)
        self.seq_no = seq_no


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.2
    l2_reg: float = 2e-5
    init_scale: float = 1.0
    adagrad_epsilon: float = 1.0
    batch_epochs: int = 2

    def __post_init__(self):
        # learning_rate == 0 is accepted so a model can be frozen.
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be >= 0")
        if not self.l2_reg >= 0:
            raise ConfigError("l2_reg must be >= 0")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be > 0")
        if not self.adagrad_epsilon > 0:
            raise ConfigError("adagrad_epsilon must be > 0")
        if int(self.batch_epochs) != self.batch_epochs or self.batch_epochs < 1:
            raise ConfigError("batch_epochs must be an integer >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def daypart(sim_time: float) -> int:
    """Context feature of an impression: which quarter of the simulated day."""
    return int(sim_time) % 24 // 6


# -- numba kernels -----------------------------------------------------------


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _phi(latent, linear, bias, r):
    phi = bias
    for a in range(3):
        if r[a] >= 0:
            phi += linear[r[a]]
    k = latent.shape[2]
    for a in range(3):
        if r[a] < 0:
            continue
        for b in range(a + 1, 3):
            if r[b] < 0:
                continue
            s = 0.0
            for d in range(k):
                s += latent[r[a], b, d] * latent[r[b], a, d]
            phi += s
    return phi


@njit(cache=True)
def _gradients(latent, linear, bias, r, y, l2, g_lat, g_lin):
    """Fill ``g_lat[a, b]`` (grad of w[r[a], b]) and ``g_lin[a]``; return (phi, dloss/dphi)."""
    phi = _phi(latent, linear, bias, r)
    g = _sigmoid(phi) - y
    k = latent.shape[2]
    for a in range(3):
        g_lin[a] = 0.0
        for b in range(3):
            for d in range(k):
                g_lat[a, b, d] = 0.0
        if r[a] >= 0:
            g_lin[a] = g + l2 * linear[r[a]]
    for a in range(3):
        if r[a] < 0:
            continue
        for b in range(a + 1, 3):
            if r[b] < 0:
                continue
            for d in range(k):
                g_lat[a, b, d] = g * latent[r[b], a, d] + l2 * latent[r[a], b, d]
                g_lat[b, a, d] = g * latent[r[a], b, d] + l2 * latent[r[b], a, d]
    return phi, g


@njit(cache=True)
def _step(latent, acc_latent, linear, acc_linear, glob, r, y, lr, l2, eps, g_lat, g_lin):
    """One AdaGrad step on a single event. Returns False if a gradient is non-finite."""
    phi, g = _gradients(latent, linear, glob[0], r, y, l2, g_lat, g_lin)
    if not math.isfinite(g):
        return False
    k = latent.shape[2]
    for a in range(3):
        if r[a] < 0:
            continue
        if not math.isfinite(g_lin[a]):
            return False
        for b in range(3):
            if b == a or r[b] < 0:
                continue
            for d in range(k):
                if not math.isfinite(g_lat[a, b, d]):
                    return False
    glob[1] += g * g
    glob[0] -= lr * g / math.sqrt(glob[1] + eps)
    for a in range(3):
        ra = r[a]
        if ra < 0:
            continue
        acc_linear[ra] += g_lin[a] * g_lin[a]
        linear[ra] -= lr * g_lin[a] / math.sqrt(acc_linear[ra] + eps)
        for b in range(3):
            if b == a or r[b] < 0:
                continue
            for d in range(k):
                gd = g_lat[a, b, d]
                acc_latent[ra, b, d] += gd * gd
                latent[ra, b, d] -= lr * gd / math.sqrt(acc_latent[ra, b, d] + eps)
    return True


@njit(cache=True)
def _train(latent, acc_latent, linear, acc_linear, glob, rows, ys, lr, l2, eps, epochs):
    """Sequential passes over ``rows``/``ys``. Returns the failing index or -1."""
    k = latent.shape[2]
    g_lat = np.zeros((3, 3, k))
    g_lin = np.zeros(3)
    for _ in range(epochs):
        for e in range(rows.shape[0]):
            if not _step(latent, acc_latent, linear, acc_linear, glob, rows[e], ys[e], lr, l2, eps, g_lat, g_lin):
                return e
    return -1


# -- model -------------------------------------------------------------------


class FfmModel:
    """Mutable parameter container; see the module docstring for the scoring rule."""

    def __init__(self, k_dim: int = 32, init_scale: float = 1.0, seed=0, capacity: int = 64):
        if k_dim < 1:
            raise ConfigError("k_dim must be >= 1")
        if not init_scale > 0:
            raise ConfigError("init_scale must be > 0")
        self.k_dim = int(k_dim)
        self.init_scale = float(init_scale)
        self._rng = as_seed(seed).generator(1)
        capacity = max(int(capacity), 1)
        self.latent = np.zeros((capacity, N_FIELDS, self.k_dim))
        self.acc_latent = np.zeros_like(self.latent)
        self.linear = np.zeros(capacity)
        self.acc_linear = np.zeros(capacity)
        # [bias, bias accumulator]; an array so kernels can mutate it in place
        self.glob = np.zeros(2)
        self._rows: dict[tuple[int, int], int] = {}
        self._keys: list[tuple[int, int]] = []

    @property
    def bias(self) -> float:
        return float(self.glob[0])

    @property
    def n_rows(self) -> int:
        return len(self._keys)

    def features(self) -> list[tuple[int, int]]:
        return list(self._keys)

    def has(self, field: int, fid: int) -> bool:
        return (field, int(fid)) in self._rows

    def _grow(self, need: int) -> None:
        cap = len(self.linear)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        for name in ("latent", "acc_latent", "linear", "acc_linear"):
            old = getattr(self, name)
            new = np.zeros((new_cap,) + old.shape[1:])
            new[:cap] = old
            setattr(self, name, new)

    def row(self, field: int, fid: int) -> int:
        """Row index of a feature, creating and initialising it on first touch."""
        key = (field, int(fid))
        r = self._rows.get(key)
        if r is None:
            r = len(self._keys)
            self._grow(r + 1)
            bound = self.init_scale / math.sqrt(self.k_dim)
            self.latent[r] = self._rng.uniform(0.0, bound, size=(N_FIELDS, self.k_dim))
            self._rows[key] = r
            self._keys.append(key)
        return r

    def event_rows(self, user_id, item_id, context_id=None) -> np.ndarray:
        """Rows for one event, touched in user, item, context order (-1 = absent)."""
        return np.array(
            [
                self.row(USER_FIELD, user_id),
                self.row(ITEM_FIELD, item_id),
                -1 if context_id is None else self.row(CONTEXT_FIELD, context_id),
            ],
            dtype=np.int64,
        )

    def rows_for_log(self, users, items, contexts) -> np.ndarray:
        """Vectorised :meth:`event_rows` over whole columns, same touch order."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        contexts = np.asarray(contexts, dtype=np.int64)
        n = len(users)
        cols = (users, items, contexts)
        # first appearance of every feature, ordered by (event index, field)
        pending = []
        for field, col in enumerate(cols):
            if n == 0:
                continue
            uniq, first = np.unique(col, return_index=True)
            for fid, idx in zip(uniq.tolist(), first.tolist()):
                if (field, fid) not in self._rows:
                    pending.append((idx, field, fid))
        pending.sort()
        for _, field, fid in pending:
            self.row(field, fid)
        out = np.empty((n, 3), dtype=np.int64)
        for field, col in enumerate(cols):
            if n == 0:
                continue
            uniq, inverse = np.unique(col, return_inverse=True)
            lookup = np.array([self._rows[(field, fid)] for fid in uniq.tolist()], dtype=np.int64)
            out[:, field] = lookup[inverse]
        return out

    def train_rows(self, rows: np.ndarray, ys: np.ndarray, hyper: Hyperparams, epochs: int = 1) -> int:
        """Run the kernel over prepared rows; returns failing index or -1."""
        if len(rows) == 0 or hyper.learning_rate == 0:
            return -1
        return int(
            _train(
                self.latent, self.acc_latent, self.linear, self.acc_linear, self.glob,
                np.ascontiguousarray(rows, dtype=np.int64),
                np.ascontiguousarray(ys, dtype=np.float64),
                float(hyper.learning_rate), float(hyper.l2_reg), float(hyper.adagrad_epsilon),
                int(epochs),
            )
        )

    def copy(self) -> FfmModel:
        other = FfmModel.__new__(FfmModel)
        other.k_dim = self.k_dim
        other.init_scale = self.init_scale
        other._rng = np.random.Generator(type(self._rng.bit_generator)())
        other._rng.bit_generator.state = self._rng.bit_generator.state
        for name in ("latent", "acc_latent", "linear", "acc_linear", "glob"):
            setattr(other, name, getattr(self, name).copy())
        other._rows = dict(self._rows)
        other._keys = list(self._keys)
        return other

    def is_finite(self) -> bool:
        n = self.n_rows
        return bool(
            np.all(np.isfinite(self.latent[:n]))
            and np.all(np.isfinite(self.linear[:n]))
            and np.all(np.isfinite(self.glob))
        )

    # -- checkpoint file ----------------------------------------------------

    @staticmethod
    def _name(key: tuple[int, int]) -> str:
        return f"{_PREFIX[key[0]]}:{key[1]}"

    def to_json_dict(self) -> dict:
        names = [self._name(k) for k in self._keys]
        latent, acc_latent = {}, {}
        for r, name in enumerate(names):
            for f, fname in enumerate(FIELD_NAMES):
                latent[f"{name}/{fname}"] = self.latent[r, f].tolist()
                acc_latent[f"{name}/{fname}"] = self.acc_latent[r, f].tolist()
        return {
            "k_dim": self.k_dim,
            "bias": float(self.glob[0]),
            "linear": {name: float(self.linear[r]) for r, name in enumerate(names)},
            "latent": latent,
            "accumulators": {
                "bias": float(self.glob[1]),
                "linear": {name: float(self.acc_linear[r]) for r, name in enumerate(names)},
                "latent": acc_latent,
            },
        }

    @classmethod
    def from_json_dict(cls, data: dict, init_scale: float = 1.0, seed=0) -> FfmModel:
        model = cls(int(data["k_dim"]), init_scale=init_scale, seed=seed, capacity=max(len(data["linear"]), 1))
        model.glob[:] = [data["bias"], data["accumulators"]["bias"]]
        for r, name in enumerate(data["linear"]):
            prefix, fid = name.split(":")
            key = (_PREFIX.index(prefix), int(fid))
            model._rows[key] = r
            model._keys.append(key)
            model.linear[r] = data["linear"][name]
            model.acc_linear[r] = data["accumulators"]["linear"][name]
            for f, fname in enumerate(FIELD_NAMES):
                model.latent[r, f] = data["latent"][f"{name}/{fname}"]
                model.acc_latent[r, f] = data["accumulators"]["latent"][f"{name}/{fname}"]
        return model


def init_model(dims: dict | None = None, hyper: Hyperparams | None = None, seed: RunSeed | int = 0) -> FfmModel:
    """Empty model; latent rows are drawn from U[0, init_scale/sqrt(k_dim)) on first touch."""
    dims = dims or {}
    hyper = hyper or Hyperparams()
    fields = tuple(dims.get("fields", FIELD_NAMES))
    if fields != FIELD_NAMES:
        raise ConfigError(f"fields must be {FIELD_NAMES}, got {fields}")
    return FfmModel(int(dims.get("k_dim", 32)), init_scale=hyper.init_scale, seed=seed)


def predict(model: FfmModel, user_id, item_id, context_id=None) -> float:
    r = model.event_rows(user_id, item_id, context_id)
    return float(_sigmoid(_phi(model.latent, model.linear, model.glob[0], r)))


def gradients(model: FfmModel, user_id, item_id, context_id, y: float, l2: float = 0.0) -> dict:
    """Analytic loss gradients for one event, keyed like the checkpoint file.

    The loss is log-loss plus ``l2/2`` times the squared norm of every
    parameter the event uses (bias excluded).
    """
    r = model.event_rows(user_id, item_id, context_id)
    g_lat = np.zeros((3, 3, model.k_dim))
    g_lin = np.zeros(3)
    _, g = _gradients(model.latent, model.linear, model.glob[0], r, float(y), float(l2), g_lat, g_lin)
    out = {"bias": float(g)}
    for a in range(3):
        if r[a] < 0:
            continue
        name = FfmModel._name(model._keys[r[a]])
        out[name] = float(g_lin[a])
        for b in range(3):
            if b != a and r[b] >= 0:
                out[f"{name}/{FIELD_NAMES[b]}"] = g_lat[a, b].copy()
    return out


def sgd_step(model: FfmModel, event: InteractionEvent, signal, hyper: Hyperparams, context_id="daypart") -> FfmModel:
    """Apply one AdaGrad log-loss step for ``event``'s outcome on ``signal``."""
    signal = as_signal(signal)
    if signal not in event.outcomes:
        raise ConfigError(f"event {event.seq_no} has no outcome for {signal.value}")
    if context_id == "daypart":
        context_id = daypart(event.sim_time)
    rows = model.event_rows(event.user_id, event.item_id, context_id)[None, :]
    ys = np.array([float(event.outcomes[signal])])
    bad = model.train_rows(rows, ys, hyper)
    if bad >= 0:
        raise DivergenceError(f"non-finite gradient at seq {event.seq_no}", event.seq_no)
    return model


def item_embedding(model: FfmModel, item_id) -> np.ndarray:
    """The item's latent vector against the user field (the ranking-side embedding)."""
    return model.latent[model.row(ITEM_FIELD, item_id), USER_FIELD].copy()


def user_embedding(model: FfmModel, user_id) -> np.ndarray:
    return model.latent[model.row(USER_FIELD, user_id), ITEM_FIELD].copy()
