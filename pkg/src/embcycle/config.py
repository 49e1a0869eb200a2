"""Run configuration: a flat ``key = value`` text format with dotted sections.

Example::

    # comment
    seed = 7
    mode = batch
    stream_regime = closed
    window.kind = sim_hours
    window.size = 6
    hyper.learning_rate = 0.2
    loop.total_impressions = 200000
    metrics.buckets = 0, 1000, 2000, 5000, 10000

Every key except ``seed`` has a default. Unknown keys and malformed values
raise :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .ffm import Hyperparams
from .pipeline import BatchWindow
from .simulator import LoopConfig, TruthConfig
from .types import SIGNALS, ConfigError, CheckpointGrid, RunSeed, SignalType, as_signal, make_grid

MODES = ("realtime", "batch")
REGIMES = ("open", "closed")


@dataclass(frozen=True)
class GridSpec:
    kind: str = "linear"
    start: int = 250
    stop: int = 10_000
    points: int = 40

    def build(self) -> CheckpointGrid:
        return make_grid(dataclasses.asdict(self))


@dataclass(frozen=True)
class MetricsConfig:
    alpha: float = 0.5
    sat_frac: float = 0.1
    buckets: tuple = (0, 1000, 2000, 5000, 10_000)
    norm_bins: int = 20
    average: bool = True
    # items whose last snapshot is below this are dropped; 0 means "the final checkpoint"
    retain_min_views: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ConfigError("metrics.alpha: must lie in (0, 2)")
        if not 0.0 < self.sat_frac < 1.0:
            raise ConfigError("metrics.sat_frac: must lie in (0, 1)")
        if self.norm_bins < 1:
            raise ConfigError("metrics.norm_bins: must be >= 1")
        if self.retain_min_views < 0:
            raise ConfigError("metrics.retain_min_views: must be >= 0")
        b = tuple(int(x) for x in self.buckets)
        if not b or b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError("metrics.buckets: must start at 0 and strictly increase")
        object.__setattr__(self, "buckets", b)


@dataclass(frozen=True)
class OutputConfig:
    world: bool = False
    schedule: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int
    mode: str = "realtime"
    stream_regime: str = "open"
    signals: tuple = (SignalType.VIEW,)
    output_dir: str = "runs/out"
    k_dim: int = 32
    window: BatchWindow = field(default_factory=BatchWindow)
    grid: GridSpec = field(default_factory=GridSpec)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    loop: LoopConfig = field(default_factory=LoopConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        RunSeed(self.seed)
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.stream_regime not in REGIMES:
            raise ConfigError(f"stream_regime: expected one of {REGIMES}, got {self.stream_regime!r}")
        if not self.signals:
            raise ConfigError("signals: at least one signal is required")
        if len(set(self.signals)) != len(self.signals):
            raise ConfigError("signals: duplicates are not allowed")
        if self.k_dim < 1:
            raise ConfigError("model.k_dim: must be >= 1")
        self.grid.build()

    @property
    def signal(self) -> SignalType:
        """The signal whose model is used for ranking and metrics."""
        return self.signals[0]

    def retain_threshold(self) -> int:
        return self.metrics.retain_min_views or self.grid.build().final

    def to_dict(self) -> dict:
        """Flat ``{dotted key: value}`` echo, in canonical key order."""
        return {key: _render_value(getattr_dotted(self, key)) for key in KEYS}

    def echo(self) -> dict:
        """:meth:`to_dict` without ``output_dir``: what manifests and reports record,
        so archives do not depend on where they were written."""
        out = self.to_dict()
        del out["output_dir"]
        return out

    def to_text(self) -> str:
        return "".join(f"{key} = {_format(value)}\n" for key, value in self.to_dict().items())

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


# -- key table ----------------------------------------------------------------

_SECTIONS = {
    "window": ("window", BatchWindow),
    "grid": ("grid", GridSpec),
    "hyper": ("hyper", Hyperparams),
    "loop": ("loop", LoopConfig),
    "truth": ("truth", TruthConfig),
    "metrics": ("metrics", MetricsConfig),
    "output": ("output", OutputConfig),
}
_OFFSET_KEYS = tuple(f"truth.offset.{s.value}" for s in SIGNALS if s != SignalType.SKIP)
_TOP = ("seed", "mode", "stream_regime", "signals", "output_dir", "model.k_dim")


def _section_keys() -> list[str]:
    keys = []
    for prefix, (_, cls) in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name == "signal_offsets":
                keys.extend(_OFFSET_KEYS)
            else:
                keys.append(f"{prefix}.{f.name}")
    return keys


KEYS = _TOP + tuple(_section_keys())


def getattr_dotted(cfg: RunConfig, key: str):
    if key == "model.k_dim":
        return cfg.k_dim
    if key in _OFFSET_KEYS:
        return cfg.truth.signal_offsets.get(key.rsplit(".", 1)[1], 0.0)
    if "." in key:
        section, name = key.split(".", 1)
        return getattr(getattr(cfg, _SECTIONS[section][0]), name)
    return getattr(cfg, key)


def _render_value(value):
    if isinstance(value, SignalType):
        return value.value
    if isinstance(value, tuple):
        return [_render_value(v) for v in value]
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    return str(value)


# -- parsing ------------------------------------------------------------------


def _coerce(key: str, raw: str, like):
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            as_float = float(raw)
            if as_float != int(as_float):
                raise ValueError(raw)
            return int(as_float)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(float(x)) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def parse_config_text(text: str, overrides: dict | None = None, source: str = "<config>") -> RunConfig:
    """Parse config text, apply ``overrides`` (dotted key -> raw string) and validate."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = str(value)
    return build_config(raw)


def build_config(raw: dict[str, str]) -> RunConfig:
    if "seed" not in raw or not str(raw["seed"]).strip():
        raise ConfigError("seed: required (set 'seed = N' or pass --seed)")
    defaults = {name: cls() for name, (_, cls) in _SECTIONS.items() if name != "window"}
    defaults["window"] = BatchWindow()
    section_kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
    top: dict = {}
    offsets = dict(TruthConfig().signal_offsets)
    for key, value in raw.items():
        if key == "seed":
            top["seed"] = _coerce(key, value, 0)
        elif key in ("mode", "stream_regime", "output_dir"):
            top[key] = value
        elif key == "signals":
            try:
                top["signals"] = tuple(as_signal(s.strip()) for s in value.split(",") if s.strip())
            except ValueError as exc:
                raise ConfigError(f"signals: {exc}") from None
        elif key == "model.k_dim":
            top["k_dim"] = _coerce(key, value, 0)
        elif key in _OFFSET_KEYS:
            offsets[key.rsplit(".", 1)[1]] = _coerce(key, value, 0.0)
        else:
            section, name = key.split(".", 1)
            like = getattr(defaults[section], name)
            if section == "window" and name == "size":
                like = 0.0
            section_kwargs[section][name] = _coerce(key, value, like)
    section_kwargs["truth"]["signal_offsets"] = offsets
    built = {}
    for name, (attr, cls) in _SECTIONS.items():
        try:
            built[attr] = cls(**section_kwargs[name])
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith(f"{name}.") else f"{name}: {msg}") from None
    return RunConfig(**top, **built)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, overrides, source=str(path))


def config_from_dict(data: dict) -> RunConfig:
    """Inverse of :meth:`RunConfig.to_dict` (used to reload archived manifests)."""
    unknown = [k for k in data if k not in KEYS]
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    return build_config({k: _format(v) for k, v in data.items()})
