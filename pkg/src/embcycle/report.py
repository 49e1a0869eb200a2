"""MetricReport: every evolution metric for one or two modes, as JSON plus CSV tables.

The report is a pure function of the run configuration and the archived
event and snapshot logs, so it can be regenerated byte for byte from disk.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .io import SchemaVersionError, atomic_write_text, load_json, write_csv
from .types import SCHEMA_VERSION, EventLog, SnapshotStore

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "report-v1"
NORM_RATIO_REFERENCE = 5.0
CSV_FILES = ("maturity.csv", "learning.csv", "norm_ratio.csv", "popularity.csv", "engagement.csv")

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_OPT_NUM = {"type": ["number", "null"]}
_OPT_INT = {"type": ["integer", "null"]}
_TRIPLES = {"type": "array", "items": {"type": "array", "prefixItems": [_INT, _NUM, _INT], "minItems": 3, "maxItems": 3}}

# JSON Schema (draft 2020-12) for report.json
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "log_schema", "config", "modes", "comparison", "warnings"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": REPORT_SCHEMA_VERSION},
        "log_schema": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "comparison": {"type": ["object", "null"]},
        "modes": {
            "type": "object",
            "propertyNames": {"enum": ["realtime", "batch"]},
            "additionalProperties": {
                "type": "object",
                "required": ["events", "items_seen", "items_retained", "exclusions", "maturity", "learning",
                             "norm_ratio", "popularity", "engagement"],
                "properties": {
                    "events": _INT,
                    "items_seen": _INT,
                    "items_retained": _INT,
                    "exclusions": {"type": "object", "additionalProperties": _INT},
                    "maturity": {
                        "type": "object",
                        "required": ["alpha", "mean_curve", "crossings", "median_crossing", "never_crossed"],
                        "properties": {
                            "alpha": _NUM,
                            "mean_curve": _TRIPLES,
                            "crossings": {"type": "array"},
                            "median_crossing": _OPT_NUM,
                            "never_crossed": _INT,
                        },
                    },
                    "learning": {
                        "type": "object",
                        "required": ["average", "points", "peak_view", "saturation_view"],
                        "properties": {"points": _TRIPLES, "peak_view": _OPT_INT, "saturation_view": _OPT_INT},
                    },
                    "norm_ratio": {
                        "type": "object",
                        "required": ["x", "mean", "per_item", "histogram"],
                        "properties": {
                            "x": _INT,
                            "mean": _OPT_NUM,
                            "histogram": {
                                "type": "object",
                                "required": ["edges", "counts"],
                                "properties": {"edges": {"type": "array", "items": _NUM},
                                               "counts": {"type": "array", "items": _INT}},
                            },
                        },
                    },
                    "popularity": {"type": ["object", "null"]},
                    "engagement": {"type": ["object", "null"]},
                },
            },
        },
    },
}


@dataclass
class MetricReport:
    config: dict
    modes: dict[str, dict]
    comparison: dict | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "log_schema": SCHEMA_VERSION,
            "config": self.config,
            "modes": self.modes,
            "comparison": self.comparison,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> MetricReport:
        if data.get("schema") != REPORT_SCHEMA_VERSION:
            raise SchemaVersionError(f"expected report schema {REPORT_SCHEMA_VERSION!r}, got {data.get('schema')!r}")
        return cls(data["config"], data["modes"], data.get("comparison"), list(data.get("warnings", [])))


def _median(values):
    return float(np.median(values)) if values else None


def _zero_norm_items(store: SnapshotStore) -> set[int]:
    return {i for i in store.items() if any(not np.any(s.vector) for s in store.series(i))}


def _without(store: SnapshotStore, drop: set[int]) -> SnapshotStore:
    return SnapshotStore(store.grid, {i: s for i, s in store.per_item.items() if i not in drop})


def mode_metrics(events: EventLog, store: SnapshotStore, metrics_cfg, retain_at: int,
                 hist_edges=None, warnings: list | None = None, label: str = "") -> dict:
    """All per-mode metrics. ``hist_edges`` fixes the norm-ratio bins (shared across modes)."""
    warnings = warnings if warnings is not None else []
    grid = store.grid
    retained = store.retained(retain_at)
    zero = _zero_norm_items(retained)
    usable = _without(retained, zero)

    curves, short = M.maturity_curves(usable)
    crossings = [(c.item_id, M.maturity_crossing(c, metrics_cfg.alpha)) for c in curves]
    crossed = [v for _, v in crossings if v is not None]

    lc = M.learning_curve(usable, average=metrics_cfg.average)
    peak, sat = M.peak_and_saturation(lc, metrics_cfg.sat_frac) if lc.points else (None, None)

    x = grid.final
    ratios, missing = M.norm_ratios(usable, x)
    bins = hist_edges if hist_edges is not None else metrics_cfg.norm_bins
    hist = M.norm_ratio_histogram(usable, x, bins)

    if usable.per_item == {}:
        warnings.append(f"{label}: no retained items (threshold {retain_at} views)")
    buckets = M.ViewBucketSpec(metrics_cfg.buckets)
    if len(events):
        counts = M.bucket_counts(events, buckets).tolist()
        popularity = {"buckets": buckets.labels(), "impressions": counts, "shares": M.popularity_share(events, buckets)}
        engagement = {"buckets": buckets.labels(), "rows": M.engagement_by_bucket(events, buckets)}
    else:
        warnings.append(f"{label}: empty event log; popularity and engagement omitted")
        popularity = engagement = None

    return {
        "events": len(events),
        "items_seen": len(store.per_item),
        "items_retained": len(usable.per_item),
        "exclusions": {
            "not_retained": len(store.per_item) - len(retained.per_item),
            "zero_norm": len(zero),
            "maturity_short_series": short,
            "norm_ratio_missing": missing,
        },
        "maturity": {
            "alpha": metrics_cfg.alpha,
            "mean_curve": [list(p) for p in M.mean_maturity(curves)],
            "crossings": [[i, v] for i, v in crossings],
            "median_crossing": _median(crossed),
            "never_crossed": len(crossings) - len(crossed),
        },
        "learning": {
            "average": metrics_cfg.average,
            "sat_frac": metrics_cfg.sat_frac,
            "points": [list(p) for p in lc.points],
            "peak_view": peak,
            "saturation_view": sat,
        },
        "norm_ratio": {
            "x": x,
            "mean": hist.mean,
            "median": _median(list(ratios.values())),
            "per_item": [[i, ratios[i]] for i in sorted(ratios)],
            "histogram": {"edges": list(hist.edges), "counts": list(hist.counts)},
        },
        "popularity": popularity,
        "engagement": engagement,
    }


def _shared_edges(stores, retain_at, bins):
    """Common histogram bins over every mode's ratios, so histograms overlay."""
    values = []
    for store in stores:
        usable = store.retained(retain_at)
        usable = _without(usable, _zero_norm_items(usable))
        values.extend(M.norm_ratios(usable, store.grid.final)[0].values())
    if not values:
        return None
    lo, hi = min(values), max(values)
    if hi <= lo:
        lo, hi = lo - 0.5, lo + 0.5
    return np.linspace(lo, hi, bins + 1).tolist()


def _pair(rt, bt):
    out = {"realtime": rt, "batch": bt}
    if isinstance(rt, (int, float)) and isinstance(bt, (int, float)) and bt != 0:
        out["ratio"] = rt / bt
    return out


def comparison(modes: dict) -> dict:
    rt, bt = modes["realtime"], modes["batch"]
    a, b = rt["norm_ratio"]["mean"], bt["norm_ratio"]["mean"]
    nr = {"realtime": a, "batch": b, "batch_over_realtime": b / a if a and b is not None else None,
          "reference_factor": NORM_RATIO_REFERENCE}
    out = {
        "median_crossing": _pair(rt["maturity"]["median_crossing"], bt["maturity"]["median_crossing"]),
        "peak_view": _pair(rt["learning"]["peak_view"], bt["learning"]["peak_view"]),
        "saturation_view": _pair(rt["learning"]["saturation_view"], bt["learning"]["saturation_view"]),
        "norm_ratio_mean": nr,
    }
    if rt["popularity"] and bt["popularity"]:
        out["top_bucket_share"] = _pair(rt["popularity"]["shares"][-1], bt["popularity"]["shares"][-1])
    return out


def build_report(config: dict, runs: dict[str, tuple[EventLog, SnapshotStore]], metrics_cfg, retain_at: int) -> MetricReport:
    """``runs`` maps mode name to its (event log, primary snapshot store)."""
    warnings: list[str] = []
    edges = None
    if len(runs) > 1:
        edges = _shared_edges([s for _, s in runs.values()], retain_at, metrics_cfg.norm_bins)
    modes = {}
    for mode in ("realtime", "batch"):
        if mode in runs:
            events, store = runs[mode]
            modes[mode] = mode_metrics(events, store, metrics_cfg, retain_at, edges, warnings, mode)
    comp = comparison(modes) if len(modes) == 2 else None
    for w in warnings:
        log.warning(w)
    return MetricReport(config, modes, comp, warnings)


def write_report(path, report: MetricReport) -> Path:
    return atomic_write_text(path, report.to_json())


def read_report(path) -> MetricReport:
    return MetricReport.from_dict(load_json(path))


def _fmt(v):
    # keep ints as ints; floats are written with repr by write_csv
    return v if v is None or isinstance(v, (int, str)) else float(v)


def report_tables(report: MetricReport) -> dict[str, tuple[list[str], list[list]]]:
    tables = {
        "maturity.csv": (["mode", "view", "mean_distance", "n_items"], []),
        "learning.csv": (["mode", "view", "L", "n_items"], []),
        "norm_ratio.csv": (["mode", "item", "norm_ratio"], []),
        "popularity.csv": (["mode", "bucket", "impressions", "share"], []),
        "engagement.csv": (["mode", "bucket", "impressions", "click_rate", "svp_rate"], []),
    }
    for mode, m in report.modes.items():
        for v, d, n in m["maturity"]["mean_curve"]:
            tables["maturity.csv"][1].append([mode, v, _fmt(d), n])
        for v, val, n in m["learning"]["points"]:
            tables["learning.csv"][1].append([mode, v, _fmt(val), n])
        for item, r in m["norm_ratio"]["per_item"]:
            tables["norm_ratio.csv"][1].append([mode, item, _fmt(r)])
        if m["popularity"]:
            pop = m["popularity"]
            for label, n, s in zip(pop["buckets"], pop["impressions"], pop["shares"]):
                tables["popularity.csv"][1].append([mode, label, n, _fmt(s)])
        if m["engagement"]:
            eng = m["engagement"]
            for label, row in zip(eng["buckets"], eng["rows"]):
                if row is None:
                    tables["engagement.csv"][1].append([mode, label, 0, None, None])
                else:
                    tables["engagement.csv"][1].append([mode, label, row["impressions"], _fmt(row["click_rate"]), _fmt(row["svp_rate"])])
    return tables


def write_tables(out_dir, report: MetricReport) -> list[Path]:
    out_dir = Path(out_dir)
    return [write_csv(out_dir / name, header, rows) for name, (header, rows) in report_tables(report).items()]
