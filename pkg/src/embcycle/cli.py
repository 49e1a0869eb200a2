"""Command-line entry point: ``embcycle simulate|compare|metrics|plot``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime abort (diverged
training), 3 I/O or archived-log problems.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, config_from_dict, load_config
from .ffm import DivergenceError
from .io import (
    LogParseError,
    SchemaVersionError,
    dump_json,
    load_json,
    read_event_log,
    read_snapshots,
    write_event_log,
    write_schedule,
    write_snapshots,
)
from .plots import write_plots
from .report import MetricReport, build_report, read_report, write_report, write_tables
from .runs import ModeRun, RunResult, compare, simulate
from .types import SCHEMA_VERSION, ConfigError

log = logging.getLogger("embcycle")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _snapshot_name(signal, primary) -> str:
    return "snapshots.jsonl" if signal == primary else f"snapshots_{signal.value}.jsonl"


def _manifest(cfg: RunConfig, command: str, mode: str | None, run: ModeRun | None = None) -> dict:
    out = {
        "schema": SCHEMA_VERSION,
        "command": command,
        "version": __version__,
        "mode": mode,
        "seed": cfg.seed,
        "stream_regime": cfg.stream_regime,
        "window": {"kind": cfg.window.kind, "size": cfg.window.size},
        "hyper": cfg.hyper.to_dict(),
        "grid": list(cfg.grid.build().views),
        "config": cfg.echo(),
    }
    if run is not None:
        out["files"] = {
            "events": "events.jsonl",
            "snapshots": {s.value: _snapshot_name(s, cfg.signal) for s in run.stores},
        }
        out["counts"] = {"events": len(run.events), "snapshot_items": len(run.store.per_item)}
    else:
        out["modes"] = ["realtime", "batch"]
    return out


def _write_mode(out_dir: Path, cfg: RunConfig, command: str, run: ModeRun) -> None:
    write_event_log(out_dir / "events.jsonl", run.events)
    for signal, store in run.stores.items():
        write_snapshots(out_dir / _snapshot_name(signal, cfg.signal), store)
    dump_json(out_dir / "manifest.json", _manifest(cfg, command, run.mode, run))


def _write_extras(out_dir: Path, result: RunResult) -> None:
    cfg = result.config
    if cfg.output.world:
        dump_json(out_dir / "world.json", result.world.to_json_dict())
    if cfg.output.schedule and result.schedule is not None:
        write_schedule(out_dir / "schedule.jsonl", result.schedule)


def _resolve(config_path, out=None, seed=None, mode=None) -> RunConfig:
    overrides = {"seed": seed, "mode": mode, "output_dir": out}
    return load_config(config_path, overrides)


def inline_report(result: RunResult) -> MetricReport:
    cfg = result.config
    runs = {m: (r.events, r.store) for m, r in result.runs.items()}
    return build_report(cfg.echo(), runs, cfg.metrics, cfg.retain_threshold())


def cmd_simulate(config_path, out=None, seed=None, mode=None) -> Path:
    """Run one mode end to end; writes events.jsonl, snapshots.jsonl and manifest.json."""
    cfg = _resolve(config_path, out, seed, mode)
    result = simulate(cfg)
    out_dir = Path(cfg.output_dir)
    _write_mode(out_dir, cfg, "simulate", result.runs[cfg.mode])
    _write_extras(out_dir, result)
    return out_dir


def cmd_compare(config_path, out=None, seed=None, mode=None) -> Path:
    """Both modes on one world (and, open loop, one shared log), plus the joint report and CSVs."""
    cfg = _resolve(config_path, out, seed, mode)
    result = compare(cfg)
    out_dir = Path(cfg.output_dir)
    for m, run in result.runs.items():
        _write_mode(out_dir / m, cfg, "compare", run)
    dump_json(out_dir / "manifest.json", _manifest(cfg, "compare", None))
    _write_extras(out_dir, result)
    report = inline_report(result)
    write_report(out_dir / "report.json", report)
    write_tables(out_dir, report)
    return out_dir


def _check_manifest(path: Path) -> dict:
    manifest = load_json(path)
    if not isinstance(manifest, dict) or manifest.get("schema") != SCHEMA_VERSION:
        found = manifest.get("schema") if isinstance(manifest, dict) else None
        raise SchemaVersionError(f"{path}: expected log schema {SCHEMA_VERSION!r}, found {found!r}")
    return manifest


def load_archive(logs_dir) -> tuple[dict, dict]:
    """Read a simulate or compare output directory: (config echo, {mode: (events, store)})."""
    logs_dir = Path(logs_dir)
    top = _check_manifest(logs_dir / "manifest.json")
    cfg = config_from_dict(top["config"])
    grid = cfg.grid.build()
    if top.get("command") == "compare":
        dirs = {m: logs_dir / m for m in top.get("modes", [])}
    else:
        dirs = {top["mode"]: logs_dir}
    runs = {}
    for m, d in dirs.items():
        manifest = _check_manifest(d / "manifest.json")
        snap_file = manifest.get("files", {}).get("snapshots", {}).get(cfg.signal.value, "snapshots.jsonl")
        try:
            events = read_event_log(d / "events.jsonl")
            store = read_snapshots(d / snap_file, grid)
        except LogParseError:
            raise
        except ValueError as exc:
            raise LogParseError(d, 0, str(exc)) from None
        runs[m] = (events, store)
    return top["config"], runs


def cmd_metrics(logs_dir, out=None) -> Path:
    """Recompute report.json and the CSV tables from archived logs only."""
    config, runs = load_archive(logs_dir)
    cfg = config_from_dict(config)
    report = build_report(config, runs, cfg.metrics, cfg.retain_threshold())
    out_dir = Path(out) if out else Path(logs_dir)
    write_report(out_dir / "report.json", report)
    write_tables(out_dir, report)
    return out_dir


def cmd_plot(report_path, out=None) -> tuple[list[Path], list[str]]:
    report = read_report(report_path)
    out_dir = Path(out) if out else Path(report_path).parent
    written, skipped = write_plots(report, out_dir)
    for name in skipped:
        print(f"notice: {name} skipped (no data in report)", file=sys.stderr)
    return written, skipped


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embcycle", description="Real-time vs batch embedding evolution runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run one training mode end to end"),
                            ("compare", "run both modes on a shared world and report")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="run seed (overrides seed)")
        p.add_argument("--mode", choices=("realtime", "batch"), help="training mode (overrides mode)")
    p = sub.add_parser("metrics", help="recompute the report from archived logs")
    p.add_argument("logs_dir")
    p.add_argument("--out", help="where to write report.json and CSVs (default: logs_dir)")
    p = sub.add_parser("plot", help="render SVG figures from a report")
    p.add_argument("report")
    p.add_argument("--out", help="where to write SVGs (default: next to the report)")
    return parser


def _setup_logging() -> None:
    name = os.environ.get("EMBCYCLE_LOG_LEVEL", "warn").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"EMBCYCLE_LOG_LEVEL: expected one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "simulate":
            path = cmd_simulate(args.config, args.out, args.seed, args.mode)
        elif args.command == "compare":
            path = cmd_compare(args.config, args.out, args.seed, args.mode)
        elif args.command == "metrics":
            path = cmd_metrics(args.logs_dir, args.out)
        else:
            written, _ = cmd_plot(args.report, args.out)
            path = written[0].parent if written else None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"aborted at seq {exc.seq_no}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LogParseError, SchemaVersionError) as exc:
        print(f"log error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if path is not None:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
