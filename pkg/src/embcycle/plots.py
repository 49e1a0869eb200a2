"""Deterministic SVG figures drawn straight from a MetricReport.

No plotting library is used: every chart is a fixed 640x400 viewport built
from polylines and rects, with the plotted data embedded as XML comments so
the figures can be compared byte for byte and audited by eye.
"""

from __future__ import annotations

import logging
from pathlib import Path
from xml.sax.saxutils import escape

from .io import atomic_write_text
from .report import MetricReport

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 72, 130, 40, 64
COLORS = {"realtime": "#1f77b4", "batch": "#d62728"}
PLOT_FILES = ("maturity.svg", "learning.svg", "norm_ratio.svg", "popularity.svg", "engagement.svg")


def _n(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xlo, xhi = xlo - 0.5, xlo + 0.5
        if yhi <= ylo:
            ylo, yhi = ylo - 0.5, ylo + 0.5
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM

    def x(self, v):
        return LEFT + (v - self.xlo) / (self.xhi - self.xlo) * self.w

    def y(self, v):
        return TOP + self.h - (v - self.ylo) / (self.yhi - self.ylo) * self.h


def _open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
    ]


def _axes(out, fr: _Frame, xlabel, ylabel, xticks=None):
    x0, y0 = LEFT, TOP + fr.h
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + fr.w}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>')
    if xticks is None:
        xticks = [(fr.xlo + (fr.xhi - fr.xlo) * i / 5, None) for i in range(6)]
    for v, label in xticks:
        px = fr.x(v)
        out.append(f'<line x1="{_n(px)}" y1="{y0}" x2="{_n(px)}" y2="{y0 + 5}" stroke="black"/>')
        text = escape(label) if label is not None else _tick(v)
        out.append(f'<text x="{_n(px)}" y="{y0 + 18}" text-anchor="middle" font-family="sans-serif" font-size="10">{text}</text>')
    for i in range(6):
        v = fr.ylo + (fr.yhi - fr.ylo) * i / 5
        py = fr.y(v)
        out.append(f'<line x1="{x0 - 5}" y1="{_n(py)}" x2="{x0}" y2="{_n(py)}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{_n(py + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{_tick(v)}</text>')
    out.append(f'<text x="{LEFT + fr.w / 2:.0f}" y="{HEIGHT - 18}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{TOP + fr.h / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {TOP + fr.h / 2:.0f})">{escape(ylabel)}</text>')


def _legend(out, entries):
    for k, (name, color, dashed) in enumerate(entries):
        y = TOP + 12 + 18 * k
        x = WIDTH - RIGHT + 12
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{x + 26}" y="{y + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>')


def _data_comment(name, pairs) -> str:
    body = ";".join(f"{x!r},{y!r}" for x, y in pairs)
    return f"<!-- data {escape(name)}: {body} -->"


def line_chart(title, xlabel, ylabel, series, hlines=(), xticks=None, ymin=None) -> str:
    """``series`` is a list of (name, color, dashed, [(x, y), ...])."""
    xs = [x for *_, pts in series for x, _ in pts]
    ys = [y for *_, pts in series for _, y in pts] + [h for h, _ in hlines]
    lo = min(ys) if ymin is None else min(ymin, min(ys))
    fr = _Frame(min(xs), max(xs), lo, max(ys) * 1.05 if max(ys) > 0 else max(ys))
    out = _open(title)
    _axes(out, fr, xlabel, ylabel, xticks)
    for h, label in hlines:
        out.append(f'<line x1="{LEFT}" y1="{_n(fr.y(h))}" x2="{LEFT + fr.w}" y2="{_n(fr.y(h))}" stroke="gray" stroke-dasharray="2,3"/>')
        out.append(f'<text x="{LEFT + fr.w - 4}" y="{_n(fr.y(h) - 4)}" text-anchor="end" font-family="sans-serif" font-size="10" fill="gray">{escape(label)}</text>')
    for name, color, dashed, pts in series:
        out.append(_data_comment(name, pts))
        coords = " ".join(f"{_n(fr.x(x))},{_n(fr.y(y))}" for x, y in pts)
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{coords}"/>')
    _legend(out, [(n, c, d) for n, c, d, _ in series])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(title, xlabel, ylabel, categories, series) -> str:
    """Grouped bars; ``series`` is a list of (name, color, values)."""
    top = max((v for *_, vals in series for v in vals), default=1.0)
    fr = _Frame(0, len(categories), 0, top * 1.05 if top > 0 else 1.0)
    ticks = [(i + 0.5, c) for i, c in enumerate(categories)]
    out = _open(title)
    _axes(out, fr, xlabel, ylabel, ticks)
    slot = fr.w / len(categories)
    bar = slot * 0.8 / len(series)
    for s, (name, color, vals) in enumerate(series):
        out.append(_data_comment(name, list(zip(categories, vals))))
        out.append(f'<g class="bars" fill="{color}">')
        for i, v in enumerate(vals):
            x = LEFT + slot * i + slot * 0.1 + bar * s
            y = fr.y(v)
            out.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(bar)}" height="{_n(TOP + fr.h - y)}"/>')
        out.append("</g>")
    _legend(out, [(n, c, False) for n, c, _ in series])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram_chart(title, xlabel, edges, series) -> str:
    """Overlaid histograms sharing ``edges``; ``series`` is a list of (name, color, counts)."""
    top = max((c for *_, counts in series for c in counts), default=1)
    fr = _Frame(edges[0], edges[-1], 0, top * 1.05 if top > 0 else 1.0)
    out = _open(title)
    _axes(out, fr, xlabel, "items")
    for name, color, counts in series:
        out.append(_data_comment(name, list(zip(edges[:-1], counts))))
        out.append(f'<g class="histogram" data-mode="{escape(name)}" fill="{color}" fill-opacity="0.45">')
        for lo, hi, c in zip(edges, edges[1:], counts):
            if c:
                y = fr.y(c)
                out.append(f'<rect x="{_n(fr.x(lo))}" y="{_n(y)}" width="{_n(fr.x(hi) - fr.x(lo))}" height="{_n(TOP + fr.h - y)}"/>')
        out.append("</g>")
    _legend(out, [(n, c, False) for n, c, _ in series])
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- figures -------------------------------------------------------------------


def _maturity(report: MetricReport):
    series, alpha = [], None
    for mode, m in report.modes.items():
        pts = [(v, d) for v, d, _ in m["maturity"]["mean_curve"]]
        alpha = m["maturity"]["alpha"]
        if pts:
            series.append((mode, COLORS[mode], False, pts))
    if not series:
        return None
    return line_chart("Maturity: distance to converged embedding", "views", "mean cosine distance",
                      series, hlines=[(alpha, f"alpha = {alpha:g}")], ymin=0.0)


def _learning(report: MetricReport):
    series = []
    for mode, m in report.modes.items():
        pts = [(v, val) for v, val, _ in m["learning"]["points"]]
        if pts:
            series.append((mode, COLORS[mode], False, pts))
    if not series:
        return None
    return line_chart("Information per view L(V)", "views", "L(V)", series, ymin=0.0)


def _norm_ratio(report: MetricReport):
    series, edges = [], None
    for mode, m in report.modes.items():
        h = m["norm_ratio"]["histogram"]
        if sum(h["counts"]):
            series.append((mode, COLORS[mode], h["counts"]))
            edges = h["edges"]
    if not series:
        return None
    x = next(iter(report.modes.values()))["norm_ratio"]["x"]
    return histogram_chart(f"Norm ratio at {x} views", "norm ratio", edges, series)


def _popularity(report: MetricReport):
    series, labels = [], None
    for mode, m in report.modes.items():
        if m["popularity"]:
            labels = m["popularity"]["buckets"]
            series.append((mode, COLORS[mode], m["popularity"]["shares"]))
    if not series:
        return None
    return bar_chart("Share of impressions by item view bucket", "views at impression", "share", labels, series)


def _engagement(report: MetricReport):
    series, labels = [], None
    for mode, m in report.modes.items():
        eng = m["engagement"]
        if not eng:
            continue
        labels = eng["buckets"]
        for key, dashed in (("click_rate", False), ("svp_rate", True)):
            pts = [(i, row[key]) for i, row in enumerate(eng["rows"]) if row is not None]
            if pts:
                series.append((f"{mode} {key}", COLORS[mode], dashed, pts))
    if not series:
        return None
    ticks = [(i, label) for i, label in enumerate(labels)]
    return line_chart("Engagement by view bucket", "views at impression", "rate", series, xticks=ticks, ymin=0.0)


_FIGURES = {
    "maturity.svg": _maturity,
    "learning.svg": _learning,
    "norm_ratio.svg": _norm_ratio,
    "popularity.svg": _popularity,
    "engagement.svg": _engagement,
}


def render_plots(report: MetricReport) -> dict[str, str | None]:
    """SVG text per file name; ``None`` where the report has no data for that figure."""
    return {name: fn(report) for name, fn in _FIGURES.items()}


def write_plots(report: MetricReport, out_dir) -> tuple[list[Path], list[str]]:
    written, skipped = [], []
    for name, svg in render_plots(report).items():
        if svg is None:
            log.warning("skipping %s: no data in report", name)
            skipped.append(name)
        else:
            written.append(atomic_write_text(Path(out_dir) / name, svg))
    return written, skipped
