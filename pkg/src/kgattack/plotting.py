"""Deterministic SVG line charts of mean MRR against perturbation ratio."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from .runner import Aggregation, AggregateRow, aggregate, format_ratio

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 150, 40, 56
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
SURFACE_TITLES = {"gp": "graph perturbation", "lp": "label perturbation", "pp": "parameter perturbation",
                  "none": "no perturbation"}


def _f(x: float) -> str:
    return f"{x:.2f}"


def ratio_positions(ratios) -> dict[float, float]:
    """Map ratios onto [0, 1]: log scale for positive ratios, 0 pinned one step left."""
    ratios = sorted(set(ratios))
    pos = [k for k in ratios if k > 0]
    if not pos:
        return {0.0: 0.0}
    logs = [math.log10(k) for k in pos]
    step = (logs[-1] - logs[0]) / (len(logs) - 1) if len(logs) > 1 else 1.0
    lo = logs[0] - step if 0.0 in ratios else logs[0]
    span = (logs[-1] - lo) or 1.0
    out = {k: (math.log10(k) - lo) / span for k in pos}
    if 0.0 in ratios:
        out[0.0] = 0.0
    return out


def y_top(rows: list[AggregateRow], metric: str = "mrr") -> float:
    high = max(r.mean[metric] + r.std[metric] for r in rows)
    return min(1.0, max(0.1, math.ceil(round(high * 10, 9)) / 10))


def render_svg(rows: list[AggregateRow], title: str, metric: str = "mrr") -> str:
    by_model: dict[str, list[AggregateRow]] = defaultdict(list)
    for r in rows:
        by_model[r.model].append(r)
    xpos = ratio_positions(r.ratio for r in rows)
    top = y_top(rows, metric)
    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def X(k):
        return MARGIN_LEFT + xpos[k] * pw

    def Y(v):
        return MARGIN_TOP + ph - (max(0.0, min(v, top)) / top) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_f(MARGIN_LEFT + pw / 2)}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    # y grid and ticks every 0.1
    for i in range(int(round(top * 10)) + 1):
        v = i / 10
        y = Y(v)
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{_f(y)}" x2="{MARGIN_LEFT + pw}" y2="{_f(y)}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{v:.1f}</text>')
    for k in sorted(xpos):
        x = X(k)
        out.append(f'<line x1="{_f(x)}" y1="{MARGIN_TOP + ph}" x2="{_f(x)}" y2="{MARGIN_TOP + ph + 5}" '
                   f'stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{_f(x)}" y="{MARGIN_TOP + ph + 18}" text-anchor="middle">{format_ratio(k)}</text>')
    out.append(f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{MARGIN_TOP + ph}" '
               f'stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP + ph}" x2="{MARGIN_LEFT + pw}" y2="{MARGIN_TOP + ph}" '
               f'stroke="black" stroke-width="1"/>')
    out.append(f'<text x="{_f(MARGIN_LEFT + pw / 2)}" y="{HEIGHT - 14}" text-anchor="middle">'
               f'perturbation ratio (log scale)</text>')
    out.append(f'<text transform="translate(18 {_f(MARGIN_TOP + ph / 2)}) rotate(-90)" '
               f'text-anchor="middle">test {metric.upper()}</text>')

    for i, model in enumerate(sorted(by_model)):
        colour = PALETTE[i % len(PALETTE)]
        series = sorted(by_model[model], key=lambda r: r.ratio)
        points = " ".join(f"{_f(X(r.ratio))},{_f(Y(r.mean[metric]))}" for r in series)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{points}"/>')
        for r in series:
            x, m, s = X(r.ratio), r.mean[metric], r.std[metric]
            out.append(f'<line x1="{_f(x)}" y1="{_f(Y(m - s))}" x2="{_f(x)}" y2="{_f(Y(m + s))}" '
                       f'stroke="{colour}" stroke-width="1"/>')
            out.append(f'<circle cx="{_f(x)}" cy="{_f(Y(m))}" r="3" fill="{colour}"/>')
        ly = MARGIN_TOP + 10 + 18 * i
        lx = MARGIN_LEFT + pw + 16
        out.append(f'<rect x="{lx}" y="{ly - 5}" width="16" height="3" fill="{colour}"/>')
        out.append(f'<text x="{lx + 22}" y="{ly}">{escape(model)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot(source: Aggregation | str | Path, out_dir: str | Path, split: str = "test",
         mode: str = "filtered", metric: str = "mrr") -> list[Path]:
    """Write one ``<dataset>_<surface>.svg`` per dataset and surface in ``source``."""
    agg = source if isinstance(source, Aggregation) else aggregate(source)
    selected = [r for r in agg.rows if r.split == split and r.mode == mode]
    if not selected:
        log.warning("no rows for split=%s mode=%s; nothing plotted", split, mode)
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list[AggregateRow]] = defaultdict(list)
    for r in selected:
        groups[(r.dataset, r.surface)].append(r)
    written = []
    for (dataset, surface), rows in sorted(groups.items()):
        title = f"{dataset}: {SURFACE_TITLES.get(surface, surface)}"
        path = out_dir / f"{dataset}_{surface}.svg"
        path.write_text(render_svg(rows, title, metric), encoding="utf-8")
        written.append(path)
    return written
