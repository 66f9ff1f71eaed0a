"""Learning-curve SVG emission with no plotting dependency."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import UsageError

log = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 190, 30, 60


@dataclass
class Series:
    name: str
    points: list = field(default_factory=list)  # (frames, win_rate)
    bad_lines: int = 0


def run_name(path: Path) -> str:
    path = Path(path)
    if path.name == "metrics.jsonl" and path.parent.name:
        parent = path.parent
        if parent.name.startswith("seed_") and parent.parent.name:
            return f"{parent.parent.name}/{parent.name}"
        return parent.name
    return path.stem


def read_series(path) -> Series:
    path = Path(path)
    series = Series(run_name(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                point = (float(rec["frames"]), float(rec["win_rate"]))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping malformed line (%s)", path, lineno, exc)
                series.bad_lines += 1
                continue
            series.points.append(point)
    return series


def _nice_ticks(upper: float, n: int = 5) -> list[float]:
    if upper <= 0:
        return [0.0]
    raw = upper / n
    mag = 10 ** len(str(int(raw))) / 10 if raw >= 1 else 1
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    ticks, v = [], 0.0
    while v <= upper + 1e-9:
        ticks.append(v)
        v += step
    return ticks


def _frames_label(v: float) -> str:
    if v >= 1e6:
        return f"{v / 1e6:g}M"
    if v >= 1e3:
        return f"{v / 1e3:g}K"
    return f"{v:g}"


def render_svg(series: list[Series], budget: float | None = None, title: str = "Win rate") -> str:
    """One polyline per series; x spans [0, budget], y spans [0, 1]."""
    if not series:
        raise UsageError("nothing to plot")
    if budget is None:
        budget = max((p[0] for s in series for p in s.points), default=0.0)
    budget = budget or 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + pw * min(max(x, 0.0), budget) / budget

    def sy(y):
        return TOP + ph * (1.0 - min(max(y, 0.0), 1.0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + pw / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<g id="axes" stroke="black" data-xmin="0" data-xmax="{budget:g}" data-ymin="0" data-ymax="1">',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/>',
        "</g>",
    ]
    for t in _nice_ticks(budget):
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{TOP + ph}" x2="{x:.1f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{TOP + ph + 18}" text-anchor="middle">{_frames_label(t)}</text>')
    for i in range(6):
        v = i / 5
        y = sy(v)
        out.append(f'<line x1="{LEFT - 5}" y1="{y:.1f}" x2="{LEFT + pw}" y2="{y:.1f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 15}" text-anchor="middle">frames</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2})">win rate</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(s.points))
        out.append(f'<polyline class="series" data-name="{escape(s.name)}" fill="none" stroke="{color}" '
                   f'stroke-width="2" points="{pts}"/>')
        ly = TOP + 10 + 18 * i
        lx = LEFT + pw + 15
        out.append(f'<g class="legend"><line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/><text x="{lx + 26}" y="{ly + 4}">{escape(s.name)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
