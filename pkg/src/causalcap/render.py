"""Byte-deterministic images: P6 pixmaps for maps, SVG line charts for curves."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import BadInput

WALL = (0, 0, 0)
MISSING = (128, 128, 128)
ANCHOR = (255, 255, 255)
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195), (128, 128, 0), (255, 215, 180),
]
SERIES = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def ramp(t: float) -> tuple:
    """Blue (low) to red (high); the red channel grows strictly with ``t``."""
    t = min(1.0, max(0.0, float(t)))
    return round(255 * t), round(80 * (1 - abs(2 * t - 1))), round(255 * (1 - t))


def write_ppm(path, pixels: np.ndarray) -> None:
    img = np.ascontiguousarray(pixels, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise BadInput("pixmap must be (height, width, 3)")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise BadInput("not a binary P6 pixmap with max value 255")
    w, h = int(parts[1]), int(parts[2])
    body = parts[4]
    if len(body) != w * h * 3:
        raise BadInput("pixmap size does not match its header")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3)


def _cell_grid(maze, color_of, scale: int) -> np.ndarray:
    """One ``scale`` x ``scale`` block per maze cell; ``color_of(cell)`` gives free-cell colors."""
    img = np.zeros((maze.height * scale, maze.width * scale, 3), dtype=np.uint8)
    for r in range(maze.height):
        for c in range(maze.width):
            col = color_of((r, c)) if maze.is_free((r, c)) else WALL
            img[r * scale:(r + 1) * scale, c * scale:(c + 1) * scale] = col
    return img


def _point_grid(env, color_of, px_per_unit: int) -> np.ndarray:
    """Continuous maps: every pixel looks up the bin key under its centre."""
    h_world = env.maze.height * env.cell_size
    w_world = env.maze.width * env.cell_size
    hp, wp = math.ceil(h_world * px_per_unit), math.ceil(w_world * px_per_unit)
    img = np.zeros((hp, wp, 3), dtype=np.uint8)
    for i in range(hp):
        y = (i + 0.5) / px_per_unit
        for j in range(wp):
            x = (j + 0.5) / px_per_unit
            img[i, j] = color_of(env.key((x, y))) if env.is_free((x, y)) else WALL
    return img


def _values_to_colors(values: dict):
    vals = np.array(list(values.values()), dtype=np.float64)
    lo, hi = (float(vals.min()), float(vals.max())) if len(vals) else (0.0, 0.0)
    span = hi - lo

    def color(key):
        if key not in values:
            return MISSING
        return ramp((values[key] - lo) / span if span > 0 else 0.0)

    return color


def render_values(path, values: dict, env, scale: int = 16) -> np.ndarray:
    """Heatmap of a ``key -> value`` map over the maze."""
    color = _values_to_colors(values)
    img = _cell_grid(env.maze, color, scale) if env.kind == "discrete" else _point_grid(env, color, scale)
    write_ppm(path, img)
    return img


def render_capacity(path, cmap, env, scale: int = 16) -> np.ndarray:
    if len(cmap) == 0:
        raise BadInput("empty capacity map")
    return render_values(path, {k: e.capacity for k, e in cmap.entries.items()}, env, scale)


def render_potential(path, field, maze, scale: int = 16) -> np.ndarray:
    """Potential heatmap; fields are defined per maze cell for both state kinds."""
    values = dict(zip(map(tuple, field.cells), field.phi.tolist()))
    img = _cell_grid(maze, _values_to_colors(values), scale)
    write_ppm(path, img)
    return img


def render_regions(path, graph, env, scale: int = 16) -> np.ndarray:
    """Categorical region map with a white square on every subgoal anchor."""
    def color(key):
        rid = graph.regions.get(key)
        return MISSING if rid is None else PALETTE[rid % len(PALETTE)]

    if env.kind == "discrete":
        img = _cell_grid(env.maze, color, scale)
        px = [((a[0] + 0.5) * scale, (a[1] + 0.5) * scale) for a in graph.subgoals.anchors]
    else:
        img = _point_grid(env, color, scale)
        px = [(a[1] * scale, a[0] * scale) for a in graph.subgoals.anchors]
    half = max(1, scale // 4)
    for pr_, pc in px:
        r0, c0 = int(pr_) - half, int(pc) - half
        img[max(0, r0):r0 + 2 * half, max(0, c0):c0 + 2 * half] = ANCHOR
    write_ppm(path, img)
    return img


def render_curves(path, curves: dict, width: int = 640, height: int = 400) -> str:
    """SVG line chart of ``label -> [(episode, success_rate), ...]``."""
    if not curves or not any(curves.values()):
        raise BadInput("no curve points to draw")
    pad = 50
    x_max = max(ep for c in curves.values() for ep, _ in c) or 1
    sx = (width - 2 * pad) / x_max
    sy = height - 2 * pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">episode</text>',
           f'<text x="12" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 12 {height / 2:.1f})" '
           f'text-anchor="middle">success rate</text>']
    for tick in (0.0, 0.5, 1.0):
        y = height - pad - tick * sy
        out.append(f'<text x="{pad - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{tick:g}</text>')
    out.append(f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" font-size="10">{x_max}</text>')
    for i, (label, pts) in enumerate(curves.items()):
        stroke = SERIES[i % len(SERIES)]
        coords = " ".join(f"{pad + ep * sx:.2f},{height - pad - rate * sy:.2f}" for ep, rate in pts)
        out.append(f'<polyline fill="none" stroke="{stroke}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{pad + 8}" y="{pad + 12 + 14 * i}" font-size="10" fill="{stroke}">{label}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    Path(path).write_text(text)
    return text
