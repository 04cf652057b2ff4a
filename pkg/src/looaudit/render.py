"""Byte-stable SVG plots and binary PPM rasters."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 480, 320
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 20, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    x1, y1 = WIDTH - MARGIN_R, HEIGHT - MARGIN_B
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{MARGIN_L}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{y1}" stroke="black"/>',
        f'<text x="{(MARGIN_L + x1) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{(MARGIN_T + y1) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN_T + y1) / 2:.2f})">{ylabel}</text>',
    ]


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    mag = 10 ** np.floor(np.log10(v))
    for step in (1, 2, 2.5, 5, 10):
        if v <= step * mag:
            return float(step * mag)
    return float(10 * mag)


def _yticks(lines: list[str], ymax: float) -> None:
    y1 = HEIGHT - MARGIN_B
    for j in range(5):
        val = ymax * j / 4
        py = y1 - (y1 - MARGIN_T) * j / 4
        lines.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(py)}" x2="{MARGIN_L}" y2="{_fmt(py)}" stroke="black"/>')
        lines.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(py + 4)}" text-anchor="end">{val:g}</text>'
        )


def confidence_plot_svg(curve, title: str = "Expected LUF by confidence") -> str:
    """Line plot: confidence threshold vs. percentage of points with LUF."""
    xs = [c for c, _, _ in curve]
    ys = [100.0 * v for _, v, _ in curve]
    ymax = _nice_max(max(ys) if ys else 0.0)
    xmax = max(xs[-1] + 0.1, 0.5) if xs else 0.5
    lines = _frame(title, "Confidence", "E_x[LUF(h,S,x)] (%)")
    _yticks(lines, ymax)
    x0, x1, y1 = MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B

    def px(x):
        return x0 + (x1 - x0) * x / xmax

    def py(y):
        return y1 - (y1 - MARGIN_T) * y / ymax

    for x in xs:
        lines.append(f'<text x="{_fmt(px(x))}" y="{y1 + 16}" text-anchor="middle">{x:g}</text>')
    if xs:
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="blue" stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            lines.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="blue"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def histogram_svg(histogram, title: str = "Points flipped per removed point") -> str:
    """Bar chart: per-removal flip percentage (x) vs. number of removed points (y)."""
    counts = [b["count"] for b in histogram]
    ymax = _nice_max(max(counts) if counts else 0)
    lines = _frame(title, "% Points Flipped", "Number of removed points")
    _yticks(lines, ymax)
    x0, x1, y1 = MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B
    nb = max(len(histogram), 1)
    bw = (x1 - x0) / nb
    for j, b in enumerate(histogram):
        h = (y1 - MARGIN_T) * b["count"] / ymax
        left = x0 + j * bw
        if b["count"]:
            lines.append(
                f'<rect x="{_fmt(left + 1)}" y="{_fmt(y1 - h)}" width="{_fmt(bw - 2)}" '
                f'height="{_fmt(h)}" fill="blue" fill-opacity="0.7"/>'
            )
        lines.append(
            f'<text x="{_fmt(left)}" y="{y1 + 16}" text-anchor="middle">{100 * b["lower"]:.3g}</text>'
        )
    if histogram:
        lines.append(
            f'<text x="{_fmt(x1)}" y="{y1 + 16}" text-anchor="middle">{100 * histogram[-1]["upper"]:.3g}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plots(report, output_dir) -> list[Path]:
    """Write ``confidence_curve.svg`` and ``flip_histogram.svg``; no-op on an empty report."""
    if report is None or not report.points:
        log.warning("empty report; no plots written")
        return []
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "confidence_curve.svg", out / "flip_histogram.svg"]
    paths[0].write_text(confidence_plot_svg(report.confidence_curve))
    paths[1].write_text(histogram_svg(report.flip_histogram))
    return paths


# ---------------------------------------------------------------------------
# rasters


def diverging_rgb(values: np.ndarray) -> np.ndarray:
    """Map values in ``[-1, 1]`` to blue (-1), white (0), red (+1)."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    pos, neg = np.clip(v, 0, 1), np.clip(-v, 0, 1)
    r = 255.0 * (1.0 - neg * 0.8)
    g = 255.0 * (1.0 - 0.8 * (pos + neg))
    b = 255.0 * (1.0 - pos * 0.8)
    return np.round(np.stack([r, g, b], axis=-1)).astype(np.uint8)


def ppm_bytes(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def write_ppm(path, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(ppm_bytes(rgb))
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def probability_rgb(prob: np.ndarray) -> np.ndarray:
    """Class-1 probability raster (row 0 at the top) on the diverging ramp."""
    return diverging_rgb(2.0 * np.asarray(prob) - 1.0)
