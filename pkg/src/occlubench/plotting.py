"""CSV and SVG output for robustness results.

The CSV is the source of truth; the SVG line plot (with error bars) is
derived from the same numbers.  SVG markup is generated directly so output
bytes depend only on the data, never on timestamps or library versions.
Floats are serialized with repr, which round-trips exactly.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

from occlubench.metrics import MisclassDelta, RobustnessCurve

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory plus rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance_lines(provenance: Mapping[str, object] | None) -> str:
    if not provenance:
        return ""
    return "".join(f"# {key}: {value}\n" for key, value in sorted(provenance.items()))


def curves_csv(
    curves: Mapping[str, RobustnessCurve],
    provenance: Mapping[str, object] | None = None,
) -> str:
    """One row per (metric, model, fraction): mean, sample std, seed count."""
    out = [_provenance_lines(provenance)]
    out.append("metric,model,fraction,mean,std,n_seeds\n")
    for name in sorted(curves):
        curve = curves[name]
        for f, mean, std, n in zip(
            curve.fractions, curve.means, curve.stds, curve.n_seeds
        ):
            out.append(f"{curve.kind},{name},{f!r},{mean!r},{std!r},{n}\n")
    return "".join(out)


def misclass_csv(
    delta: MisclassDelta,
    model: str,
    provenance: Mapping[str, object] | None = None,
    class_names: Sequence[str] | None = None,
) -> str:
    out = [_provenance_lines(provenance)]
    out.append("model,class,class_name,delta\n")
    for c, d in enumerate(delta.deltas):
        name = class_names[c] if class_names else str(c)
        out.append(f"{model},{c},{name},{d}\n")
    return "".join(out)


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def curves_svg(
    curves: Mapping[str, RobustnessCurve],
    title: str,
    y_label: str,
    width: int = 640,
    height: int = 420,
) -> str:
    """Line plot with +-std error bars, one series per curve."""
    ml, mr, mt, mb = 60, 20, 36, 46
    pw, ph = width - ml - mr, height - mt - mb

    xs = sorted({f for c in curves.values() for f in c.fractions})
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.05, x_hi + 0.05
    ys: list[float] = []
    for c in curves.values():
        for m, s in zip(c.means, c.stds):
            ys.extend((m - s, m + s))
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x: float) -> float:
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return mt + (y_hi - y) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n',
        f'<rect width="{width}" height="{height}" fill="white"/>\n',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>\n',
    ]
    # axes
    parts.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        'stroke="black" stroke-width="1"/>\n'
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
        'stroke="black" stroke-width="1"/>\n'
    )
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{mt + ph}" x2="{_fmt(x)}" y2="{mt + ph + 5}" '
            'stroke="black" stroke-width="1"/>\n'
            f'<text x="{_fmt(x)}" y="{mt + ph + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{t:.2g}</text>\n'
        )
    for t in _ticks(y_lo, y_hi):
        y = py(t)
        parts.append(
            f'<line x1="{ml - 5}" y1="{_fmt(y)}" x2="{ml}" y2="{_fmt(y)}" '
            'stroke="black" stroke-width="1"/>\n'
            f'<text x="{ml - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{t:.3g}</text>\n'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.0f}" y="{height - 8}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">occlusion fraction</text>\n'
        f'<text x="16" y="{mt + ph / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {mt + ph / 2:.0f})">{y_label}</text>\n'
    )
    # series
    for i, name in enumerate(sorted(curves)):
        curve = curves[name]
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(
            f"{_fmt(px(f))},{_fmt(py(m))}" for f, m in zip(curve.fractions, curve.means)
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            'stroke-width="1.8"/>\n'
        )
        for f, m, s in zip(curve.fractions, curve.means, curve.stds):
            x, y = px(f), py(m)
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2.6" fill="{color}"/>\n'
            )
            if s > 0:
                y0, y1 = py(m - s), py(m + s)
                parts.append(
                    f'<line x1="{_fmt(x)}" y1="{_fmt(y0)}" x2="{_fmt(x)}" '
                    f'y2="{_fmt(y1)}" stroke="{color}" stroke-width="1"/>\n'
                    f'<line x1="{_fmt(x - 3)}" y1="{_fmt(y0)}" x2="{_fmt(x + 3)}" '
                    f'y2="{_fmt(y0)}" stroke="{color}" stroke-width="1"/>\n'
                    f'<line x1="{_fmt(x - 3)}" y1="{_fmt(y1)}" x2="{_fmt(x + 3)}" '
                    f'y2="{_fmt(y1)}" stroke="{color}" stroke-width="1"/>\n'
                )
        ly = mt + 14 + 16 * i
        parts.append(
            f'<line x1="{ml + pw - 130}" y1="{ly - 4}" x2="{ml + pw - 110}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.8"/>\n'
            f'<text x="{ml + pw - 104}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{name}</text>\n'
        )
    parts.append("</svg>\n")
    return "".join(parts)


def misclass_svg(
    delta: MisclassDelta,
    title: str,
    class_names: Sequence[str] | None = None,
    width: int = 640,
    height: int = 420,
) -> str:
    """Bar chart of per-class misclassification deltas."""
    ml, mr, mt, mb = 60, 20, 36, 60
    pw, ph = width - ml - mr, height - mt - mb
    n = len(delta.deltas)
    lo = min(0, min(delta.deltas))
    hi = max(0, max(delta.deltas))
    if hi == lo:
        hi = lo + 1

    def py(v: float) -> float:
        return mt + (hi - v) / (hi - lo) * ph

    bar_w = pw / max(n, 1) * 0.7
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n',
        f'<rect width="{width}" height="{height}" fill="white"/>\n',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>\n',
        f'<line x1="{ml}" y1="{_fmt(py(0))}" x2="{ml + pw}" y2="{_fmt(py(0))}" '
        'stroke="black" stroke-width="1"/>\n',
    ]
    for c, d in enumerate(delta.deltas):
        x = ml + pw * (c + 0.5) / n - bar_w / 2
        y0, y1 = py(max(d, 0)), py(min(d, 0))
        color = "#d62728" if d > 0 else "#1f77b4"
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y0)}" width="{_fmt(bar_w)}" '
            f'height="{_fmt(max(y1 - y0, 0.5))}" fill="{color}"/>\n'
        )
        name = class_names[c] if class_names else str(c)
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{height - 36}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{name}</text>\n'
            f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(py(d) + (14 if d < 0 else -5))}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">{d}</text>\n'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        'font-family="sans-serif" font-size="12">predicted class</text>\n'
        "</svg>\n"
    )
    return "".join(parts)
