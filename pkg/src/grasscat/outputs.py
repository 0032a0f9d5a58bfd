"""Deterministic CSV and SVG emitters.

All numeric output is formatted with 17 significant digits (full float64
round trip), lines end with LF, and nothing depends on wall-clock time, so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .errors import DataError


def fmt_float(x: float) -> str:
    """17-significant-digit decimal form, stable across runs."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{float(x):.17g}"


def _csv_cell(value) -> str:
    if isinstance(value, float):
        text = fmt_float(value)
    else:
        text = str(value)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """RFC-4180 cells, LF line endings."""
    lines = [",".join(_csv_cell(c) for c in header)]
    lines.extend(",".join(_csv_cell(c) for c in row) for row in rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


class SvgCanvas:
    """Minimal SVG assembly with fixed-precision coordinates."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self._parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        ]

    @staticmethod
    def _f(x: float) -> str:
        return f"{x:.2f}"

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0, dash: str | None = None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self._parts.append(
            f'<line x1="{self._f(x1)}" y1="{self._f(y1)}" x2="{self._f(x2)}" '
            f'y2="{self._f(y2)}" stroke="{stroke}" stroke-width="{width}"{d}/>'
        )

    def circle(self, cx, cy, r, fill="steelblue", opacity=0.6):
        self._parts.append(
            f'<circle cx="{self._f(cx)}" cy="{self._f(cy)}" r="{self._f(r)}" '
            f'fill="{fill}" fill-opacity="{opacity}"/>'
        )

    def polygon(self, points: Sequence[tuple[float, float]], fill="crimson"):
        pts = " ".join(f"{self._f(x)},{self._f(y)}" for x, y in points)
        self._parts.append(f'<polygon points="{pts}" fill="{fill}"/>')

    def text(self, x, y, content: str, size=12, anchor="start", rotate: float | None = None,
             fill="black"):
        transform = (
            f' transform="rotate({self._f(rotate)} {self._f(x)} {self._f(y)})"'
            if rotate is not None
            else ""
        )
        safe = (
            content.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        )
        self._parts.append(
            f'<text x="{self._f(x)}" y="{self._f(y)}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}" fill="{fill}"{transform}>'
            f"{safe}</text>"
        )

    def save(self, path: str) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write("\n".join(self._parts) + "\n</svg>\n")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
