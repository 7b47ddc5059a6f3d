"""Deterministic CSV / JSON / SVG writers."""
from __future__ import annotations

import csv
import json
import os
from enum import Enum

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, Enum):
        return str(x.value)
    return str(x)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def complex_rows(values, value=None):
    """``(re, im, value)`` rows; ``value`` may be a scalar, an array or ``None``."""
    v = np.asarray(values, dtype=complex).ravel()
    if value is None:
        return [(z.real, z.imag) for z in v]
    vals = np.broadcast_to(np.asarray(value, dtype=float), v.shape)
    return [(z.real, z.imag, w) for z, w in zip(v, vals)]


def write_points(path, values, value=None):
    header = ["re", "im"] if value is None else ["re", "im", "value"]
    return write_csv(path, header, complex_rows(values, value))


def write_rings(path, rings):
    """Boundary rings as ``(re, im, value)`` where ``value`` is the ring index."""
    rows = []
    for k, ring in enumerate(rings):
        rows += complex_rows(ring, float(k))
    return write_csv(path, ["re", "im", "value"], rows)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Enum):
        return o.value
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    return path


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_default)


class Svg:
    """Static scatter/polyline/raster figure in data coordinates."""

    def __init__(self, xlim, ylim, width=480, height=480, pad=30):
        self.xlim, self.ylim = tuple(map(float, xlim)), tuple(map(float, ylim))
        self.w, self.h, self.pad = width, height, pad
        self.items = []

    def _x(self, x):
        a, b = self.xlim
        return self.pad + (np.asarray(x) - a) / (b - a) * (self.w - 2 * self.pad)

    def _y(self, y):
        a, b = self.ylim
        return self.h - self.pad - (np.asarray(y) - a) / (b - a) * (self.h - 2 * self.pad)

    def scatter(self, z, r=1.5, color="black"):
        z = np.asarray(z, dtype=complex).ravel()
        for x, y in zip(self._x(z.real), self._y(z.imag)):
            self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="none" stroke="{color}" stroke-width="0.6"/>')
        return self

    def polyline(self, z, color="red", width=1.2, dash=None):
        z = np.asarray(z, dtype=complex).ravel()
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(self._x(z.real), self._y(z.imag)))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')
        return self

    def raster(self, xs, ys, codes, palette):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        dx = (xs[1] - xs[0]) if xs.size > 1 else 1.0
        dy = (ys[1] - ys[0]) if ys.size > 1 else 1.0
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                x0, x1 = self._x([x - dx / 2, x + dx / 2])
                y0, y1 = self._y([y + dy / 2, y - dy / 2])
                col = palette[int(codes[i][j])]
                self.items.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
                                  f'height="{y1 - y0:.2f}" fill="{col}" stroke="none"/>')
        return self

    def text(self, x, y, s, size=11):
        self.items.append(f'<text x="{self._x(x):.2f}" y="{self._y(y):.2f}" font-size="{size}">{s}</text>')
        return self

    def render(self) -> str:
        frame = (f'<rect x="{self.pad}" y="{self.pad}" width="{self.w - 2 * self.pad}" '
                 f'height="{self.h - 2 * self.pad}" fill="none" stroke="gray"/>')
        body = "\n".join([frame] + self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n{body}\n</svg>\n')

    def save(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(self.render())
        return path
