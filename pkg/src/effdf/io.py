"""Serialization of experiment rows: CSV, JSON and an SVG heatmap.

Floats are written with 17 significant digits, which round-trips every
double exactly, so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np

from .errors import IncompleteGrid

SCHEMA_VERSION = 1

JSON_SCHEMA = {
    "type": "object",
    "required": ["metadata", "rows"],
    "properties": {
        "metadata": {
            "type": "object",
            "required": ["command", "seed", "replicates", "version", "schema"],
            "properties": {
                "command": {"type": "string"},
                "seed": {"type": "integer"},
                "replicates": {"type": "integer", "minimum": 2},
                "version": {"type": "string"},
                "schema": {"type": "integer"},
                "timestamp": {"type": "string"},
            },
        },
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["df", "se", "oracle", "z_vs_oracle", "wallclock_s"],
                "properties": {
                    "df": {"type": "number"},
                    "se": {"type": "number", "minimum": 0},
                    "oracle": {"type": ["number", "null"]},
                    "z_vs_oracle": {"type": ["number", "null"]},
                    "wallclock_s": {"type": ["number", "null"]},
                },
            },
        },
    },
}


def version_string() -> str:
    from . import __version__
    return f"v{__version__}"


def row_records(rows, timing: bool = True) -> list:
    """Flatten rows into ordered dicts with a fixed column order.

    Columns: sweep parameters, ``df``, ``se``, optimism columns when both
    estimators ran, ``oracle``, ``z_vs_oracle``, driver extras, ``wallclock_s``.
    ``timing=False`` blanks the wallclock column so output is reproducible.
    """
    if not rows:
        raise ValueError("no rows to write")
    out = []
    for r in rows:
        rec = dict(r.point)
        e = r.primary
        rec["df"] = e.value
        rec["se"] = e.std_error
        if isinstance(r.df, tuple):
            rec["df_opt"] = r.df[1].value
            rec["se_opt"] = r.df[1].std_error
        rec["oracle"] = r.oracle
        rec["z_vs_oracle"] = r.z
        rec.update(r.extras)
        rec["wallclock_s"] = r.wallclock if timing else None
        out.append(rec)
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(records) -> str:
    header = list(records[0])
    for rec in records[1:]:
        if list(rec) != header:
            raise ValueError("rows have inconsistent columns")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([_cell(rec[c]) for c in header] for rec in records)
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def format_json(records, metadata: dict) -> str:
    doc = {
        "metadata": metadata,
        "rows": [{k: _json_value(v) for k, v in rec.items()} for rec in records],
    }
    # repr of a float is the shortest string that round-trips
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def build_metadata(command: str, seed: int, replicates: int, timestamp: bool = True,
                   **extra) -> dict:
    meta = {"command": command, "seed": int(seed), "replicates": int(replicates),
            "version": version_string(), "schema": SCHEMA_VERSION}
    meta.update(extra)
    if timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return meta


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file; ``-`` means stdout."""
    if str(path) == "-":
        sys.stdout.write(text)
        return
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_rows(rows, fmt: str = "csv", metadata: dict | None = None,
                timing: bool = True) -> str:
    records = row_records(rows, timing)
    if fmt == "csv":
        return format_csv(records)
    if fmt == "json":
        return format_json(records, metadata or {})
    raise ValueError(f"unknown format {fmt!r}")


def write_rows(rows, path, fmt: str = "csv", metadata: dict | None = None,
               timing: bool = True):
    atomic_write(path, format_rows(rows, fmt, metadata, timing))


def read_csv(path) -> list:
    """Parse a CSV written by :func:`write_rows`; numeric cells become floats."""
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    header = lines[0]
    out = []
    for line in lines[1:]:
        rec = {}
        for k, v in zip(header, line):
            if v == "":
                rec[k] = None
            else:
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
        out.append(rec)
    return out


# --------------------------------------------------------------------------
# SVG heatmap.

_CELL = 12
_MARGIN_LEFT = 60
_MARGIN_TOP = 20
_MARGIN_BOTTOM = 50
_LEGEND_W = 90

# viridis-like anchors, interpolated linearly
_COLORS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def _color(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_COLORS) - 1)
    i = min(int(t), len(_COLORS) - 2)
    c = _COLORS[i] + (t - i) * (_COLORS[i + 1] - _COLORS[i])
    return "#%02x%02x%02x" % tuple(int(round(x)) for x in c)


def _grid(rows):
    xs = sorted({r.point["mu1"] for r in rows})
    ys = sorted({r.point["mu2"] for r in rows})
    values = {}
    for r in rows:
        key = (r.point["mu1"], r.point["mu2"])
        if key in values:
            raise IncompleteGrid(f"duplicate grid point {key}")
        values[key] = r.primary.value
    if len(values) != len(xs) * len(ys):
        raise IncompleteGrid(f"{len(values)} points do not fill a {len(xs)} x {len(ys)} grid")
    return xs, ys, values


def legend_ticks(vmin: float, vmax: float, count: int = 5) -> list:
    """Integer ticks when the range covers at least two units, else ``count`` even ticks."""
    if vmax == vmin:
        return [vmin] * count
    if vmax - vmin >= 2:
        return [float(v) for v in range(math.ceil(vmin), math.floor(vmax) + 1)]
    return [vmin + (vmax - vmin) * i / (count - 1) for i in range(count)]


def render_heatmap_svg(rows, path=None, ticks: int = 5) -> str:
    """Heatmap of DF over (mu1, mu2); returns the SVG text and writes it if ``path``."""
    if not rows:
        raise IncompleteGrid("no rows")
    xs, ys, values = _grid(rows)
    vmin, vmax = min(values.values()), max(values.values())
    span = vmax - vmin
    W = _MARGIN_LEFT + _CELL * len(xs) + _LEGEND_W
    H = _MARGIN_TOP + _CELL * len(ys) + _MARGIN_BOTTOM
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        '<g id="cells">',
    ]
    for j, y in enumerate(reversed(ys)):
        for i, x in enumerate(xs):
            v = values[(x, y)]
            t = (v - vmin) / span if span > 0 else 0.0
            out.append(f'<rect class="cell" x="{_MARGIN_LEFT + i * _CELL}" y="{_MARGIN_TOP + j * _CELL}" '
                       f'width="{_CELL}" height="{_CELL}" fill="{_color(t)}" data-df="{v!r}">'
                       f'<title>mu=({x:g}, {y:g}) df={v:.4g}</title></rect>')
    out.append("</g>")
    gw, gh = _CELL * len(xs), _CELL * len(ys)
    out.append(f'<text x="{_MARGIN_LEFT + gw / 2}" y="{_MARGIN_TOP + gh + 35}" text-anchor="middle">μ₁</text>')
    out.append(f'<text x="15" y="{_MARGIN_TOP + gh / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {_MARGIN_TOP + gh / 2})">μ₂</text>')
    out.append(f'<text x="{_MARGIN_LEFT}" y="{_MARGIN_TOP + gh + 15}" text-anchor="start">{xs[0]:g}</text>')
    out.append(f'<text x="{_MARGIN_LEFT + gw}" y="{_MARGIN_TOP + gh + 15}" text-anchor="end">{xs[-1]:g}</text>')
    out.append(f'<text x="{_MARGIN_LEFT - 5}" y="{_MARGIN_TOP + gh}" text-anchor="end">{ys[0]:g}</text>')
    out.append(f'<text x="{_MARGIN_LEFT - 5}" y="{_MARGIN_TOP + 10}" text-anchor="end">{ys[-1]:g}</text>')
    # legend: vertical bar with ticks
    lx = _MARGIN_LEFT + gw + 20
    steps = 50
    out.append('<g id="legend">')
    for s in range(steps):
        t = 1.0 - s / (steps - 1)
        out.append(f'<rect x="{lx}" y="{_MARGIN_TOP + s * gh / steps:.3f}" width="15" '
                   f'height="{gh / steps + 0.5:.3f}" fill="{_color(t)}"/>')
    for v in legend_ticks(vmin, vmax, ticks):
        frac = (v - vmin) / span if span > 0 else 0.0
        ty = _MARGIN_TOP + gh * (1.0 - frac)
        out.append(f'<line class="tick" data-value="{v!r}" x1="{lx + 15}" y1="{ty:.3f}" x2="{lx + 20}" y2="{ty:.3f}" stroke="black"/>')
        out.append(f'<text class="tick-label" x="{lx + 23}" y="{ty + 4:.3f}">{v:.3g}</text>')
    out.append(f'<text x="{lx}" y="{_MARGIN_TOP - 6}">DF</text>')
    out.append("</g>")
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        atomic_write(path, text)
    return text
