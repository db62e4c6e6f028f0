"""CSV serialization of traces, median/IQR aggregation and plain SVG charts.

Every CSV starts with a ``# schema: <name>/<version>`` line followed by a
header row.  Floats are written with ``repr``-exact scientific notation
(``%.17e``, lowercase ``e``, ``.`` decimal point) independent of locale.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .metrics import TRACE_COLUMNS

__all__ = [
    "TRACE_SCHEMA",
    "RUNS_SCHEMA",
    "AGGREGATE_SCHEMA",
    "RUN_KEY_COLUMNS",
    "format_value",
    "write_csv",
    "read_csv",
    "trace_rows",
    "aggregate",
    "aggregate_columns",
    "svg_line_chart",
]

TRACE_SCHEMA = "srot-trace/1"
RUNS_SCHEMA = "srot-runs/1"
AGGREGATE_SCHEMA = "srot-aggregate/1"

RUN_KEY_COLUMNS = ("run", "label", "lambda", "seed")
METRIC_COLUMNS = TRACE_COLUMNS[1:]


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17e}"
    return str(x)


def write_csv(path, schema, columns, rows):
    """Write ``rows`` (sequences matching ``columns``) with a schema line."""
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    """Return ``(schema, columns, rows)``; values are left as strings."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# schema:"):
        raise ValueError(f"{path}: missing schema line")
    schema = lines[0].split(":", 1)[1].strip()
    reader = csv.reader(lines[1:])
    columns = next(reader)
    return schema, columns, [row for row in reader]


def trace_rows(trace, zero_time=False):
    """Trace records as tuples in ``TRACE_COLUMNS`` order."""
    rows = []
    for rec in trace.records:
        row = list(rec.as_row())
        if zero_time:
            row[1] = 0.0
        rows.append(tuple(row))
    return rows


def aggregate_columns():
    cols = ["label", "lambda", "epoch", "runs"]
    for name in METRIC_COLUMNS:
        cols += [f"{name}_median", f"{name}_q25", f"{name}_q75"]
    return cols


def _quantiles(values):
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return float(med), float(q25), float(q75)


def aggregate(runs):
    """Median and interquartile range per configuration and epoch.

    ``runs`` is an iterable of ``(label, lam, records)`` where ``records`` is a
    list of dicts keyed by ``TRACE_COLUMNS``.  At every epoch recorded by any
    run of a configuration, runs that stopped earlier contribute their last
    record, so the statistics always cover all runs.
    """
    groups = defaultdict(list)
    for label, lam, records in runs:
        groups[(label, float(lam))].append(sorted(records, key=lambda r: r["epoch"]))
    rows = []
    for (label, lam) in sorted(groups, key=lambda k: (k[0], k[1])):
        traces = [t for t in groups[(label, lam)] if t]
        epochs = sorted({r["epoch"] for t in traces for r in t})
        pos = [0] * len(traces)
        for e in epochs:
            current = []
            for idx, t in enumerate(traces):
                while pos[idx] + 1 < len(t) and t[pos[idx] + 1]["epoch"] <= e:
                    pos[idx] += 1
                if t[pos[idx]]["epoch"] <= e:
                    current.append(t[pos[idx]])
            row = [label, lam, e, len(current)]
            for name in METRIC_COLUMNS:
                row += list(_quantiles([float(r[name]) for r in current]))
            rows.append(row)
    return rows


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
            "#8c564b", "#e377c2")


def svg_line_chart(series, title, xlabel, ylabel, log_y=False, width=640, height=400):
    """Minimal SVG line chart.

    ``series`` maps a legend name to ``(x, y, lo, hi)``; ``lo``/``hi`` may be
    None, otherwise a shaded band is drawn between them.  Non-positive values
    are skipped on a log axis.
    """
    left, right, top, bottom = 70, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def tf(v):
        return math.log10(v) if log_y else v

    def ok(v):
        return math.isfinite(v) and (v > 0 or not log_y)

    xs, ys = [], []
    for x, y, lo, hi in series.values():
        for arr in (y, lo, hi):
            if arr is None:
                continue
            for xi, yi in zip(x, arr):
                if ok(yi):
                    xs.append(xi)
                    ys.append(tf(yi))
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (tf(y) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" '
           f'font-size="14">{_esc(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
           f'stroke="#444"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y0 + frac * (y1 - y0)
        ypix = top + ph - frac * ph
        label = f"1e{yv:.1f}" if log_y else f"{yv:.3g}"
        out.append(f'<text x="{left - 6}" y="{ypix + 4:.1f}" text-anchor="end">{label}</text>')
        xv = x0 + frac * (x1 - x0)
        out.append(f'<text x="{left + frac * pw:.1f}" y="{top + ph + 18}" '
                   f'text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" '
               f'text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for idx, (name, (x, y, lo, hi)) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        if lo is not None and hi is not None:
            pts = [(xi, v) for xi, v in zip(x, hi) if ok(v)]
            pts += [(xi, v) for xi, v in reversed(list(zip(x, lo))) if ok(v)]
            if len(pts) > 2:
                poly = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
                out.append(f'<polygon points="{poly}" fill="{color}" '
                           f'fill-opacity="0.15" stroke="none"/>')
        pts = [(xi, v) for xi, v in zip(x, y) if ok(v)]
        if pts:
            line = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in pts)
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"/>')
        ly = top + 14 + 18 * idx
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
