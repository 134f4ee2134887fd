"""MAPE scoring, grid summary rows, and forecast trace export (CSV + SVG).

MAPE is computed in physical kWh (forecasts are inverse-scaled before
scoring). Near-zero truth entries would blow the percentage up, so entries
with |truth| below a small floor are excluded and counted instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyInputError, SchemaError, ShapeError, UndefinedMetricError
from .models import MODEL_KINDS, MODEL_LABELS

__all__ = [
    "MAPE_FLOOR_KWH",
    "MapeResult",
    "mape",
    "SummaryRow",
    "summarize",
    "summary_label",
    "write_summary_csv",
    "read_summary_csv",
    "format_summary_table",
    "ForecastTrace",
    "export_trace_csv",
    "parse_trace_csv",
    "export_trace_svg",
]

MAPE_FLOOR_KWH = 1e-6

SUMMARY_CSV_HEADER = ["label", "mape_avg_percent", "total_train_seconds", "run_count"]


@dataclass(frozen=True)
class MapeResult:
    """MAPE percentage plus how many points were kept vs excluded."""

    percent: float
    used_count: int
    excluded_count: int


def mape(truth, pred, *, floor: float = MAPE_FLOOR_KWH) -> MapeResult:
    """100 * mean(|truth - pred| / |truth|) over entries with |truth| >= floor.

    Raises UndefinedMetricError when every entry falls below the floor.
    """
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.size == 0:
        raise EmptyInputError("mape needs at least one point")
    if truth.shape != pred.shape:
        raise ShapeError(f"mape lengths disagree: {truth.size} vs {pred.size}")
    keep = np.abs(truth) >= floor
    used = int(keep.sum())
    if used == 0:
        raise UndefinedMetricError(
            f"all {truth.size} truth values below {floor} kWh; MAPE undefined"
        )
    ratios = np.abs(truth[keep] - pred[keep]) / np.abs(truth[keep])
    return MapeResult(
        percent=float(100.0 * ratios.mean()),
        used_count=used,
        excluded_count=int(truth.size - used),
    )


@dataclass(frozen=True)
class SummaryRow:
    label: str
    mape_avg_percent: float
    total_train_seconds: float
    run_count: int


def summary_label(model_kind: str, n: int) -> str:
    return f"{MODEL_LABELS[model_kind]}-{n}TI"


def summarize(results: Sequence) -> list[SummaryRow]:
    """Aggregate per-run results into one row per (model, n) cell.

    Rows come out n-major (all models for the smallest n first) with
    models ordered Transformer, LSTM, RNN inside each block. MAPE is the
    arithmetic mean over the cell's runs; train time is summed.
    """
    if not results:
        raise EmptyInputError("summarize needs at least one result")
    groups: dict[tuple[int, str], list] = {}
    for r in results:
        if r.model_kind not in MODEL_KINDS:
            raise SchemaError(f"unknown model kind {r.model_kind!r} in results")
        groups.setdefault((r.n, r.model_kind), []).append(r)
    rows = []
    for n, kind in sorted(groups, key=lambda k: (k[0], MODEL_KINDS.index(k[1]))):
        cell = groups[(n, kind)]
        rows.append(SummaryRow(
            label=summary_label(kind, n),
            mape_avg_percent=float(np.mean([r.test_mape_percent for r in cell])),
            total_train_seconds=float(np.sum([r.train_seconds for r in cell])),
            run_count=len(cell),
        ))
    return rows


def write_summary_csv(rows: Sequence[SummaryRow], path, *, zero_timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_CSV_HEADER)
        for row in rows:
            seconds = 0.0 if zero_timing else row.total_train_seconds
            writer.writerow([
                row.label, repr(row.mape_avg_percent), repr(seconds), row.run_count,
            ])


def read_summary_csv(path) -> list[SummaryRow]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SUMMARY_CSV_HEADER:
            raise SchemaError(f"{path}: expected header {SUMMARY_CSV_HEADER}, got {header}")
        rows = [
            SummaryRow(row[0], float(row[1]), float(row[2]), int(row[3]))
            for row in reader
        ]
    if not rows:
        raise EmptyInputError(f"{path}: summary file has no rows")
    return rows


def format_summary_table(rows: Sequence[SummaryRow]) -> str:
    """Plain-text rendering for terminal output."""
    header = ("Model", "MAPE Avg.", "Total Train. Time [sec]", "Runs")
    body = [
        (r.label, f"{r.mape_avg_percent:.2f}%", f"{r.total_train_seconds:.3f}", str(r.run_count))
        for r in rows
    ]
    widths = [max(len(col), *(len(b[i]) for b in body)) for i, col in enumerate(header)]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(header), line(tuple("-" * w for w in widths))]
    out.extend(line(b) for b in body)
    return "\n".join(out)


@dataclass(frozen=True)
class ForecastTrace:
    """Truth and per-model forecasts for one house over aligned timestamps."""

    house_id: str
    timestamps: tuple[datetime, ...]
    truth_kwh: tuple[float, ...]
    forecasts: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.timestamps) == 0:
            raise EmptyInputError("trace needs at least one timestamp")
        if len(self.truth_kwh) != len(self.timestamps):
            raise ShapeError(
                f"truth length {len(self.truth_kwh)} != timestamps {len(self.timestamps)}"
            )
        for name, series in self.forecasts.items():
            if len(series) != len(self.timestamps):
                raise ShapeError(
                    f"series {name!r} length {len(series)} != timestamps {len(self.timestamps)}"
                )

    def series_names(self) -> list[str]:
        """Column order: Truth first, then models in canonical order, then extras."""
        names = ["Truth"]
        for kind in MODEL_KINDS:
            label = MODEL_LABELS[kind]
            if label in self.forecasts:
                names.append(label)
        for name in self.forecasts:
            if name not in names:
                names.append(name)
        return names

    def series_values(self, name: str) -> tuple[float, ...]:
        if name == "Truth":
            return self.truth_kwh
        return tuple(self.forecasts[name])


def export_trace_csv(trace: ForecastTrace, path) -> None:
    names = trace.series_names()
    columns = {name: trace.series_values(name) for name in names}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp"] + names)
        for i, ts in enumerate(trace.timestamps):
            writer.writerow([ts.isoformat()] + [repr(columns[name][i]) for name in names])


def parse_trace_csv(path, *, house_id: str = "") -> ForecastTrace:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or "Truth" not in header[1:]:
            raise SchemaError(f"{path}: expected 'timestamp' plus a 'Truth' column, got {header}")
        names = header[1:]
        timestamps = []
        columns: dict[str, list[float]] = {name: [] for name in names}
        for row in reader:
            if len(row) != len(header):
                raise SchemaError(f"{path}: row has {len(row)} fields, expected {len(header)}")
            timestamps.append(datetime.fromisoformat(row[0]))
            for name, value in zip(names, row[1:]):
                columns[name].append(float(value))
    if not timestamps:
        raise EmptyInputError(f"{path}: trace file has no rows")
    return ForecastTrace(
        house_id=house_id,
        timestamps=tuple(timestamps),
        truth_kwh=tuple(columns["Truth"]),
        forecasts={name: tuple(vals) for name, vals in columns.items() if name != "Truth"},
    )


# Fixed palette: Truth, then one color per model curve in canonical order.
_SVG_COLORS = ("#1b1b1b", "#c0392b", "#2471a3", "#1e8449", "#9b59b6", "#d68910")

_SVG_WIDTH = 900
_SVG_HEIGHT = 420
_SVG_MARGIN_LEFT = 64
_SVG_MARGIN_RIGHT = 160
_SVG_MARGIN_TOP = 28
_SVG_MARGIN_BOTTOM = 48


def _svg_coords(xs: np.ndarray, ys: np.ndarray, y_lo: float, y_hi: float) -> str:
    """Map data points into the plot rectangle; returns a polyline points string."""
    plot_w = _SVG_WIDTH - _SVG_MARGIN_LEFT - _SVG_MARGIN_RIGHT
    plot_h = _SVG_HEIGHT - _SVG_MARGIN_TOP - _SVG_MARGIN_BOTTOM
    x_span = xs[-1] - xs[0] if xs[-1] > xs[0] else 1.0
    y_span = y_hi - y_lo if y_hi > y_lo else 1.0
    pts = []
    for x, y in zip(xs, ys):
        px = _SVG_MARGIN_LEFT + (x - xs[0]) / x_span * plot_w
        py = _SVG_MARGIN_TOP + (1.0 - (y - y_lo) / y_span) * plot_h
        pts.append(f"{px:.2f},{py:.2f}")
    return " ".join(pts)


def export_trace_svg(trace: ForecastTrace, path, *, title: Optional[str] = None) -> None:
    """Deterministic line chart: one polyline per series, legend, kWh axis."""
    names = trace.series_names()
    xs = np.array([ts.timestamp() for ts in trace.timestamps], dtype=np.float64)
    all_vals = np.concatenate([np.asarray(trace.series_values(n)) for n in names])
    y_lo = float(min(0.0, all_vals.min()))
    y_hi = float(all_vals.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    if title is None:
        title = f"Forecast for house {trace.house_id}" if trace.house_id else "Forecast"
    x0, x1 = _SVG_MARGIN_LEFT, _SVG_WIDTH - _SVG_MARGIN_RIGHT
    y0, y1 = _SVG_MARGIN_TOP, _SVG_HEIGHT - _SVG_MARGIN_BOTTOM
    first_label = trace.timestamps[0].strftime("%Y-%m-%d %H:%M")
    last_label = trace.timestamps[-1].strftime("%Y-%m-%d %H:%M")

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" '
        f'viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{_SVG_WIDTH}" height="{_SVG_HEIGHT}" fill="white"/>',
        f'<text x="{(x0 + x1) / 2:.0f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        # Axes.
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black" stroke-width="1"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black" stroke-width="1"/>',
        f'<text x="{x0}" y="{y1 + 18}" font-family="sans-serif" font-size="11">{first_label}</text>',
        f'<text x="{x1}" y="{y1 + 18}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{last_label}</text>',
        f'<text x="{x0 - 8}" y="{y0 + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{y_hi:.2f}</text>',
        f'<text x="{x0 - 8}" y="{y1 + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{y_lo:.2f}</text>',
        f'<text x="16" y="{(y0 + y1) / 2:.0f}" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.0f})" text-anchor="middle">kWh</text>',
    ]
    for i, name in enumerate(names):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        ys = np.asarray(trace.series_values(name), dtype=np.float64)
        points = _svg_coords(xs, ys, y_lo, y_hi)
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        # Legend swatch + label down the right margin.
        ly = y0 + 16 + i * 20
        parts.append(
            f'<rect x="{x1 + 14}" y="{ly - 9}" width="12" height="12" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{x1 + 32}" y="{ly + 2}" font-family="sans-serif" '
            f'font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
