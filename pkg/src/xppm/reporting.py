"""Offline heatmaps and online explanation tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .event_log import ACTIVITY_OCCURRENCE, REMAINING_TIME
from .explainer import EQUALS, NOT_EQUALS, ExplanationRecord

DEFAULT_WINDOW = 5
DEFAULT_TOP_ROWS = 30
DEFAULT_TOP_K = 2

ONLINE_COLUMNS = ["CASE_ID", "PREDICTION", "INCREASING", "DECREASING"]


def explanation_label(record: ExplanationRecord, medians: Optional[Mapping[str, float]] = None) -> str:
    """``attr=value``, ``attr!=value``, or ``Low/High value of attr`` for
    numeric features (split at the training median)."""
    if record.relation == EQUALS:
        return f"{record.attribute}={record.value}"
    if record.relation == NOT_EQUALS:
        return f"{record.attribute}!={record.value}"
    med = (medians or {}).get(record.attribute)
    if med is None or record.instance_value is None:
        return f"Value of {record.attribute}"
    level = "Low" if record.instance_value < med else "High"
    return f"{level} value of {record.attribute}"


@dataclass
class HeatmapMatrix:
    rows: list
    offsets: list
    cells: np.ndarray
    kpi_name: str = ""
    prefix_count: int = 0

    @property
    def window(self) -> int:
        return len(self.offsets)

    def cell(self, label: str, offset: int) -> int:
        return int(self.cells[self.rows.index(label), self.offsets.index(offset)])

    @property
    def max_abs(self) -> int:
        return int(np.abs(self.cells).max()) if self.cells.size else 0


def aggregate_heatmap(
    per_prefix: Sequence[Sequence[ExplanationRecord]],
    window: int = DEFAULT_WINDOW,
    medians: Optional[Mapping[str, float]] = None,
    top_rows: Optional[int] = DEFAULT_TOP_ROWS,
    kpi_name: str = "",
) -> HeatmapMatrix:
    """Net count of prefixes per (explanation label, offset).

    Each prefix adds +1 or -1 to a cell, by the sign of the summed weight
    of its records with that label and offset.  Offsets older than
    ``-(window-1)`` are ignored.  Rows are ordered by decreasing peak
    magnitude (ties by label) and cut to ``top_rows``.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    offsets = [-t for t in range(window)]
    counts: dict = {}
    for records in per_prefix:
        sums: dict = {}
        for r in records:
            if r.timestep_offset <= -window:
                continue
            key = (explanation_label(r, medians), -r.timestep_offset)
            sums[key] = sums.get(key, 0.0) + r.weight
        for (lab, col), s in sums.items():
            if s == 0:
                continue
            row = counts.setdefault(lab, np.zeros(window, dtype=np.int64))
            row[col] += 1 if s > 0 else -1
    labels = sorted(counts, key=lambda lab: (-int(np.abs(counts[lab]).max()), lab))
    if top_rows is not None:
        labels = labels[:top_rows]
    cells = np.array([counts[lab] for lab in labels], dtype=np.int64).reshape(len(labels), window)
    return HeatmapMatrix(labels, offsets, cells, kpi_name, len(per_prefix))


def heatmap_csv(hm: HeatmapMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["explanation"] + [str(o) for o in hm.offsets])
    for lab, row in zip(hm.rows, hm.cells):
        w.writerow([lab] + [str(int(c)) for c in row])
    return buf.getvalue()


def cell_color(value: float, max_abs: float) -> str:
    """Red for positive, blue for negative, intensity ``|value| / max_abs``."""
    if max_abs <= 0:
        return "#eeeeee"
    t = min(1.0, abs(value) / max_abs)
    fade = int(round(255 * (1.0 - t)))
    if value > 0:
        return f"#ff{fade:02x}{fade:02x}"
    if value < 0:
        return f"#{fade:02x}{fade:02x}ff"
    return "#ffffff"


_CELL_W = 64
_CELL_H = 24
_CHAR_W = 7
_PAD = 12


def heatmap_svg(hm: HeatmapMatrix) -> str:
    """Self-contained SVG; the output depends only on ``hm``."""
    label_w = _PAD + _CHAR_W * max([len(r) for r in hm.rows] + [12])
    top = 48
    grid_w = _CELL_W * hm.window
    grid_h = _CELL_H * len(hm.rows)
    legend_y = top + grid_h + 44
    width = label_w + grid_w + _PAD
    height = legend_y + 40
    vmax = hm.max_abs
    title = hm.kpi_name or "explanations"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{_PAD}" y="18" font-size="13">{escape(title)} ({hm.prefix_count} prefixes)</text>',
    ]
    for c, off in enumerate(hm.offsets):
        cx = label_w + c * _CELL_W + _CELL_W // 2
        out.append(f'<text x="{cx}" y="{top - 8}" text-anchor="middle">{off}</text>')
    for r, lab in enumerate(hm.rows):
        y = top + r * _CELL_H
        out.append(
            f'<text x="{label_w - 6}" y="{y + _CELL_H // 2 + 4}" text-anchor="end">{escape(lab)}</text>'
        )
        for c in range(hm.window):
            v = int(hm.cells[r, c])
            x = label_w + c * _CELL_W
            out.append(
                f'<rect x="{x}" y="{y}" width="{_CELL_W}" height="{_CELL_H}" '
                f'fill="{cell_color(v, vmax)}" stroke="#999999" stroke-width="0.5"/>'
            )
            out.append(f'<text x="{x + _CELL_W // 2}" y="{y + _CELL_H // 2 + 4}" text-anchor="middle">{v}</text>')
    out.append(
        f'<text x="{label_w + grid_w // 2}" y="{top + grid_h + 18}" text-anchor="middle">timestep difference</text>'
    )
    # symmetric colour scale from -max to +max
    steps = 11
    sw = max(grid_w // steps, 8)
    for s in range(steps):
        v = vmax * (2 * s / (steps - 1) - 1)
        out.append(
            f'<rect x="{label_w + s * sw}" y="{legend_y}" width="{sw}" height="10" fill="{cell_color(v, vmax)}"/>'
        )
    out.append(f'<text x="{label_w}" y="{legend_y + 24}" text-anchor="start">{-vmax}</text>')
    out.append(f'<text x="{label_w + steps * sw}" y="{legend_y + 24}" text-anchor="end">{vmax}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(hm: HeatmapMatrix, csv_path, svg_path) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(heatmap_csv(hm))
    with open(svg_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(heatmap_svg(hm))


def format_duration(seconds: float) -> str:
    """``Xd Xh Xm``; negative estimates are shown as zero."""
    minutes = int(max(0.0, float(seconds)) // 60)
    days, rest = divmod(minutes, 24 * 60)
    hours, mins = divmod(rest, 60)
    return f"{days}d {hours}h {mins}m"


def format_prediction(value: float, kpi_kind: str) -> str:
    if kpi_kind == REMAINING_TIME:
        return format_duration(value)
    if kpi_kind == ACTIVITY_OCCURRENCE:
        return "1" if value >= 0.5 else "0"
    return f"{value:.2f}"


def explanation_string(record: ExplanationRecord, medians=None) -> str:
    lab = explanation_label(record, medians)
    return lab if record.timestep_offset == 0 else f"{lab} ({record.timestep_offset})"


def _top(records, k, medians):
    ranked = sorted(
        records, key=lambda r: (-abs(r.weight), -r.timestep_offset, explanation_label(r, medians))
    )
    picked = [explanation_string(r, medians) for r in ranked[:k]]
    return " AND ".join(picked) if picked else "-"


def online_row(case_id, prediction: float, records, kpi_kind: str, k: int = DEFAULT_TOP_K, medians=None) -> list:
    inc = [r for r in records if r.weight > 0]
    dec = [r for r in records if r.weight < 0]
    return [case_id, format_prediction(prediction, kpi_kind), _top(inc, k, medians), _top(dec, k, medians)]


def render_online_table(cases: Sequence[tuple], kpi_kind: str, k: int = DEFAULT_TOP_K, medians=None, path=None) -> str:
    """CSV with one row per ``(case_id, prediction, records)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ONLINE_COLUMNS)
    for case_id, prediction, records in cases:
        w.writerow(online_row(case_id, prediction, records, kpi_kind, k, medians))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
