"""Event-log data model, CSV ingestion and KPI labelers."""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

from .errors import ConfigError, LabelingError, RowError

log = logging.getLogger(__name__)

MISSING = "⟂missing"
ACTIVITY = "ACTIVITY"

CATEGORICAL = "categorical"
NUMERIC = "numeric"
BOOLEAN = "boolean"
TIMESTAMP = "timestamp"
ATTRIBUTE_KINDS = (CATEGORICAL, NUMERIC, BOOLEAN, TIMESTAMP)

_TRUE = {"true", "yes"}
_FALSE = {"false", "no"}


@dataclass(frozen=True)
class AttributeSchema:
    """Name, kind and observed domain of one process attribute.

    ``domain`` is the ordered tuple of values for categorical attributes,
    ``(min, max)`` for numeric and timestamp attributes and ``(False, True)``
    for booleans.
    """

    name: str
    kind: str
    domain: tuple

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(set(self.domain)) != len(self.domain):
                raise ValueError(f"duplicate values in domain of {self.name}")
        elif self.kind in (NUMERIC, TIMESTAMP):
            lo, hi = self.domain
            if lo > hi:
                raise ValueError(f"min > max in domain of {self.name}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.domain
        if self.kind == BOOLEAN:
            return isinstance(value, bool)
        try:
            v = float(value)
        except (TypeError, ValueError):
            return False
        return self.domain[0] <= v <= self.domain[1]


@dataclass(frozen=True)
class Event:
    """Partial assignment of attribute values plus a UTC timestamp in seconds."""

    assignments: Mapping[str, object]
    timestamp: float

    def __post_init__(self):
        if self.timestamp is None or not math.isfinite(self.timestamp):
            raise ValueError("event timestamp is required")

    def get(self, attribute, default=None):
        return self.assignments.get(attribute, default)

    @property
    def activity(self):
        return self.assignments.get(ACTIVITY)


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise ValueError(f"trace {self.case_id} is empty")
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"trace {self.case_id} is not sorted by timestamp")

    def __len__(self):
        return len(self.events)

    def prefix(self, i: int) -> tuple:
        return self.events[:i]

    @property
    def activities(self) -> list:
        return [e.activity for e in self.events]


@dataclass(frozen=True)
class EventLog:
    """Multiset of traces (kept in ingestion order) and the attribute schema.

    ``rejected`` lists the row errors that caused cases to be dropped during
    ingestion; it is empty for logs built in memory.
    """

    traces: tuple
    schema: tuple
    rejected: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "rejected", tuple(self.rejected))

    def __len__(self):
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.traces)

    def attribute(self, name: str) -> AttributeSchema:
        for a in self.schema:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def dropped_cases(self) -> list:
        return sorted({e.case_id for e in self.rejected if e.case_id is not None})

    @classmethod
    def from_traces(cls, traces: Sequence[Trace], kinds: Optional[Mapping[str, str]] = None):
        """Build a log from in-memory traces, inferring the schema.

        ``kinds`` overrides the inferred kind per attribute.
        """
        return cls(traces, infer_schema(traces, kinds or {}))


def _value_kind(value) -> str:
    if isinstance(value, bool):
        return BOOLEAN
    if isinstance(value, (int, float)):
        return NUMERIC
    return CATEGORICAL


def infer_schema(traces: Sequence[Trace], kinds: Mapping[str, str]) -> tuple:
    names: "OrderedDict[str, list]" = OrderedDict()
    names[ACTIVITY] = []
    for t in traces:
        for e in t.events:
            for a in e.assignments:
                names.setdefault(a, [])
    for t in traces:
        for e in t.events:
            for a in names:
                names[a].append(e.assignments.get(a, None))

    schema = []
    for name, values in names.items():
        present = [v for v in values if v is not None]
        kind = kinds.get(name)
        if kind is None:
            found = {_value_kind(v) for v in present}
            if name == ACTIVITY or not found or CATEGORICAL in found:
                kind = CATEGORICAL
            elif found == {BOOLEAN}:
                kind = BOOLEAN
            else:
                kind = NUMERIC
        schema.append(_attribute_from_values(name, kind, values))
    return tuple(schema)


def _attribute_from_values(name, kind, values) -> AttributeSchema:
    if kind == CATEGORICAL:
        observed = {str(v) for v in values if v is not None and v != MISSING}
        domain = tuple(sorted(observed))
        if any(v is None or v == MISSING for v in values):
            domain += (MISSING,)
        return AttributeSchema(name, kind, domain)
    if kind == BOOLEAN:
        return AttributeSchema(name, kind, (False, True))
    nums = [float(v) for v in values if v is not None]
    if not nums:
        return AttributeSchema(name, kind, (0.0, 0.0))
    return AttributeSchema(name, kind, (min(nums), max(nums)))


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnMapping:
    """Which CSV columns hold the case id, activity and timestamp.

    Columns not listed in ``exclude`` become attributes.  Kinds are inferred
    (numeric if every non-empty cell parses as a float, boolean for
    true/false cells, categorical otherwise) unless forced through
    ``categorical``, ``numeric``, ``boolean`` or ``timestamps``.
    """

    case_id: str
    activity: str
    timestamp: str
    timestamp_format: Optional[str] = None
    delimiter: str = ","
    attributes: Optional[tuple] = None
    exclude: tuple = ()
    categorical: tuple = ()
    numeric: tuple = ()
    boolean: tuple = ()
    timestamps: tuple = ()


def parse_timestamp(text: str, fmt: Optional[str] = None) -> float:
    """Parse ``text`` into UTC seconds; naive times are taken as UTC."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if fmt:
        dt = datetime.strptime(text, fmt)
    else:
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_bool(text: str):
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _infer_column_kind(name: str, cells: list, mapping: ColumnMapping) -> str:
    if name in mapping.categorical:
        return CATEGORICAL
    if name in mapping.numeric:
        return NUMERIC
    if name in mapping.boolean:
        return BOOLEAN
    if name in mapping.timestamps:
        return TIMESTAMP
    present = [c for c in cells if c.strip()]
    if not present:
        return CATEGORICAL
    if all(c.strip().lower() in _TRUE | _FALSE for c in present):
        return BOOLEAN
    if all(_is_float(c) for c in present):
        return NUMERIC
    return CATEGORICAL


def ingest_csv(path, mapping: ColumnMapping) -> EventLog:
    """Read a CSV event log.

    Rows are grouped by case id (cases keep the order of their first row) and
    sorted by timestamp within each case; ties keep file order.  A case with
    any malformed row is dropped whole and its errors are kept in
    ``EventLog.rejected``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=mapping.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path} has no header row", field="input")
        header = [h.strip() for h in header]
        for fld, col in (
            ("case_id_column", mapping.case_id),
            ("activity_column", mapping.activity),
            ("timestamp_column", mapping.timestamp),
        ):
            if col not in header:
                raise ConfigError(f"column {col!r} not found in {path}", field=fld)
        mandatory = {mapping.case_id, mapping.activity, mapping.timestamp}
        if mapping.attributes is not None:
            missing = [a for a in mapping.attributes if a not in header]
            if missing:
                raise ConfigError(f"columns {missing} not found in {path}", field="attributes")
            attr_cols = [a for a in mapping.attributes if a not in mandatory]
        else:
            attr_cols = [h for h in header if h not in mandatory and h not in mapping.exclude]
        if ACTIVITY in attr_cols:
            raise ConfigError(f"attribute column may not be named {ACTIVITY}", field="attributes")
        index = {h: k for k, h in enumerate(header)}
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((line_no, row))

    errors = []
    bad_cases = set()

    def cell(row, col):
        k = index[col]
        return row[k] if k < len(row) else ""

    kinds = {
        c: _infer_column_kind(c, [cell(r, c) for _, r in rows], mapping) for c in attr_cols
    }

    cases: "OrderedDict[str, list]" = OrderedDict()
    for line_no, row in rows:
        if len(row) != len(header):
            case_id = cell(row, mapping.case_id).strip() or None
            errors.append(RowError(line_no, f"expected {len(header)} fields, got {len(row)}", case_id))
            if case_id is not None:
                bad_cases.add(case_id)
            continue
        case_id = cell(row, mapping.case_id).strip()
        if not case_id:
            errors.append(RowError(line_no, "empty case id"))
            continue
        cases.setdefault(case_id, [])
        try:
            ts = parse_timestamp(cell(row, mapping.timestamp), mapping.timestamp_format)
        except ValueError as exc:
            errors.append(RowError(line_no, f"unparsable timestamp: {exc}", case_id))
            bad_cases.add(case_id)
            continue
        activity = cell(row, mapping.activity).strip()
        if not activity:
            errors.append(RowError(line_no, "empty activity", case_id))
            bad_cases.add(case_id)
            continue
        assignments = {ACTIVITY: activity}
        try:
            for c in attr_cols:
                raw = cell(row, c).strip()
                kind = kinds[c]
                if kind == CATEGORICAL:
                    assignments[c] = raw if raw else MISSING
                elif not raw:
                    continue
                elif kind == NUMERIC:
                    assignments[c] = float(raw)
                elif kind == BOOLEAN:
                    assignments[c] = _parse_bool(raw)
                else:
                    assignments[c] = parse_timestamp(raw, mapping.timestamp_format)
        except ValueError as exc:
            errors.append(RowError(line_no, f"column {c!r}: {exc}", case_id))
            bad_cases.add(case_id)
            continue
        cases[case_id].append((ts, Event(assignments, ts)))

    traces = []
    for case_id, evs in cases.items():
        if case_id in bad_cases or not evs:
            continue
        evs.sort(key=lambda p: p[0])
        traces.append(Trace(case_id, [e for _, e in evs]))
    if bad_cases:
        log.warning("dropped %d case(s) with malformed rows", len(bad_cases))

    kinds = dict(kinds)
    kinds[ACTIVITY] = CATEGORICAL
    schema = [_attribute_from_values(ACTIVITY, CATEGORICAL, [e.activity for t in traces for e in t.events])]
    for c in attr_cols:
        values = [e.assignments.get(c) for t in traces for e in t.events]
        schema.append(_attribute_from_values(c, kinds[c], values))
    return EventLog(traces, schema, errors)


def write_rejections(event_log: EventLog, path) -> None:
    """Write the malformed-row report, one ``line N: message`` per row."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for err in event_log.rejected:
            case = f" [case {err.case_id}]" if err.case_id is not None else ""
            fh.write(f"line {err.line}{case}: {err.message}\n")


def write_csv(event_log: EventLog, path, mapping: Optional[ColumnMapping] = None) -> None:
    """Write ``event_log`` in the canonical CSV layout readable by :func:`ingest_csv`."""
    case_col = mapping.case_id if mapping else "case_id"
    act_col = mapping.activity if mapping else "activity"
    ts_col = mapping.timestamp if mapping else "timestamp"
    attrs = [a for a in event_log.schema if a.name != ACTIVITY]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([case_col, act_col, ts_col] + [a.name for a in attrs])
        for t in event_log.traces:
            for e in t.events:
                ts = datetime.fromtimestamp(e.timestamp, tz=timezone.utc).isoformat()
                row = [t.case_id, e.activity, ts]
                for a in attrs:
                    v = e.assignments.get(a.name)
                    if v is None or v == MISSING:
                        row.append("")
                    elif isinstance(v, bool):
                        row.append("true" if v else "false")
                    elif isinstance(v, float):
                        row.append(repr(v))
                    else:
                        row.append(str(v))
                w.writerow(row)


# ---------------------------------------------------------------------------
# KPI labelers

REMAINING_TIME = "remaining_time"
ACTIVITY_OCCURRENCE = "activity_occurrence"
END_OF_CASE_NUMERIC = "end_of_case_numeric"


@dataclass(frozen=True)
class KpiLabeler:
    kind: str
    target: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (REMAINING_TIME, ACTIVITY_OCCURRENCE, END_OF_CASE_NUMERIC):
            raise ConfigError(f"unknown KPI kind {self.kind!r}", field="kpi")
        if self.kind != REMAINING_TIME and not self.target:
            raise ConfigError(f"KPI {self.kind} needs a target", field="kpi_target")

    @classmethod
    def remaining_time(cls):
        return cls(REMAINING_TIME)

    @classmethod
    def activity_occurrence(cls, activity: str):
        return cls(ACTIVITY_OCCURRENCE, activity)

    @classmethod
    def end_of_case_numeric(cls, attribute: str):
        return cls(END_OF_CASE_NUMERIC, attribute)

    @property
    def output_domain(self) -> str:
        return BOOLEAN if self.kind == ACTIVITY_OCCURRENCE else NUMERIC

    @property
    def task(self) -> str:
        return "binary" if self.kind == ACTIVITY_OCCURRENCE else "regression"

    @property
    def name(self) -> str:
        if self.kind == REMAINING_TIME:
            return "remaining_time"
        if self.kind == ACTIVITY_OCCURRENCE:
            return f"occurrence of {self.target}"
        return self.target

    def check(self, event_log: EventLog) -> None:
        """Validate the labeler against a log's schema."""
        if self.kind == ACTIVITY_OCCURRENCE:
            if self.target not in event_log.attribute(ACTIVITY).domain:
                raise ConfigError(f"activity {self.target!r} never occurs in the log", field="kpi_target")
        elif self.kind == END_OF_CASE_NUMERIC:
            try:
                attr = event_log.attribute(self.target)
            except KeyError:
                raise ConfigError(f"attribute {self.target!r} not in the log", field="kpi_target") from None
            if attr.kind not in (NUMERIC, BOOLEAN, TIMESTAMP):
                raise ConfigError(f"attribute {self.target!r} is not numeric", field="kpi_target")


def label(labeler: KpiLabeler, trace: Trace, i: int):
    """KPI value of ``trace`` after its first ``i`` events (1-based)."""
    n = len(trace)
    if not 1 <= i <= n:
        raise ValueError(f"prefix length {i} out of range 1..{n}")
    events = trace.events
    if labeler.kind == REMAINING_TIME:
        return events[-1].timestamp - events[i - 1].timestamp
    if labeler.kind == ACTIVITY_OCCURRENCE:
        return i < n and any(e.activity == labeler.target for e in events[i:])
    value = events[-1].assignments.get(labeler.target)
    if value is None:
        raise LabelingError(f"case {trace.case_id}: final event lacks {labeler.target}")
    return float(value)


def enumerate_prefixes(event_log, min_len: int = 1) -> Iterator[tuple]:
    """Yield ``(trace, i)`` for every prefix with ``i >= min_len``."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    for t in event_log:
        for i in range(min_len, len(t) + 1):
            yield t, i
