"""Event-to-vector encoding, prefix padding and dataset assembly."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._io import save_npz
from .errors import EncodingError, FingerprintMismatch, LabelingError
from .event_log import (
    BOOLEAN,
    CATEGORICAL,
    MISSING,
    NUMERIC,
    TIMESTAMP,
    AttributeSchema,
    EventLog,
    KpiLabeler,
    label,
)

log = logging.getLogger(__name__)

ONEHOT = "onehot"
TIME_FROM_START = "time from start"
TIME_SINCE_PREVIOUS = "time since previous"
DERIVED = (TIME_FROM_START, TIME_SINCE_PREVIOUS)

CACHE_VERSION = 1


@dataclass(frozen=True)
class FeatureDescriptor:
    attribute: str
    kind: str  # numeric | boolean | onehot
    value: Optional[str] = None

    @property
    def is_onehot(self) -> bool:
        return self.kind == ONEHOT


@dataclass(frozen=True)
class EncodingOptions:
    scale_numeric: bool = True
    time_from_start: bool = True
    time_since_previous: bool = False
    cardinality_cap: int = 1000
    exclude: tuple = ()


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed dimension layout of the event encoding.

    ``attributes`` holds the schema of every encoded attribute, derived time
    features included; ``scaling`` maps numeric attributes to the
    ``(offset, span)`` used for min-max scaling (empty when scaling is off).
    """

    features: tuple
    attributes: tuple
    scaling: tuple = ()
    time_from_start: bool = False
    time_since_previous: bool = False

    @property
    def width(self) -> int:
        return len(self.features)

    n = width

    def attribute(self, name: str) -> AttributeSchema:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def groups(self) -> dict:
        """Feature indices per attribute, in schema order."""
        out: dict = {}
        for j, f in enumerate(self.features):
            out.setdefault(f.attribute, []).append(j)
        return out

    def to_dict(self) -> dict:
        return {
            "features": [[f.attribute, f.kind, f.value] for f in self.features],
            "attributes": [[a.name, a.kind, list(a.domain)] for a in self.attributes],
            "scaling": [[k, lo, span] for k, lo, span in self.scaling],
            "time_from_start": self.time_from_start,
            "time_since_previous": self.time_since_previous,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            features=tuple(FeatureDescriptor(a, k, v) for a, k, v in d["features"]),
            attributes=tuple(AttributeSchema(n, k, tuple(dom)) for n, k, dom in d["attributes"]),
            scaling=tuple((k, lo, span) for k, lo, span in d["scaling"]),
            time_from_start=d["time_from_start"],
            time_since_previous=d["time_since_previous"],
        )

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @cached_property
    def _scale_map(self) -> dict:
        return {k: (lo, span) for k, lo, span in self.scaling}

    def raw_value(self, attribute: str, encoded: float) -> float:
        """Undo min-max scaling for a numeric feature value."""
        sc = self._scale_map.get(attribute)
        if sc is None:
            return float(encoded)
        lo, span = sc
        return float(encoded) * span + lo


@dataclass(frozen=True, eq=False)
class EncodedPrefix:
    """A prefix as an ``(M, n)`` matrix, left-padded with zero rows."""

    matrix: np.ndarray
    length: int
    fingerprint: str = ""

    @property
    def max_len(self) -> int:
        return self.matrix.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.matrix.reshape(-1)

    @property
    def first_real_row(self) -> int:
        return self.max_len - self.length

    def offset_of_row(self, row: int) -> int:
        return row - (self.max_len - 1)


def build_schema(event_log: EventLog, options: EncodingOptions = EncodingOptions()) -> FeatureSchema:
    if len(event_log) == 0:
        raise EncodingError("cannot build a feature schema from an empty log")
    features = []
    attributes = []
    scaling = []
    for attr in event_log.schema:
        if attr.name in options.exclude:
            continue
        if attr.kind == CATEGORICAL:
            if len(attr.domain) > options.cardinality_cap:
                raise EncodingError(
                    f"attribute {attr.name!r} has {len(attr.domain)} values, more than the "
                    f"cap of {options.cardinality_cap}; exclude it or raise the cap"
                )
            features.extend(FeatureDescriptor(attr.name, ONEHOT, v) for v in attr.domain)
        elif attr.kind == BOOLEAN:
            features.append(FeatureDescriptor(attr.name, BOOLEAN))
        else:
            features.append(FeatureDescriptor(attr.name, NUMERIC))
        attributes.append(attr)

    derived = []
    if options.time_from_start:
        spans = [t.events[-1].timestamp - t.events[0].timestamp for t in event_log]
        derived.append(AttributeSchema(TIME_FROM_START, NUMERIC, (0.0, float(max(spans)))))
    if options.time_since_previous:
        gaps = [
            b.timestamp - a.timestamp for t in event_log for a, b in zip(t.events, t.events[1:])
        ]
        derived.append(AttributeSchema(TIME_SINCE_PREVIOUS, NUMERIC, (0.0, float(max(gaps, default=0.0)))))
    for attr in derived:
        features.append(FeatureDescriptor(attr.name, NUMERIC))
        attributes.append(attr)

    if options.scale_numeric:
        for attr in attributes:
            if attr.kind in (NUMERIC, TIMESTAMP):
                lo, hi = attr.domain
                span = hi - lo if hi > lo else 1.0
                scaling.append((attr.name, float(lo), float(span)))

    return FeatureSchema(
        features=tuple(features),
        attributes=tuple(attributes),
        scaling=tuple(scaling),
        time_from_start=options.time_from_start,
        time_since_previous=options.time_since_previous,
    )


class _Encoder:
    """Precomputed lookup tables for one schema."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.onehot = {}
        self.numeric = []
        scale = schema._scale_map
        for j, f in enumerate(schema.features):
            if f.is_onehot:
                self.onehot.setdefault(f.attribute, {})[f.value] = j
            else:
                lo, span = scale.get(f.attribute, (0.0, 1.0))
                self.numeric.append((j, f.attribute, f.kind, lo, span))
        self.kinds = {a.name: a.kind for a in schema.attributes}

    def encode(self, event, start_time, prev_time, out):
        for attr, slots in self.onehot.items():
            v = event.assignments.get(attr, MISSING)
            j = slots.get(v)
            if j is None:
                if v == MISSING:
                    log.warning("attribute %s missing and no %s value seen in training", attr, MISSING)
                else:
                    log.warning("unseen value %r for attribute %s encoded as all-zero", v, attr)
                continue
            out[j] = 1.0
        for j, attr, kind, lo, span in self.numeric:
            if attr == TIME_FROM_START:
                v = event.timestamp - start_time
            elif attr == TIME_SINCE_PREVIOUS:
                v = event.timestamp - prev_time
            else:
                v = event.assignments.get(attr)
                if v is None:
                    continue
            out[j] = (float(v) - lo) / span


_ENCODERS: dict = {}


def _encoder(schema: FeatureSchema) -> _Encoder:
    enc = _ENCODERS.get(id(schema))
    if enc is None or enc.schema is not schema:
        enc = _Encoder(schema)
        _ENCODERS[id(schema)] = enc
    return enc


def encode_prefix(
    schema: FeatureSchema,
    prefix: Sequence,
    max_len: int,
    start_time: Optional[float] = None,
) -> EncodedPrefix:
    """Encode ``prefix`` as an ``(max_len, n)`` matrix.

    The most recent event sits in the last row.  ``start_time`` is the case
    start used for the time-from-start feature; it defaults to the first
    event of ``prefix`` and must be passed explicitly when the caller has
    truncated the prefix.
    """
    m = len(prefix)
    if m > max_len:
        raise EncodingError(f"prefix of length {m} exceeds max length {max_len}; truncate first")
    if m == 0:
        raise EncodingError("empty prefix")
    enc = _encoder(schema)
    mat = np.zeros((max_len, schema.width))
    if start_time is None:
        start_time = prefix[0].timestamp
    prev = prefix[0].timestamp
    first = max_len - m
    for k, e in enumerate(prefix):
        enc.encode(e, start_time, prev, mat[first + k])
        prev = e.timestamp
    return EncodedPrefix(mat, m, schema.fingerprint)


def decode_row(schema: FeatureSchema, row: np.ndarray, derived: bool = False) -> dict:
    """Invert the encoding of one event row.

    One-hot groups that are all zero (unseen values) decode to nothing.
    Derived time features are only returned when ``derived`` is true.
    """
    out = {}
    scale = schema._scale_map
    for j, f in enumerate(schema.features):
        if f.attribute in DERIVED and not derived:
            continue
        if f.is_onehot:
            if row[j] == 1.0:
                out[f.attribute] = f.value
        elif f.kind == BOOLEAN:
            out[f.attribute] = bool(row[j] == 1.0)
        else:
            lo, span = scale.get(f.attribute, (0.0, 1.0))
            out[f.attribute] = float(row[j]) * span + lo
    return out


def decode_prefix(schema: FeatureSchema, x: EncodedPrefix, derived: bool = False) -> list:
    return [decode_row(schema, x.matrix[r], derived) for r in range(x.first_real_row, x.max_len)]


# ---------------------------------------------------------------------------
# datasets

TRAIN, VALIDATION, TEST = "train", "validation", "test"


@dataclass(frozen=True)
class SplitRatios:
    train: float = 2 / 3 * 0.8
    validation: float = 2 / 3 * 0.2
    test: float = 1 / 3

    def __post_init__(self):
        parts = (self.train, self.validation, self.test)
        if any(p < 0 for p in parts) or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {parts}")


def split_of(case_id: str, seed: int, ratios: SplitRatios = SplitRatios()) -> str:
    """Deterministic split assignment from ``(seed, case_id)``."""
    h = hashlib.sha256(f"{seed}\x00{case_id}".encode()).digest()
    u = int.from_bytes(h[:8], "big") / 2**64
    if u < ratios.train:
        return TRAIN
    if u < ratios.train + ratios.validation:
        return VALIDATION
    return TEST


def default_max_len(lengths: Sequence[int]) -> int:
    """95th percentile of trace lengths (nearest rank): the smallest length
    that at least 95% of the traces do not exceed."""
    if not len(lengths):
        return 1
    return max(1, int(np.percentile(np.asarray(lengths), 95, method="inverted_cdf")))


@dataclass(eq=False)
class Dataset:
    """Encoded prefixes with targets.

    Row ``k`` is the prefix of length ``prefix_lens[k]`` of case
    ``case_ids[k]``; ``X[k]`` is its padded matrix and ``lengths[k]`` the
    number of real rows (smaller than the prefix length when truncated).
    """

    X: np.ndarray
    lengths: np.ndarray
    y: np.ndarray
    case_ids: np.ndarray
    prefix_lens: np.ndarray
    splits: np.ndarray
    schema: FeatureSchema
    labeler: KpiLabeler
    skipped: tuple = ()

    def __len__(self):
        return len(self.y)

    @property
    def max_len(self) -> int:
        return self.X.shape[1]

    @property
    def fingerprint(self) -> str:
        return self.schema.fingerprint

    def subset(self, split) -> "Dataset":
        mask = np.isin(self.splits, [split] if isinstance(split, str) else list(split))
        return self.take(np.flatnonzero(mask))

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.X[idx], self.lengths[idx], self.y[idx], self.case_ids[idx],
            self.prefix_lens[idx], self.splits[idx], self.schema, self.labeler, self.skipped,
        )

    def prefix(self, k: int) -> EncodedPrefix:
        return EncodedPrefix(self.X[k], int(self.lengths[k]), self.fingerprint)

    def prefixes(self) -> list:
        return [self.prefix(k) for k in range(len(self))]

    def save(self, path) -> None:
        meta = {
            "version": CACHE_VERSION,
            "schema": self.schema.to_dict(),
            "fingerprint": self.fingerprint,
            "labeler": [self.labeler.kind, self.labeler.target],
            "skipped": list(self.skipped),
        }
        save_npz(path, {
            "meta": np.array(json.dumps(meta, sort_keys=True)),
            "X": self.X,
            "lengths": self.lengths,
            "y": self.y,
            "case_ids": self.case_ids.astype(str),
            "prefix_lens": self.prefix_lens,
            "splits": self.splits.astype(str),
        })

    @classmethod
    def load(cls, path, fingerprint: Optional[str] = None) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CACHE_VERSION:
                raise FingerprintMismatch(f"{path}: unsupported cache version {meta.get('version')}")
            schema = FeatureSchema.from_dict(meta["schema"])
            if schema.fingerprint != meta["fingerprint"]:
                raise FingerprintMismatch(f"{path}: embedded schema does not match its fingerprint")
            if fingerprint is not None and fingerprint != meta["fingerprint"]:
                raise FingerprintMismatch(
                    f"{path}: schema fingerprint {meta['fingerprint'][:12]} != expected {fingerprint[:12]}"
                )
            kind, target = meta["labeler"]
            return cls(
                X=z["X"], lengths=z["lengths"], y=z["y"], case_ids=z["case_ids"],
                prefix_lens=z["prefix_lens"], splits=z["splits"], schema=schema,
                labeler=KpiLabeler(kind, target), skipped=tuple(meta["skipped"]),
            )


def build_dataset(
    event_log: EventLog,
    labeler: KpiLabeler,
    schema: FeatureSchema,
    ratios: SplitRatios = SplitRatios(),
    seed: int = 0,
    max_len: Optional[int] = None,
    min_len: int = 1,
) -> Dataset:
    """One item per prefix of every labelable trace.

    Prefixes longer than ``max_len`` keep their most recent ``max_len``
    events; time from start still counts from the true case start.
    ``max_len`` defaults to the 95th percentile of training trace lengths.
    """
    labelled = []
    skipped = []
    for t in event_log:
        try:
            ys = [label(labeler, t, i) for i in range(min_len, len(t) + 1)]
        except LabelingError as exc:
            log.warning("skipping trace: %s", exc)
            skipped.append(t.case_id)
            continue
        labelled.append((t, ys, split_of(t.case_id, seed, ratios)))
    if skipped:
        log.warning("%d trace(s) skipped by the labeler", len(skipped))

    if max_len is None:
        train_lens = [len(t) for t, _, s in labelled if s == TRAIN] or [len(t) for t, _, _ in labelled]
        max_len = default_max_len(train_lens)

    n_items = sum(len(ys) for _, ys, _ in labelled)
    X = np.zeros((n_items, max_len, schema.width))
    lengths = np.zeros(n_items, dtype=int)
    y = np.zeros(n_items)
    case_ids, prefix_lens, splits = [], [], []
    k = 0
    for t, ys, s in labelled:
        start = t.events[0].timestamp
        for i, target in zip(range(min_len, len(t) + 1), ys):
            events = t.events[max(0, i - max_len):i]
            x = encode_prefix(schema, events, max_len, start_time=start)
            X[k] = x.matrix
            lengths[k] = x.length
            y[k] = float(target)
            case_ids.append(t.case_id)
            prefix_lens.append(i)
            splits.append(s)
            k += 1
    return Dataset(
        X, lengths, y,
        np.array(case_ids, dtype=str), np.array(prefix_lens, dtype=int), np.array(splits, dtype=str),
        schema, labeler, tuple(skipped),
    )


def feature_medians(dataset: Dataset) -> dict:
    """Median encoded value of every numeric/boolean attribute over training
    events (all events when there is no training split).

    Every event is the last row of exactly one prefix, so the last rows are
    the event population.
    """
    train = dataset.subset(TRAIN)
    if len(train) == 0:
        train = dataset
    out = {}
    if len(train) == 0:
        return out
    for j, f in enumerate(dataset.schema.features):
        if not f.is_onehot:
            out[f.attribute] = float(np.median(train.X[:, -1, j]))
    return out
