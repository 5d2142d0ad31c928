"""Turn Shapley attributions into signed explanation records.

A record says that ``attribute`` (equal to, different from, or with the
numeric value it had) at a given timestep offset pushed the prediction up
or down by ``weight``.  Offset 0 is the last event of the prefix, -1 the one
before it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoding import EncodedPrefix, FeatureSchema
from .shapley import (
    DEFAULT_EXACT_CAP,
    DEFAULT_SAMPLES,
    ShapleyAttribution,
    active_indices,
    shapley_values,
    value_function,
)

EQUALS = "equals"
NOT_EQUALS = "not_equals"
NUMERIC = "numeric"


@dataclass(frozen=True)
class ExplanationRecord:
    attribute: str
    relation: str
    value: Optional[str]
    timestep_offset: int
    weight: float
    # encoded instance value of a numeric feature, used for Low/High labels
    instance_value: Optional[float] = None
    raw_value: Optional[float] = None

    def __post_init__(self):
        if self.weight == 0:
            raise ValueError("explanation records must have a non-zero weight")

    @property
    def sign(self) -> str:
        return "increasing" if self.weight > 0 else "decreasing"


@dataclass(frozen=True)
class FilterInterval:
    mu: float
    xi: float
    delta: float

    @property
    def low(self) -> float:
        return self.mu - self.delta * self.xi

    @property
    def high(self) -> float:
        return self.mu + self.delta * self.xi

    def outside(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return (psi < self.low) | (psi > self.high)


def filter_interval(attr: ShapleyAttribution, delta: float = 1.0) -> FilterInterval:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    psi = attr.active_values
    if psi.size == 0:
        return FilterInterval(0.0, 0.0, delta)
    if np.ptp(psi) == 0:
        # exact, so identical values are never split by rounding in the mean
        return FilterInterval(float(psi[0]), 0.0, delta)
    return FilterInterval(float(psi.mean()), float(psi.std()), delta)


def filter_significant(attr: ShapleyAttribution, delta: float = 1.0) -> list:
    """``(index, psi)`` of the active features strictly outside
    ``[mu - delta*xi, mu + delta*xi]``; mean and population standard
    deviation are taken over active features only."""
    interval = filter_interval(attr, delta)
    psi = attr.active_values
    keep = interval.outside(psi)
    return [(int(i), float(v)) for i, v in zip(attr.active[keep], psi[keep])]


def to_explanations(attr: ShapleyAttribution, significant: Sequence[tuple], schema: FeatureSchema) -> list:
    """Map significant features to records.  Features whose Shapley value
    is exactly zero carry no influence and yield no record."""
    x = attr.instance
    n = schema.width
    records = []
    for idx, psi in significant:
        if psi == 0:
            continue
        r, j = divmod(int(idx), n)
        if r < x.first_real_row:
            raise RuntimeError(f"feature {idx} lies in a padding row")
        f = schema.features[j]
        offset = x.offset_of_row(r)
        value = float(x.matrix[r, j])
        if f.is_onehot:
            rel = EQUALS if value == 1.0 else NOT_EQUALS
            records.append(ExplanationRecord(f.attribute, rel, f.value, offset, psi))
        else:
            records.append(
                ExplanationRecord(f.attribute, NUMERIC, None, offset, psi, value, schema.raw_value(f.attribute, value))
            )
    return records


def k_lookup(records: Sequence[ExplanationRecord], schema: FeatureSchema, attribute: str, value, offset: int) -> float:
    """Evaluate the explanation function at ``(attribute, value, offset)``.

    Equals records match their own value, not-equals records every other
    value of the attribute's domain, numeric records any value.  Matches
    add up; values outside the attribute's domain give 0.
    """
    try:
        attr = schema.attribute(attribute)
    except KeyError:
        return 0.0
    if not attr.contains(value):
        return 0.0
    total = 0.0
    for rec in records:
        if rec.attribute != attribute or rec.timestep_offset != offset:
            continue
        if rec.relation == EQUALS:
            hit = rec.value == value
        elif rec.relation == NOT_EQUALS:
            hit = rec.value != value
        else:
            hit = True
        if hit:
            total += rec.weight
    return total


@dataclass(frozen=True)
class ExplainOptions:
    delta: float = 1.0
    exact_cap: int = DEFAULT_EXACT_CAP
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    freeze_constant: bool = True
    collapse_affine: bool = True
    estimator: str = "auto"


def explain_prefix(predictor, background: np.ndarray, instance: EncodedPrefix, schema: FeatureSchema,
                   options: ExplainOptions = ExplainOptions()):
    """Attribution and significant records for one encoded prefix."""
    vf = value_function(predictor, background, instance, collapse_affine=options.collapse_affine)
    active = active_indices(vf, options.freeze_constant)
    attr = shapley_values(vf, active, options.exact_cap, options.samples, options.seed, options.estimator)
    records = to_explanations(attr, filter_significant(attr, options.delta), schema)
    return attr, records


RECORD_COLUMNS = ["case_id", "attribute", "relation", "value", "timestep_offset", "weight"]


def write_records(path, explained: Sequence[tuple]) -> None:
    """``explained`` is a sequence of ``(case_id, records)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for case_id, records in explained:
            for r in records:
                w.writerow([case_id, r.attribute, r.relation, r.value or "", r.timestep_offset, repr(r.weight)])
