"""Synthetic event logs with planted, known effects.

Every trace runs a short sequential skeleton (with an optional rework loop
back to an earlier activity).  Case attributes are repeated on each event.
Rules plant a condition ``attribute == value`` in an exact fraction of the
traces and apply an effect to them:

``delay``
    adds ``magnitude`` seconds before the final event, so the remaining
    time of every non-final prefix grows by that amount;
``force_activity`` / ``forbid_activity``
    inserts ``target`` before the final event, or removes every occurrence
    of it;
``cost``
    adds ``magnitude`` to the cost of the final event.  Logs with cost rules
    carry ``COST`` (per event) and ``TOTAL_COST`` (running total) columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SpecError
from .event_log import ACTIVITY, Event, EventLog, Trace, infer_schema, CATEGORICAL, NUMERIC

DELAY = "delay"
FORCE = "force_activity"
FORBID = "forbid_activity"
COST = "cost"
EFFECTS = (DELAY, FORCE, FORBID, COST)

SKELETON = ("Register", "Check", "Evaluate", "Approve", "Notify", "Close")
START = 1577836800.0  # 2020-01-01T00:00:00Z


@dataclass(frozen=True)
class Rule:
    attribute: str
    value: str
    effect: str
    magnitude: float = 0.0
    target: Optional[str] = None
    fraction: float = 0.3


@dataclass(frozen=True)
class SynthSpec:
    n_traces: int = 1000
    activities: tuple = SKELETON
    # (name, values) of case attributes repeated on every event
    attributes: tuple = (("TYPE", ("normal", "slow")),)
    rules: tuple = ()
    noise: float = 0.0
    seed: int = 0
    step_duration: float = 1800.0
    # rework: after activities[rework_from] jump back to activities[rework_to]
    rework_from: int = 2
    rework_to: int = 1
    rework_probability: float = 0.2
    interarrival: float = 3600.0
    cost_per_event: float = 10.0

    def validate(self) -> None:
        if self.n_traces < 1:
            raise SpecError("n_traces must be >= 1")
        if len(self.activities) < 2:
            raise SpecError("the skeleton needs at least two activities")
        if not 0 <= self.rework_to <= self.rework_from < len(self.activities) - 1:
            raise SpecError("rework loop must point backwards and not involve the final activity")
        if not 0.0 <= self.rework_probability < 1.0:
            raise SpecError("rework_probability must be in [0, 1)")
        if self.noise < 0:
            raise SpecError("noise must be >= 0")
        domains = dict(self.attributes)
        planted: dict = {}
        for k, r in enumerate(self.rules):
            if r.attribute not in domains:
                raise SpecError(f"rule {k} references undeclared attribute {r.attribute!r}")
            if r.value not in domains[r.attribute]:
                raise SpecError(f"rule {k}: {r.value!r} is not a value of {r.attribute}")
            if r.effect not in EFFECTS:
                raise SpecError(f"rule {k}: unknown effect {r.effect!r}")
            if r.effect in (FORCE, FORBID) and not r.target:
                raise SpecError(f"rule {k}: {r.effect} needs a target activity")
            if r.effect == FORBID and r.target in (self.activities[0], self.activities[-1]):
                raise SpecError(f"rule {k}: cannot forbid the first or final activity")
            if not 0.0 <= r.fraction <= 1.0:
                raise SpecError(f"rule {k}: fraction must be in [0, 1]")
            planted.setdefault(r.attribute, {}).setdefault(r.value, 0.0)
        forced = {r.target for r in self.rules if r.effect == FORCE}
        forbidden = {r.target for r in self.rules if r.effect == FORBID}
        clash = forced & forbidden
        if clash:
            raise SpecError(f"rules both force and forbid activity {sorted(clash)[0]!r}")
        for attr, values in planted.items():
            fractions = {}
            for r in self.rules:
                if r.attribute == attr:
                    fractions[r.value] = max(fractions.get(r.value, 0.0), r.fraction)
            if sum(fractions.values()) > 1.0 + 1e-12:
                raise SpecError(f"planted fractions for {attr} exceed 1")
            free = [v for v in domains[attr] if v not in values]
            if not free and sum(fractions.values()) < 1.0:
                raise SpecError(f"{attr} needs at least one value not used by a rule")


def _plant(spec: SynthSpec, rng) -> list:
    """Case-attribute assignment per trace, with rule conditions planted in
    exact fractions of the traces."""
    n = spec.n_traces
    cases = [dict() for _ in range(n)]
    for attr, values in spec.attributes:
        order = rng.permutation(n)
        used = 0
        fractions: dict = {}
        for r in spec.rules:
            if r.attribute == attr:
                fractions[r.value] = max(fractions.get(r.value, 0.0), r.fraction)
        for value in values:
            if value not in fractions:
                continue
            count = int(round(fractions[value] * n))
            for k in order[used:used + count]:
                cases[k][attr] = value
            used += count
        free = [v for v in values if v not in fractions]
        for k in order[used:]:
            cases[k][attr] = free[int(rng.integers(len(free)))]
    return cases


def generate_with_truth(spec: SynthSpec) -> tuple:
    """``(EventLog, ground-truth rows)``; a pure function of ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    case_attrs = _plant(spec, rng)
    has_cost = any(r.effect == COST for r in spec.rules)
    affected = [0] * len(spec.rules)
    traces = []
    for k in range(spec.n_traces):
        trng = np.random.default_rng([spec.seed, k])
        attrs = case_attrs[k]
        fired = [r for r in spec.rules if attrs.get(r.attribute) == r.value]
        for j, r in enumerate(spec.rules):
            if attrs.get(r.attribute) == r.value:
                affected[j] += 1

        acts = list(spec.activities[: spec.rework_from + 1])
        while trng.random() < spec.rework_probability:
            acts.extend(spec.activities[spec.rework_to: spec.rework_from + 1])
        acts.extend(spec.activities[spec.rework_from + 1:])
        for r in fired:
            if r.effect == FORBID:
                acts = [a for a in acts if a != r.target]
        for r in fired:
            if r.effect == FORCE and r.target not in acts:
                acts.insert(len(acts) - 1, r.target)

        t = START + k * spec.interarrival
        total = 0.0
        events = []
        for pos, act in enumerate(acts):
            last = pos == len(acts) - 1
            if pos > 0:
                d = spec.step_duration
                if spec.noise > 0:
                    d += trng.normal(0.0, spec.noise)
                d = max(d, 0.0)
                if last:
                    d += sum(r.magnitude for r in fired if r.effect == DELAY)
                t += d
            assignments = {ACTIVITY: act, **attrs}
            if has_cost:
                c = spec.cost_per_event
                if spec.noise > 0:
                    c += trng.normal(0.0, spec.noise * spec.cost_per_event / spec.step_duration)
                if last:
                    c += sum(r.magnitude for r in fired if r.effect == COST)
                total += c
                assignments["COST"] = float(c)
                assignments["TOTAL_COST"] = float(total)
            events.append(Event(assignments, float(t)))
        traces.append(Trace(f"case_{k:06d}", events))

    kinds = {name: CATEGORICAL for name, _ in spec.attributes}
    if has_cost:
        kinds.update(COST=NUMERIC, TOTAL_COST=NUMERIC)
    event_log = EventLog(traces, infer_schema(traces, kinds))
    truth = [
        {
            "rule_id": j,
            "attribute": r.attribute,
            "value": r.value,
            "effect": r.effect,
            "magnitude": r.magnitude,
            "target": r.target or "",
            "fraction": r.fraction,
            "affected_traces": affected[j],
        }
        for j, r in enumerate(spec.rules)
    ]
    return event_log, truth


def generate(spec: SynthSpec) -> EventLog:
    return generate_with_truth(spec)[0]


TRUTH_COLUMNS = ["rule_id", "attribute", "value", "effect", "magnitude", "target", "fraction", "affected_traces"]


def write_truth(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, TRUTH_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def parse_rule(text: str) -> Rule:
    """Parse ``ATTR=VALUE:effect:magnitude[:target][@fraction]``,
    e.g. ``TYPE=slow:delay:3600@0.3``."""
    body, _, frac = text.partition("@")
    parts = body.split(":")
    if len(parts) < 2 or "=" not in parts[0]:
        raise SpecError(f"cannot parse rule {text!r}")
    attr, value = parts[0].split("=", 1)
    effect = parts[1]
    target = parts[3] if len(parts) > 3 else None
    try:
        magnitude = float(parts[2]) if len(parts) > 2 and parts[2] else 0.0
        fraction = float(frac) if frac else 0.3
    except ValueError:
        raise SpecError(f"cannot parse rule {text!r}: bad number") from None
    return Rule(attr.strip(), value.strip(), effect.strip(), magnitude, target, fraction)
