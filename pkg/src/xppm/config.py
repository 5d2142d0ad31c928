"""Run configuration: a plain ``key = value`` text file.

Blank lines and lines starting with ``#`` are ignored.  List-valued keys
take comma-separated items.  Every key has a default, so an empty file is a
valid config apart from ``input``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .encoding import EncodingOptions, SplitRatios
from .errors import ConfigError
from .event_log import ColumnMapping, KpiLabeler, REMAINING_TIME, ACTIVITY_OCCURRENCE, END_OF_CASE_NUMERIC
from .explainer import ExplainOptions
from .predictor import PREDICTORS
from .shapley import ESTIMATORS

KPI_KINDS = (REMAINING_TIME, ACTIVITY_OCCURRENCE, END_OF_CASE_NUMERIC)


@dataclass
class RunConfig:
    # input and column mapping
    input: str = ""
    output_dir: str = "out"
    case_id_column: str = "case_id"
    activity_column: str = "activity"
    timestamp_column: str = "timestamp"
    timestamp_format: str = ""
    delimiter: str = ","
    categorical_columns: tuple = ()
    numeric_columns: tuple = ()
    boolean_columns: tuple = ()
    exclude_columns: tuple = ()
    # KPI
    kpi: str = REMAINING_TIME
    kpi_target: str = ""
    # encoding
    max_len: int = 0  # 0: 95th percentile of training trace lengths
    min_prefix_len: int = 1
    scale_numeric: bool = True
    time_from_start: bool = True
    time_since_previous: bool = False
    cardinality_cap: int = 1000
    split_seed: int = 0
    train_ratio: float = 2 / 3 * 0.8
    validation_ratio: float = 2 / 3 * 0.2
    test_ratio: float = 1 / 3
    # predictor
    predictor: str = "recurrent"
    seed: int = 0
    hidden: int = 16
    learning_rate: float = 0.01
    epochs: int = 60
    patience: int = 6
    batch_size: int = 64
    ridge: float = 0.0
    l2: float = 1e-3
    # Shapley and explanation
    background_size: int = 100
    exact_cap: int = 20
    samples: int = 2000
    shapley_seed: int = 0
    estimator: str = "auto"
    delta: float = 1.0
    # reports
    window: int = 5
    top_rows: int = 30
    top_k: int = 2
    jobs: int = 1
    running_cases: str = ""
    # synthetic logs
    synth_traces: int = 1000
    synth_rules: tuple = ("TYPE=slow:delay:3600@0.3",)
    synth_noise: float = 360.0
    synth_seed: int = 0
    synth_rework_probability: float = 0.2

    # -- parsing ------------------------------------------------------------

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]

    def set(self, key: str, text: str) -> None:
        """Assign ``key`` from its text form, converting to the field type."""
        key = key.strip()
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        kind = types[key]
        text = text.strip()
        try:
            if kind == "bool":
                low = text.lower()
                if low not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(text)
                value = low in ("true", "yes", "1")
            elif kind == "int":
                value = int(text)
            elif kind == "float":
                value = float(text)
            elif kind == "tuple":
                sep = ";" if key == "synth_rules" else ","
                value = tuple(p.strip() for p in text.split(sep) if p.strip())
            else:
                value = text
        except ValueError:
            raise ConfigError(f"cannot parse {text!r} as {kind}", field=key) from None
        setattr(self, key, value)

    @classmethod
    def parse(cls, text: str, source: str = "config") -> "RunConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source} line {n}: expected 'key = value'", field=f"line {n}")
            key, _, value = line.partition("=")
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", field="config") from None
        return cls.parse(text, str(path))

    def override(self, pairs) -> "RunConfig":
        """Copy with ``key=value`` strings applied on top."""
        cfg = dataclasses.replace(self)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value", field="--set")
            key, _, value = pair.partition("=")
            cfg.set(key, value)
        return cfg

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = (";" if f.name == "synth_rules" else ",").join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    # -- validation and derived objects ---------------------------------------

    def validate(self) -> None:
        if self.kpi not in KPI_KINDS:
            raise ConfigError(f"must be one of {', '.join(KPI_KINDS)}", field="kpi")
        if self.kpi != REMAINING_TIME and not self.kpi_target:
            raise ConfigError(f"required for kpi {self.kpi}", field="kpi_target")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"must be one of {', '.join(sorted(PREDICTORS))}", field="predictor")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"must be one of {', '.join(ESTIMATORS)}", field="estimator")
        positive = ("min_prefix_len", "cardinality_cap", "hidden", "epochs", "patience", "batch_size",
                    "background_size", "samples", "window", "top_k", "jobs", "synth_traces")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=name)
        for name in ("max_len", "exact_cap", "top_rows"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", field=name)
        for name in ("learning_rate",):
            if getattr(self, name) <= 0:
                raise ConfigError("must be > 0", field=name)
        for name in ("delta", "ridge", "l2", "synth_noise"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", field=name)
        if len(self.delimiter) != 1:
            raise ConfigError("must be a single character", field="delimiter")
        self.split_ratios()

    def split_ratios(self) -> SplitRatios:
        try:
            return SplitRatios(self.train_ratio, self.validation_ratio, self.test_ratio)
        except ValueError as exc:
            raise ConfigError(str(exc), field="train_ratio") from None

    def column_mapping(self, **forced) -> ColumnMapping:
        return ColumnMapping(
            case_id=self.case_id_column,
            activity=self.activity_column,
            timestamp=self.timestamp_column,
            timestamp_format=self.timestamp_format or None,
            delimiter=self.delimiter,
            exclude=tuple(self.exclude_columns),
            categorical=tuple(forced.get("categorical", self.categorical_columns)),
            numeric=tuple(forced.get("numeric", self.numeric_columns)),
            boolean=tuple(forced.get("boolean", self.boolean_columns)),
        )

    def labeler(self) -> KpiLabeler:
        return KpiLabeler(self.kpi, self.kpi_target or None)

    def encoding_options(self) -> EncodingOptions:
        return EncodingOptions(
            scale_numeric=self.scale_numeric,
            time_from_start=self.time_from_start,
            time_since_previous=self.time_since_previous,
            cardinality_cap=self.cardinality_cap,
        )

    def predictor_kwargs(self) -> dict:
        if self.predictor == "recurrent":
            return dict(hidden=self.hidden, learning_rate=self.learning_rate, epochs=self.epochs,
                        patience=self.patience, batch_size=self.batch_size)
        if self.predictor == "linear":
            return dict(ridge=self.ridge, l2=self.l2)
        return {}

    def explain_options(self) -> ExplainOptions:
        return ExplainOptions(delta=self.delta, exact_cap=self.exact_cap, samples=self.samples,
                              seed=self.shapley_seed, estimator=self.estimator)

    @property
    def max_len_or_none(self) -> Optional[int]:
        return self.max_len or None
