"""Explainable predictive process monitoring.

Predict process KPIs from event-log prefixes with any pluggable predictor
and explain each prediction with Shapley values over the encoded prefix.
"""

from .encoding import Dataset, EncodingOptions, FeatureSchema, build_dataset, build_schema, encode_prefix
from .errors import ConfigError, FingerprintMismatch, XppmError
from .event_log import EventLog, KpiLabeler, Trace, ingest_csv
from .explainer import ExplainOptions, explain_prefix, filter_significant
from .predictor import LinearPredictor, MeanPredictor, RecurrentPredictor, evaluate, load_model, save_model
from .reporting import aggregate_heatmap, render_heatmap, render_online_table
from .shapley import exact_shapley, sampled_shapley, shapley_values, value_function
from .synth import Rule, SynthSpec, generate

__version__ = "0.1.0"
