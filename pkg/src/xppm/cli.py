"""Command-line front end: ingest, encode, train, evaluate, explain, report.

Every subcommand reads a ``key = value`` config file (``--config``), applies
``--set key=value`` overrides, writes its artifacts under ``output_dir``
together with the effective config and a manifest of file hashes.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._io import write_manifest
from .config import RunConfig
from .encoding import TEST, TRAIN, VALIDATION, Dataset, build_dataset, build_schema, encode_prefix, feature_medians
from .errors import ConfigError, FingerprintMismatch, RowError, SpecError, XppmError
from .event_log import BOOLEAN, CATEGORICAL, NUMERIC, ingest_csv, write_csv, write_rejections
from .explainer import explain_prefix, write_records
from .predictor import MeanPredictor, evaluate, load_model, make_predictor, save_model
from .reporting import aggregate_heatmap, render_heatmap, render_online_table
from .shapley import EXACT, sample_background
from .synth import SynthSpec, generate_with_truth, parse_rule, write_truth

log = logging.getLogger("xppm")

CONFIG_FILE = "config.txt"
MANIFEST = "manifest.txt"
LOG_FILE = "log.csv"
TRUTH_FILE = "truth.csv"
REJECTED_FILE = "rejected_rows.txt"
DATASET_FILE = "dataset.npz"
MODEL_FILE = "model.npz"
METRICS_FILE = "metrics.json"
EVALUATION_FILE = "evaluation.json"
HEATMAP_CSV = "heatmap.csv"
HEATMAP_SVG = "heatmap.svg"
OFFLINE_RECORDS = "offline_explanations.csv"
OFFLINE_SUMMARY = "offline_summary.json"
ONLINE_TABLE = "online.csv"
ONLINE_RECORDS = "online_explanations.csv"


# ---------------------------------------------------------------------------
# helpers


def _outdir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(config: RunConfig, out: Path) -> None:
    # output_dir is left out so runs into different directories stay comparable
    text = "".join(l + "\n" for l in config.dumps().splitlines() if not l.startswith("output_dir ="))
    (out / CONFIG_FILE).write_text(text, encoding="utf-8")
    write_manifest(out, MANIFEST)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _ingest(config: RunConfig, path: Optional[str] = None, mapping=None):
    field = "input" if path is None else "running_cases"
    path = config.input if path is None else path
    if not path:
        raise ConfigError("no input file given", field=field)
    if not Path(path).is_file():
        raise ConfigError(f"file not found: {path}", field=field)
    event_log = ingest_csv(path, mapping or config.column_mapping())
    for err in event_log.rejected:
        log.warning("%s: %s", path, err)
    return event_log


def _load_artifacts(config: RunConfig):
    out = Path(config.output_dir)
    ds_path, model_path = out / DATASET_FILE, out / MODEL_FILE
    for p in (ds_path, model_path):
        if not p.is_file():
            raise ConfigError(f"{p} not found; run 'train' first", field="output_dir")
    dataset = Dataset.load(ds_path)
    predictor = load_model(model_path, fingerprint=dataset.fingerprint)
    return dataset, predictor


def _background(config: RunConfig, dataset: Dataset) -> np.ndarray:
    train = dataset.subset(TRAIN)
    if len(train) == 0:
        log.warning("empty training split; drawing the background from all items")
        train = dataset
    idx = sample_background(len(train), config.background_size, config.shapley_seed)
    return train.X[idx]


# per-prefix explanation, shared by serial and pooled runs

_WORKER: dict = {}


def _init_worker(predictor, background, schema, options):
    _WORKER.update(predictor=predictor, background=background, schema=schema, options=options)


def _explain_one(task):
    key, x = task
    w = _WORKER
    # the per-prefix seed depends only on the prefix key, never on scheduling
    options = replace(w["options"], seed=(int(w["options"].seed), int(key)))
    attr, records = explain_prefix(w["predictor"], w["background"], x, w["schema"], options)
    return attr.estimator, records


def explain_many(predictor, background, schema, options, prefixes: Sequence, jobs: int = 1) -> list:
    """``[(estimator, records)]`` for ``prefixes``, a sequence of
    ``(key, EncodedPrefix)``; the result order matches the input order for
    any ``jobs``."""
    tasks = list(prefixes)
    if jobs <= 1 or len(tasks) < 2:
        _init_worker(predictor, background, schema, options)
        return [_explain_one(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(predictor, background, schema, options)
    ) as pool:
        return list(pool.map(_explain_one, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest_check(config: RunConfig) -> dict:
    out = _outdir(config)
    event_log = _ingest(config)
    write_rejections(event_log, out / REJECTED_FILE)
    summary = {
        "traces": len(event_log),
        "events": event_log.n_events,
        "rejected_rows": len(event_log.rejected),
        "dropped_cases": len(event_log.dropped_cases),
        "attributes": {a.name: a.kind for a in event_log.schema},
    }
    _write_json(out / "ingest_summary.json", summary)
    _finish(config, out)
    log.info("%d traces, %d events, %d rejected rows", summary["traces"], summary["events"], summary["rejected_rows"])
    return summary


def cmd_synth(config: RunConfig) -> Path:
    out = _outdir(config)
    try:
        rules = tuple(parse_rule(r) for r in config.synth_rules)
        spec = SynthSpec(
            n_traces=config.synth_traces,
            rules=rules,
            noise=config.synth_noise,
            seed=config.synth_seed,
            rework_probability=config.synth_rework_probability,
        )
        event_log, truth = generate_with_truth(spec)
    except SpecError as exc:
        raise ConfigError(str(exc), field="synth_rules") from None
    write_csv(event_log, out / LOG_FILE, config.column_mapping())
    write_truth(truth, out / TRUTH_FILE)
    _finish(config, out)
    log.info("wrote %d traces to %s", len(event_log), out / LOG_FILE)
    return out / LOG_FILE


def cmd_train(config: RunConfig) -> dict:
    """Encode the log, fit the predictor, evaluate it on the test split and
    compare against the mean baseline.  Returns the metrics report."""
    config.validate()
    out = _outdir(config)
    event_log = _ingest(config)
    if len(event_log) == 0:
        raise ConfigError("no valid traces in the input", field="input")
    labeler = config.labeler()
    labeler.check(event_log)
    schema = build_schema(event_log, config.encoding_options())
    dataset = build_dataset(event_log, labeler, schema, config.split_ratios(), config.split_seed,
                            config.max_len_or_none, config.min_prefix_len)
    train, valid, test = (dataset.subset(s) for s in (TRAIN, VALIDATION, TEST))
    log.info("%d items (train %d, validation %d, test %d), M=%d, n=%d",
             len(dataset), len(train), len(valid), len(test), dataset.max_len, schema.width)
    if len(train) == 0:
        raise ConfigError("training split is empty", field="train_ratio")

    predictor = make_predictor(config.predictor, labeler.task, **config.predictor_kwargs())
    t0 = time.perf_counter()
    predictor.fit(train, valid, seed=config.seed)
    log.info("trained %s predictor in %.1fs", predictor.name, time.perf_counter() - t0)
    baseline = MeanPredictor(labeler.task).fit(train, valid, seed=config.seed)

    report = {"kpi": labeler.name, "predictor": predictor.name, "items": len(dataset),
              "train": len(train), "validation": len(valid), "test": len(test),
              "max_len": dataset.max_len, "features": schema.width, "fingerprint": schema.fingerprint}
    if len(test):
        report["model"] = evaluate(predictor, test).to_dict()
        report["baseline"] = evaluate(baseline, test).to_dict()
    else:
        log.warning("test split is empty; no metrics computed")
        report["model"] = report["baseline"] = None

    dataset.save(out / DATASET_FILE)
    save_model(predictor, out / MODEL_FILE)
    write_rejections(event_log, out / REJECTED_FILE)
    _write_json(out / METRICS_FILE, report)
    _finish(config, out)
    return report


def cmd_evaluate(config: RunConfig) -> dict:
    out = _outdir(config)
    dataset, predictor = _load_artifacts(config)
    test = dataset.subset(TEST)
    if len(test) == 0:
        log.warning("test split is empty; nothing to evaluate")
        report = None
    else:
        report = evaluate(predictor, test).to_dict()
    _write_json(out / EVALUATION_FILE, {"predictor": predictor.name, "test": len(test), "metrics": report})
    _finish(config, out)
    return report


def cmd_explain_offline(config: RunConfig):
    """Explain every test prefix and render the heatmap.  Returns the
    :class:`~xppm.reporting.HeatmapMatrix`."""
    config.validate()
    out = _outdir(config)
    dataset, predictor = _load_artifacts(config)
    schema = dataset.schema
    test_idx = np.flatnonzero(dataset.splits == TEST)
    if len(test_idx) == 0:
        log.warning("test split is empty; writing an empty heatmap")
        results = []
    else:
        background = _background(config, dataset)
        tasks = [(int(k), dataset.prefix(int(k))) for k in test_idx]
        t0 = time.perf_counter()
        results = explain_many(predictor, background, schema, config.explain_options(), tasks, config.jobs)
        log.info("explained %d prefixes in %.1fs", len(tasks), time.perf_counter() - t0)
    n_exact = sum(1 for est, _ in results if est == EXACT)
    n_sampled = len(results) - n_exact
    log.info("shapley estimator: %d exact, %d sampled", n_exact, n_sampled)

    medians = feature_medians(dataset)
    per_prefix = [records for _, records in results]
    hm = aggregate_heatmap(per_prefix, config.window, medians, config.top_rows or None, dataset.labeler.name)
    render_heatmap(hm, out / HEATMAP_CSV, out / HEATMAP_SVG)
    ids = [f"{dataset.case_ids[k]}:{dataset.prefix_lens[k]}" for k in test_idx]
    write_records(out / OFFLINE_RECORDS, list(zip(ids, per_prefix)))
    _write_json(out / OFFLINE_SUMMARY, {
        "prefixes": len(results), "exact": n_exact, "sampled": n_sampled,
        "rows": len(hm.rows), "window": config.window,
    })
    _finish(config, out)
    return hm


def _online_mapping(config: RunConfig, schema):
    """Column mapping whose attribute kinds follow the trained schema."""
    kinds = {CATEGORICAL: [], NUMERIC: [], BOOLEAN: []}
    for a in schema.attributes:
        if a.name != "ACTIVITY" and a.kind in kinds:
            kinds[a.kind].append(a.name)
    return config.column_mapping(categorical=kinds[CATEGORICAL], numeric=kinds[NUMERIC], boolean=kinds[BOOLEAN])


def cmd_explain_online(config: RunConfig, running_cases: Optional[str] = None) -> str:
    """Predict and explain each running case.  Returns the table CSV text."""
    config.validate()
    path = running_cases or config.running_cases
    if not path:
        raise ConfigError("no running-cases file given", field="running_cases")
    out = _outdir(config)
    dataset, predictor = _load_artifacts(config)
    schema = dataset.schema
    running = _ingest(config, path, _online_mapping(config, schema))
    M = dataset.max_len
    tasks = []
    for k, t in enumerate(running):
        events = t.events[-M:]
        if len(t) > M:
            log.info("case %s: keeping the last %d of %d events", t.case_id, M, len(t))
        tasks.append((k, encode_prefix(schema, events, M, start_time=t.events[0].timestamp)))
    rows = []
    explained = []
    if tasks:
        background = _background(config, dataset)
        results = explain_many(predictor, background, schema, config.explain_options(), tasks, config.jobs)
        preds = predictor.predict_arrays(np.stack([x.matrix for _, x in tasks]), np.array([x.length for _, x in tasks]))
        for t, (_, records), p in zip(running, results, preds):
            rows.append((t.case_id, float(p), records))
            explained.append((t.case_id, records))
    text = render_online_table(rows, dataset.labeler.kind, config.top_k, feature_medians(dataset), out / ONLINE_TABLE)
    write_records(out / ONLINE_RECORDS, explained)
    write_rejections(running, out / "online_rejected_rows.txt")
    _finish(config, out)
    return text


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain-offline": cmd_explain_offline,
    "explain-online": cmd_explain_online,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xppm", description="Explainable predictive process monitoring.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("-c", "--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("-o", "--output-dir", help="same as --set output_dir=...")
        p.add_argument("-i", "--input", help="same as --set input=...")
        p.add_argument("-j", "--jobs", type=int, help="same as --set jobs=...")
        if name == "explain-online":
            p.add_argument("cases", nargs="?", help="running-cases CSV (overrides running_cases)")
    return parser


def load_config(args) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        config = RunConfig()
    overrides = list(args.set)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if args.input:
        overrides.append(f"input={args.input}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if getattr(args, "cases", None):
        overrides.append(f"running_cases={args.cases}")
    return config.override(overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        result = COMMANDS[args.command](config)
    except (ConfigError, RowError, SpecError) as exc:
        print(f"xppm: validation error: {exc}", file=sys.stderr)
        return 1
    except FingerprintMismatch as exc:
        print(f"xppm: runtime error: output_dir: {exc}", file=sys.stderr)
        return 2
    except (XppmError, OSError, ValueError) as exc:
        print(f"xppm: runtime error: {exc}", file=sys.stderr)
        return 2
    if args.command == "train" and result and result.get("model"):
        print(json.dumps({"model": result["model"], "baseline": result["baseline"]}, sort_keys=True))
    elif args.command == "explain-online":
        sys.stdout.write(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
