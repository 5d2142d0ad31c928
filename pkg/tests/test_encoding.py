import numpy as np
import pytest

from conftest import make_log, make_trace
from xppm.encoding import (
    TEST,
    TIME_FROM_START,
    TRAIN,
    VALIDATION,
    Dataset,
    EncodingOptions,
    FeatureSchema,
    SplitRatios,
    build_dataset,
    build_schema,
    decode_prefix,
    decode_row,
    default_max_len,
    encode_prefix,
    feature_medians,
    split_of,
)
from xppm.errors import EncodingError, FingerprintMismatch
from xppm.event_log import MISSING, Event, KpiLabeler

RAW = EncodingOptions(scale_numeric=False, time_from_start=False)


def role_log():
    return make_log([
        make_trace("1", ["A", "B"], ROLE=["a", "b"], AMOUNT=[42.0, 7.0]),
        make_trace("2", ["A"], ROLE=["c"], AMOUNT=[1.0]),
    ])


def test_width_three_onehot_plus_numeric():
    log = make_log([make_trace("1", ["A"], ROLE=["a"], AMOUNT=[1.0]),
                    make_trace("2", ["A"], ROLE=["b"], AMOUNT=[2.0]),
                    make_trace("3", ["A"], ROLE=["c"], AMOUNT=[3.0])])
    schema = build_schema(log, EncodingOptions(scale_numeric=False, time_from_start=False, exclude=("ACTIVITY",)))
    assert schema.width == 4


def test_onehot_fragment_and_raw_numeric():
    schema = build_schema(role_log(), RAW)
    x = encode_prefix(schema, [Event({"ACTIVITY": "A", "ROLE": "b", "AMOUNT": 42.0}, 0.0)], 1)
    groups = schema.groups()
    assert list(x.matrix[0, groups["ROLE"]]) == [0.0, 1.0, 0.0]
    assert x.matrix[0, groups["AMOUNT"][0]] == 42.0


def test_padding_layout():
    schema = build_schema(role_log(), RAW)
    t = role_log().traces[0]
    x = encode_prefix(schema, t.events, 4)
    assert x.length == 2 and x.first_real_row == 2
    assert not x.matrix[:2].any()
    one = encode_prefix(schema, t.events[:1], 1).matrix[0]
    assert np.array_equal(x.matrix[2], one)


def test_missing_categorical_sets_sentinel():
    log = make_log([make_trace("1", ["A", "B"], ROLE=["a", None])])
    schema = build_schema(log, RAW)
    x = encode_prefix(schema, log.traces[0].events, 2)
    g = schema.groups()["ROLE"]
    values = [schema.features[j].value for j in g]
    assert list(x.matrix[1, g]) == [1.0 if v == MISSING else 0.0 for v in values]


def test_decode_reproduces_assignments():
    log = role_log()
    schema = build_schema(log, RAW)
    t = log.traces[0]
    x = encode_prefix(schema, t.events, 5)
    assert decode_prefix(schema, x) == [e.assignments for e in t.events]


def test_scaled_values_round_trip_closely():
    log = role_log()
    schema = build_schema(log, EncodingOptions())
    x = encode_prefix(schema, log.traces[0].events, 3)
    amounts = [r["AMOUNT"] for r in decode_prefix(schema, x)]
    assert amounts == pytest.approx([42.0, 7.0], abs=1e-12)
    assert 0.0 <= x.matrix.min() and x.matrix.max() <= 1.0


def test_time_from_start_feature():
    log = make_log([make_trace("1", ["A", "B", "C"], [10, 40, 110])])
    schema = build_schema(log, EncodingOptions(scale_numeric=False))
    x = encode_prefix(schema, log.traces[0].events, 3)
    j = [f.attribute for f in schema.features].index(TIME_FROM_START)
    assert list(x.matrix[:, j]) == [0.0, 30.0, 100.0]
    assert TIME_FROM_START not in decode_row(schema, x.matrix[2])


def test_unseen_value_encodes_zero_group(caplog):
    schema = build_schema(role_log(), RAW)
    x = encode_prefix(schema, [Event({"ACTIVITY": "Z", "ROLE": "a", "AMOUNT": 0.0}, 0.0)], 1)
    assert not x.matrix[0, schema.groups()["ACTIVITY"]].any()
    assert "unseen" in caplog.text


def test_cardinality_cap():
    log = make_log([make_trace(str(k), ["A"], ID=[f"v{k}"]) for k in range(5)])
    with pytest.raises(EncodingError, match="exclude"):
        build_schema(log, EncodingOptions(cardinality_cap=4))


def test_prefix_longer_than_max_len_rejected():
    schema = build_schema(role_log(), RAW)
    with pytest.raises(EncodingError):
        encode_prefix(schema, role_log().traces[0].events, 1)


def test_schema_serialisation_keeps_fingerprint():
    schema = build_schema(role_log(), EncodingOptions())
    back = FeatureSchema.from_dict(schema.to_dict())
    assert back.fingerprint == schema.fingerprint
    other = build_schema(make_log([make_trace("9", ["Q"])]), EncodingOptions())
    assert other.fingerprint != schema.fingerprint


def test_dataset_item_count_and_final_targets():
    log = make_log([make_trace("a", "AB"), make_trace("b", "ABC"), make_trace("c", "ABCD")])
    schema = build_schema(log, EncodingOptions())
    ds = build_dataset(log, KpiLabeler.remaining_time(), schema, max_len=4)
    assert len(ds) == 9
    last = [k for k in range(len(ds)) if ds.prefix_lens[k] == {"a": 2, "b": 3, "c": 4}[ds.case_ids[k]]]
    assert np.all(ds.y[last] == 0)


def test_split_is_deterministic_and_by_trace():
    log = make_log([make_trace(f"c{k}", "ABC") for k in range(60)])
    schema = build_schema(log, EncodingOptions())
    a = build_dataset(log, KpiLabeler.remaining_time(), schema, seed=3)
    b = build_dataset(log, KpiLabeler.remaining_time(), schema, seed=3)
    assert np.array_equal(a.splits, b.splits)
    for cid in set(a.case_ids):
        assert len(set(a.splits[a.case_ids == cid])) == 1
    assert {TRAIN, VALIDATION, TEST} == set(a.splits)
    c = build_dataset(log, KpiLabeler.remaining_time(), schema, seed=4)
    assert not np.array_equal(a.splits, c.splits)


def test_split_ratios_roughly_respected():
    tags = [split_of(f"case{k}", 0) for k in range(6000)]
    assert tags.count(TRAIN) / 6000 == pytest.approx(2 / 3 * 0.8, abs=0.02)
    assert tags.count(TEST) / 6000 == pytest.approx(1 / 3, abs=0.02)
    with pytest.raises(ValueError):
        SplitRatios(0.5, 0.5, 0.5)


def test_default_max_len_95th_percentile():
    assert default_max_len(list(range(1, 101))) == 95
    assert default_max_len([3]) == 3


def test_truncation_keeps_case_start():
    log = make_log([make_trace("a", "ABCDE", [0, 10, 20, 30, 40])])
    schema = build_schema(log, EncodingOptions(scale_numeric=False))
    ds = build_dataset(log, KpiLabeler.remaining_time(), schema, max_len=2)
    j = [f.attribute for f in schema.features].index(TIME_FROM_START)
    full = ds.prefix(4)  # all five events, last two kept
    assert full.length == 2
    assert list(full.matrix[:, j]) == [30.0, 40.0]


def test_dataset_save_load(tmp_path):
    log = role_log()
    schema = build_schema(log, EncodingOptions())
    ds = build_dataset(log, KpiLabeler.remaining_time(), schema, max_len=3)
    p = tmp_path / "ds.npz"
    ds.save(p)
    back = Dataset.load(p, fingerprint=schema.fingerprint)
    assert np.array_equal(back.X, ds.X) and list(back.case_ids) == list(ds.case_ids)
    assert back.schema.fingerprint == schema.fingerprint
    ds.save(tmp_path / "again.npz")
    assert p.read_bytes() == (tmp_path / "again.npz").read_bytes()
    with pytest.raises(FingerprintMismatch):
        Dataset.load(p, fingerprint="0" * 64)


def test_feature_medians_use_last_rows():
    log = make_log([make_trace(f"c{k}", ["A"], AMOUNT=[float(k)]) for k in range(30)])
    schema = build_schema(log, RAW)
    ds = build_dataset(log, KpiLabeler.remaining_time(), schema, ratios=SplitRatios(1.0, 0.0, 0.0), max_len=1)
    assert feature_medians(ds)["AMOUNT"] == 14.5
