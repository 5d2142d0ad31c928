import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN
from xppm.explainer import EQUALS, NOT_EQUALS, NUMERIC, ExplanationRecord
from xppm.reporting import (
    HeatmapMatrix,
    aggregate_heatmap,
    cell_color,
    explanation_label,
    explanation_string,
    format_duration,
    heatmap_csv,
    heatmap_svg,
    render_heatmap,
    render_online_table,
)


def rec(attr, rel, value, offset, w, inst=None):
    return ExplanationRecord(attr, rel, value, offset, w, inst)


def golden_matrix():
    return HeatmapMatrix(
        ["ROLE=BACK-OFFICE", "TYPE!=slow", "Low value of AMOUNT"],
        [0, -1, -2],
        np.array([[-10, 4, 0], [3, 0, -2], [10, 1, -7]]),
        "remaining_time",
        40,
    )


# -- labels -------------------------------------------------------------------------


def test_labels():
    assert explanation_label(rec("ROLE", EQUALS, "BACK-OFFICE", 0, 1)) == "ROLE=BACK-OFFICE"
    assert explanation_label(rec("TYPE", NOT_EQUALS, "slow", 0, 1)) == "TYPE!=slow"
    med = {"AMOUNT": 0.5}
    assert explanation_label(rec("AMOUNT", NUMERIC, None, 0, 1, 0.2), med) == "Low value of AMOUNT"
    assert explanation_label(rec("AMOUNT", NUMERIC, None, 0, 1, 0.5), med) == "High value of AMOUNT"


# -- heatmap ---------------------------------------------------------------------------


def test_three_up_one_down():
    per_prefix = [[rec("ROLE", EQUALS, "BACK-OFFICE", 0, w)] for w in (1.0, 2.0, 0.5, -4.0)]
    hm = aggregate_heatmap(per_prefix)
    assert hm.cell("ROLE=BACK-OFFICE", 0) == 2
    assert hm.offsets == [0, -1, -2, -3, -4]


def test_empty_records_give_empty_matrix():
    hm = aggregate_heatmap([[], [], []])
    assert hm.rows == [] and hm.cells.shape == (0, 5) and hm.max_abs == 0
    assert heatmap_csv(hm) == "explanation,0,-1,-2,-3,-4\n"


def test_prefix_counts_once_by_summed_sign():
    # one prefix with two same-label records: net weight positive -> +1
    per_prefix = [[rec("ACTIVITY", NOT_EQUALS, "A", -1, 3.0), rec("ACTIVITY", NOT_EQUALS, "A", -1, -1.0)]]
    hm = aggregate_heatmap(per_prefix)
    assert hm.cell("ACTIVITY!=A", -1) == 1


def test_window_and_top_rows():
    per_prefix = [[rec("X", EQUALS, str(k), -k, 1.0) for k in range(8)]]
    hm = aggregate_heatmap(per_prefix, window=3)
    assert hm.rows == ["X=0", "X=1", "X=2"]
    per_prefix = [[rec("Y", EQUALS, str(k), 0, 1.0) for k in range(40)]]
    assert len(aggregate_heatmap(per_prefix).rows) == 30
    assert len(aggregate_heatmap(per_prefix, top_rows=None).rows) == 40


def test_row_order_by_peak_then_label():
    per_prefix = [[rec("B", EQUALS, "x", 0, 1.0), rec("A", EQUALS, "x", 0, -1.0)],
                  [rec("C", EQUALS, "x", 0, 1.0)],
                  [rec("C", EQUALS, "x", -1, 1.0)]]
    assert aggregate_heatmap(per_prefix).rows == ["A=x", "B=x", "C=x"]
    per_prefix.append([rec("C", EQUALS, "x", 0, 1.0)])
    assert aggregate_heatmap(per_prefix).rows[0] == "C=x"


records_strategy = st.lists(
    st.lists(
        st.builds(
            rec,
            st.sampled_from(["R", "S"]),
            st.sampled_from([EQUALS, NOT_EQUALS]),
            st.sampled_from(["a", "b"]),
            st.integers(-6, 0),
            st.floats(-5, 5).filter(lambda w: w != 0),
        ),
        max_size=6,
    ),
    max_size=12,
)


@settings(max_examples=80, deadline=None)
@given(records_strategy)
def test_heatmap_properties(per_prefix):
    hm = aggregate_heatmap(per_prefix)
    assert np.abs(hm.cells).max(initial=0) <= len(per_prefix)
    assert np.abs(hm.cells).sum() <= len(per_prefix) * len(hm.rows) * hm.window
    # sign coherence: the cell equals positive prefixes minus negative ones
    for r, label in enumerate(hm.rows):
        for c, off in enumerate(hm.offsets):
            pos = neg = 0
            for recs in per_prefix:
                s = sum(x.weight for x in recs if explanation_label(x) == label and x.timestep_offset == off)
                pos += s > 0
                neg += s < 0
            assert hm.cells[r, c] == pos - neg


# -- rendering -----------------------------------------------------------------------------


def test_golden_csv_and_svg():
    hm = golden_matrix()
    assert heatmap_csv(hm) == (GOLDEN / "heatmap.csv").read_text()
    assert heatmap_svg(hm) == (GOLDEN / "heatmap.svg").read_text()


def test_render_is_byte_deterministic(tmp_path):
    hm = golden_matrix()
    render_heatmap(hm, tmp_path / "a.csv", tmp_path / "a.svg")
    render_heatmap(hm, tmp_path / "b.csv", tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_single_red_cell():
    hm = HeatmapMatrix(["TYPE=slow"], [0], np.array([[5]]), "kpi", 5)
    svg = heatmap_svg(hm)
    assert 'fill="#ff0000"' in svg
    assert ">TYPE=slow<" in svg and ">0<" in svg
    assert "font-family=\"monospace\"" in svg and "<image" not in svg and "@import" not in svg


def test_symmetric_legend():
    hm = HeatmapMatrix(["a", "b"], [0, -1], np.array([[-10, 0], [3, 10]]), "kpi", 10)
    svg = heatmap_svg(hm)
    assert ">-10<" in svg and ">10<" in svg
    assert cell_color(10, 10) == "#ff0000" and cell_color(-10, 10) == "#0000ff"
    assert cell_color(0, 10) == "#ffffff" and cell_color(0, 0) == "#eeeeee"
    legend = re.findall(r'height="10" fill="(#[0-9a-f]{6})"', svg)
    assert legend[0] == "#0000ff" and legend[-1] == "#ff0000" and legend[5] == "#ffffff"


# -- online tables -----------------------------------------------------------------------------


def test_duration_format():
    assert format_duration(5 * 86400 + 6 * 3600 + 7 * 60 + 59) == "5d 6h 7m"
    assert format_duration(0) == "0d 0h 0m"
    assert format_duration(-30) == "0d 0h 0m"


def test_table_shape():
    recs = [
        rec("CLOSURE_TYPE", NOT_EQUALS, "Inheritance", 0, -2.0),
        rec("ROLE", NOT_EQUALS, "BACK-OFFICE", -1, 3.0),
        rec("ROLE", EQUALS, "DIRECTOR", 0, 1.0),
        rec("ACTIVITY", EQUALS, "Check", 0, 0.5),
    ]
    text = render_online_table([("201810011258", 5 * 86400 + 6 * 3600 + 7 * 60, recs), ("x", 60.0, [])], "remaining_time")
    lines = text.splitlines()
    assert lines[0] == "CASE_ID,PREDICTION,INCREASING,DECREASING"
    assert lines[1] == "201810011258,5d 6h 7m,ROLE!=BACK-OFFICE (-1) AND ROLE=DIRECTOR,CLOSURE_TYPE!=Inheritance"
    assert lines[2] == "x,0d 0h 1m,-,-"


def test_table_binary_and_numeric_predictions(tmp_path):
    p = tmp_path / "t.csv"
    render_online_table([("a", 0.7, []), ("b", 0.2, [])], "activity_occurrence", path=p)
    assert p.read_text().splitlines()[1:] == ["a,1,-,-", "b,0,-,-"]
    text = render_online_table([("a", 12.345, [])], "end_of_case_numeric")
    assert text.splitlines()[1] == "a,12.35,-,-"


def test_empty_table_is_header_only():
    assert render_online_table([], "remaining_time") == "CASE_ID,PREDICTION,INCREASING,DECREASING\n"


def test_table_strings_are_heatmap_labels():
    recs = [rec("AMOUNT", NUMERIC, None, -2, 1.0, 0.9), rec("TYPE", EQUALS, "slow", 0, -1.0)]
    med = {"AMOUNT": 0.5}
    labels = set(aggregate_heatmap([recs], medians=med).rows)
    for r in recs:
        s = explanation_string(r, med)
        assert re.sub(r" \(-\d+\)$", "", s) in labels
