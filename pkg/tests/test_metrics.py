import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rirl.errors import MetricError, PersistenceError, PlotError
from rirl.metrics import (MetricRow, NODE_COLUMNS, RELATION_COLUMNS,
                          emit_plot, emit_tables, nse)


# ----------------------------------------------------------------- nse

def test_nse_hand_value_and_perfect_prediction():
    obs = np.array([1.0, 2.0, 3.0, 4.0])
    assert nse(obs, obs) == 1.0
    pred = np.array([1.5, 2.0, 2.5, 4.0])
    want = 1.0 - ((0.5 ** 2) + 0.0 + (0.5 ** 2) + 0.0) / np.sum((obs - 2.5) ** 2)
    assert nse(pred, obs) == pytest.approx(want, rel=0, abs=1e-15)


def test_nse_of_the_mean_predictor_is_zero():
    obs = np.array([2.0, 4.0, 9.0, 1.0])
    pred = np.full(4, obs.mean())
    assert nse(pred, obs) == pytest.approx(0.0, abs=1e-15)


def test_nse_rejects_bad_series():
    with pytest.raises(MetricError, match="equal-length"):
        nse(np.zeros(3), np.zeros(4))
    with pytest.raises(MetricError, match="1-D"):
        nse(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(MetricError, match="2 points"):
        nse(np.zeros(1), np.ones(1))
    with pytest.raises(MetricError, match="constant"):
        nse(np.array([1.0, 2.0]), np.array([3.0, 3.0]))


@given(st.data())
def test_nse_never_exceeds_one(data):
    n = data.draw(st.integers(2, 12))
    finite = st.floats(-100, 100, allow_nan=False)
    obs = np.asarray(data.draw(st.lists(finite, min_size=n, max_size=n)))
    pred = np.asarray(data.draw(st.lists(finite, min_size=n, max_size=n)))
    if np.sum((obs - obs.mean()) ** 2) <= 0.0:
        return
    assert nse(pred, obs) <= 1.0


# -------------------------------------------------------------- tables

def test_node_table_roundtrips_through_csv(tmp_path):
    rows = [{"node": "A", "dim": 2, "nonzero_rate": 0.5, "mean": 1.25,
             "std": 0.5, "min": 0.0, "max": 3.0, "rmse_scaled": 0.1,
             "rmse_unscaled": 0.2, "mask_bce": 0.05}]
    path = emit_tables(rows, str(tmp_path / "nodes.csv"), kind="node")
    with open(path, newline="") as fh:
        records = list(csv.DictReader(fh))
    assert [r for r in records[0]] == NODE_COLUMNS
    assert records[0]["node"] == "A"
    assert float(records[0]["rmse_scaled"]) == 0.1


def test_relation_table_uses_metric_row_fields(tmp_path):
    rows = [MetricRow(effect="B", causes="A", rmse_scaled=0.1,
                      rmse_unscaled=0.9, mask_bce=0.02, latent_kld=1.75)]
    path = emit_tables(rows, str(tmp_path / "rel.csv"), kind="relation")
    with open(path, newline="") as fh:
        header, row = list(csv.reader(fh))
    assert header == RELATION_COLUMNS
    assert row[:2] == ["B", "A"]
    assert float(row[-1]) == 1.75


def test_exploration_table_is_one_column_per_edge(tmp_path):
    rows = [("A->C", 7.6354, 7.6354), ("B->D", 8.5147, 8.5147),
            ("C->D", 9.6502, 1.1355)]
    path = emit_tables(rows, str(tmp_path / "exp.csv"), kind="exploration")
    with open(path, newline="") as fh:
        header, kld, gain = list(csv.reader(fh))
    assert header == ["row", "A->C", "B->D", "C->D"]
    assert kld[0] == "KLD" and gain[0] == "Gain"
    assert float(kld[3]) == 9.6502
    assert float(gain[3]) == 1.1355


def test_emit_tables_rejects_empty_bad_kind_and_unwritable(tmp_path):
    with pytest.raises(PersistenceError, match="no rows"):
        emit_tables([], str(tmp_path / "x.csv"))
    with pytest.raises(PersistenceError, match="unknown kind"):
        emit_tables([("e", 1, 1)], str(tmp_path / "x.csv"), kind="heatmap")
    with pytest.raises(PersistenceError, match="cannot write"):
        emit_tables([("e", 1, 1)], str(tmp_path / "no" / "dir.csv"),
                    kind="exploration")


# --------------------------------------------------------------- plots

def test_plot_writes_parseable_svg_with_a_csv_sidecar(tmp_path):
    rng = np.random.default_rng(0)
    truth = rng.normal(size=40)
    lines = [("fit", truth + 0.1), ("baseline", np.zeros(40))]
    svg_path, csv_path = emit_plot(truth, lines, str(tmp_path / "plot.svg"))
    root = ET.parse(svg_path).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    polylines = root.findall(f"{ns}polyline")
    circles = root.findall(f"{ns}circle")
    assert len(polylines) == 2
    assert len(circles) == 40
    labels = [t.text for t in root.findall(f"{ns}text")]
    assert "fit" in labels and "baseline" in labels and "truth" in labels
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "truth", "fit", "baseline"]
    assert len(rows) == 41
    np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], truth)


def test_plot_appends_svg_suffix_when_missing(tmp_path):
    svg_path, csv_path = emit_plot(np.arange(5.0), [], str(tmp_path / "p"))
    assert svg_path.endswith("p.svg") and csv_path.endswith("p.csv")


def test_plot_survives_a_constant_series(tmp_path):
    svg_path, _ = emit_plot(np.full(6, 2.0), [("flat", np.full(6, 2.0))],
                            str(tmp_path / "flat.svg"))
    ET.parse(svg_path)     # well-formed despite the degenerate value range


def test_plot_rejects_empty_and_ragged_input(tmp_path):
    with pytest.raises(PlotError, match="empty truth"):
        emit_plot(np.array([]), [], str(tmp_path / "x.svg"))
    with pytest.raises(PlotError, match="length differs"):
        emit_plot(np.arange(4.0), [("bad", np.arange(3.0))],
                  str(tmp_path / "x.svg"))
    with pytest.raises(PersistenceError, match="cannot write"):
        emit_plot(np.arange(4.0), [], str(tmp_path / "no" / "x.svg"))
