import csv
import json
import os

import pytest
from conftest import tiny_chain_spec

from rirl.cli import main

TINY_FLAGS = ["--latent_dim", "4", "--num_keys", "1", "--hidden_width", "16",
              "--epochs", "2", "--explore_epochs", "2", "--batch_size", "32",
              "--folds", "4", "--seed", "7"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One full pipeline run: synth -> init -> edge -> explore -> report."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "dag.json"
    tiny_chain_spec().to_json(str(spec_path))
    data = str(root / "data.csv")
    models = str(root / "models")
    reports = str(root / "reports")
    run_dir = str(root / "run")

    assert main(["synth", str(spec_path), "--days", "260", "--out", data,
                 "--seed", "7"]) == 0
    assert main(["init", "--data", data, "--out", models] + TINY_FLAGS) == 0
    assert main(["edge", "--causes", "A", "--effect", "B", "--data", data,
                 "--models", models] + TINY_FLAGS) == 0
    cands = root / "cands.json"
    cands.write_text(json.dumps({"B": ["A"]}))
    assert main(["explore", "--candidates", str(cands), "--data", data,
                 "--models", models, "--out", reports] + TINY_FLAGS) == 0
    assert main(["report", run_dir, "--format", "csv", "--data", data,
                 "--models", models] + TINY_FLAGS) == 0
    assert main(["report", run_dir, "--format", "svg", "--data", data,
                 "--models", models] + TINY_FLAGS) == 0
    return {"root": root, "spec": str(spec_path), "data": data,
            "models": models, "reports": reports, "run_dir": run_dir,
            "cands": str(cands)}


# ------------------------------------------------------------ pipeline

def test_synth_writes_the_dataset(workspace):
    assert os.path.exists(workspace["data"])
    with open(workspace["data"], newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["date", "A.a0", "A.a1", "B.a0", "B.a1"]


def test_init_saves_models_metrics_and_config(workspace):
    models = workspace["models"]
    for name in ("A.json", "B.json", "node_metrics.csv", "config_used.txt"):
        assert os.path.exists(os.path.join(models, name)), name
    with open(os.path.join(models, "node_metrics.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["node"] for r in rows] == ["A", "B"]
    assert all(float(r["rmse_scaled"]) > 0 for r in rows)


def test_edge_saves_the_relation_and_its_metrics(workspace):
    models = workspace["models"]
    assert os.path.exists(os.path.join(models, "rel_A__B.json"))
    with open(os.path.join(models, "rel_A__B_metrics.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["effect"] == "B" and rows[0]["causes"] == "A"


def test_explore_emits_rounds_edges_and_summary(workspace):
    reports = workspace["reports"]
    with open(os.path.join(reports, "explore_edges.json")) as fh:
        edges = json.load(fh)
    assert edges == [["A", "B"]]
    with open(os.path.join(reports, "explore_rounds.csv")) as fh:
        header = fh.readline().strip().split(",")
    assert header == ["round", "A->B"]
    assert os.path.exists(os.path.join(reports, "explore_rounds.txt"))
    with open(os.path.join(reports, "explore_summary.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "A->B"]
    assert rows[1][0] == "KLD" and rows[2][0] == "Gain"


def test_report_writes_tables_and_plots(workspace):
    run_dir = workspace["run_dir"]
    with open(os.path.join(run_dir, "report_relations.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["effect"] == "B"
    assert os.path.exists(os.path.join(run_dir, "report_nodes.csv"))
    assert os.path.exists(os.path.join(run_dir, "plot_B.svg"))
    assert os.path.exists(os.path.join(run_dir, "plot_B.csv"))


def test_synth_prints_a_summary_table(workspace, capsys, tmp_path):
    out = str(tmp_path / "again.csv")
    assert main(["synth", workspace["spec"], "--days", "120", "--out", out,
                 "--seed", "7"]) == 0
    printed = capsys.readouterr().out
    assert "nonzero_rate" in printed
    assert f"wrote {out} (120 rows, 2 nodes)" in printed


def test_explore_prints_edges_and_stop_reason(workspace, capsys, tmp_path):
    out = str(tmp_path / "rep2")
    assert main(["explore", "--candidates", workspace["cands"],
                 "--data", workspace["data"], "--models", workspace["models"],
                 "--out", out] + TINY_FLAGS) == 0
    printed = capsys.readouterr().out
    assert "A -> B" in printed
    assert "stop: exhausted" in printed


# --------------------------------------------------- config precedence

def test_flags_override_the_config_file(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 5\nlatent_dim = 4\nnum_keys = 1\n"
                   "hidden_width = 16\nbatch_size = 32\nfolds = 4\nseed = 7\n")
    out = str(tmp_path / "models")
    assert main(["init", "--data", workspace["data"], "--out", out,
                 "--config", str(cfg), "--epochs", "2"]) == 0
    used = (tmp_path / "models" / "config_used.txt").read_text()
    lines = {k.strip(): v.strip() for k, _, v in
             (line.partition("=") for line in used.strip().split("\n"))}
    assert lines["epochs"] == "2"          # flag wins
    assert lines["latent_dim"] == "4"      # file value survives


def test_workers_environment_variable(workspace, tmp_path, monkeypatch,
                                      capsys):
    monkeypatch.setenv("RIRL_WORKERS", "not-a-number")
    assert main(["synth", workspace["spec"], "--days", "30",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert "RIRL_WORKERS must be an integer" in capsys.readouterr().err
    monkeypatch.setenv("RIRL_WORKERS", "1")
    assert main(["synth", workspace["spec"], "--days", "30",
                 "--out", str(tmp_path / "x.csv"), "--seed", "7"]) == 0


# ----------------------------------------------------------- failures

def test_config_errors_exit_2(workspace, tmp_path, capsys):
    assert main(["synth", workspace["spec"], "--days", "0",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["synth", workspace["spec"], "--days", "30"]) == 2
    assert main(["edge", "--causes", "Z", "--effect", "B",
                 "--data", workspace["data"],
                 "--models", workspace["models"]] + TINY_FLAGS) == 2
    assert main(["report", str(tmp_path / "r"), "--format", "pdf",
                 "--data", workspace["data"],
                 "--models", workspace["models"]]) == 2
    bad_cands = tmp_path / "bad.json"
    bad_cands.write_text(json.dumps({"B": ["Q"]}))
    assert main(["explore", "--candidates", str(bad_cands),
                 "--data", workspace["data"], "--models", workspace["models"],
                 "--out", str(tmp_path / "rep")] + TINY_FLAGS) == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 5


def test_data_errors_exit_3(tmp_path, capsys):
    assert main(["init", "--data", str(tmp_path / "ghost.csv"),
                 "--out", str(tmp_path / "m")] + TINY_FLAGS) == 3
    assert "error:" in capsys.readouterr().err


def test_training_errors_exit_4(workspace, tmp_path):
    short = str(tmp_path / "short.csv")
    assert main(["synth", workspace["spec"], "--days", "75", "--out", short,
                 "--seed", "7"]) == 0
    assert main(["edge", "--causes", "A", "--effect", "B", "--data", short,
                 "--models", workspace["models"]] + TINY_FLAGS) == 4


def test_exploration_errors_exit_5(workspace, tmp_path):
    cands = tmp_path / "cyclic.json"
    cands.write_text(json.dumps({"A": ["B"], "B": ["A"]}))
    assert main(["explore", "--candidates", str(cands),
                 "--data", workspace["data"], "--models", workspace["models"],
                 "--out", str(tmp_path / "rep")] + TINY_FLAGS) == 5


def test_persistence_errors_exit_6(workspace, tmp_path):
    assert main(["report", str(tmp_path / "run"), "--format", "csv",
                 "--data", workspace["data"],
                 "--models", str(tmp_path / "missing_models")]) == 6
