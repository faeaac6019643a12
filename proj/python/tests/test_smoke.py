import json
import os
from pathlib import Path

import numpy as np
import pytest

import bhdetect

DATA = Path(os.environ.get("BHDETECT_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


def test_dbscan_four_points():
    pts = np.array([[0, 0], [0, 0.1], [0.1, 0], [5, 5]])
    assert bhdetect.dbscan(pts, 0.5, 3).tolist() == [0, 0, 0, -1]


def test_validity_indices():
    pts = np.array([[0.0], [1.0], [10.0], [11.0]])
    labels = [0, 0, 1, 1]
    assert bhdetect.silhouette_score(pts, labels) == pytest.approx(0.8997, abs=1e-3)
    assert bhdetect.davies_bouldin_score(pts, labels) == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(bhdetect.Error, match="silhouette undefined"):
        bhdetect.silhouette_score(pts, [0, 0, 0, 0])


def test_split_counts():
    s = bhdetect.split_indices(17280)
    assert (len(s["train"]), len(s["test"]), len(s["validation"])) == (12096, 5184, 2592)
    with pytest.raises(bhdetect.Error):
        bhdetect.split_indices(5)


def test_bhmm_on_fixture():
    fx = bhdetect.make_redundancy_fixture(seed=1, rows=3000)
    assert len(fx["columns"]) == 220
    out = bhdetect.bhmm(fx["timestamps"], fx["columns"], fx["values"])
    assert len(out["columns"]) == 88
    assert out["values"].shape == (3000, 88)
    assert out["report"]["final_columns"] == out["columns"]
    with pytest.raises(bhdetect.ConfigError):
        bhdetect.bhmm(fx["timestamps"], fx["columns"], fx["values"], corr_threshold=1.5)


def test_simulate_pdr_scenario():
    out = bhdetect.simulate_scenario(DATA / "pdr_scenario.json")
    assert out["values"].shape[0] == len(out["timestamps"])
    assert [e[0] for e in out["events"]] == ["Node-1", "Node-8", "Node-7"]
    assert out["labels"].shape == (len(out["timestamps"]), len(out["label_nodes"]))
    assert out["labels"].any()


def test_cli_roundtrip(tmp_path):
    code, _, err = bhdetect.run_cli(["simulate", "--scenario", str(DATA / "pdr_scenario.json"),
                                     "--out", str(tmp_path)])
    assert code == 0, err
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "telemetry.csv" in manifest["artifacts"]
    code, _, err = bhdetect.run_cli(["evaluate", "--out", str(tmp_path / "nothing")])
    assert code == 1
