import json

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from cellloc import io
from cellloc.cli import main
from cellloc.domain import unproject
from cellloc.estimator import estimate_location
from cellloc.model import load_model
from cellloc.service import create_app

FAST = {"epochs": 5, "n_augmented": 50}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    client = TestClient(create_app())
    r = client.post("/simulate", json={"out_dir": str(root / "data"), "seed": 5,
                                       "overrides": {"target_records": 200, "n_towers": 8}})
    assert r.status_code == 200, r.text
    data = root / "data"
    body = {"overrides": FAST}
    r = client.post("/sync", json={**body, "records_path": str(data / io.RECORDS_FILE),
                                   "fixes_path": str(data / io.FIXES_FILE), "out_path": str(root / "sparse.jsonl")})
    assert r.status_code == 200, r.text
    r = client.post("/augment", json={**body, "samples_path": str(root / "sparse.jsonl"),
                                      "fixes_path": str(data / io.FIXES_FILE), "out_path": str(root / "dense.jsonl")})
    assert r.status_code == 200, r.text
    r = client.post("/train", json={**body, "samples_path": str(root / "dense.jsonl"),
                                    "model_path": str(root / "m.npz")})
    assert r.status_code == 200, r.text
    return root


def test_health_without_model():
    r = TestClient(create_app()).get("/health")
    assert r.json() == {"status": "ok", "model_loaded": False, "phones": 0}


def test_sync_report_counts(workspace):
    n_records = len(io.read_records(workspace / "data" / io.RECORDS_FILE))
    samples, _, _ = io.read_samples(workspace / "sparse.jsonl")
    assert len(samples) == n_records


def test_augment_appends(workspace):
    sparse, _, _ = io.read_samples(workspace / "sparse.jsonl")
    dense, _, _ = io.read_samples(workspace / "dense.jsonl")
    assert len(dense) == len(sparse) + 50
    assert dense[: len(sparse)] == sparse


def test_locate_matches_library(workspace):
    records_path = workspace / "data" / io.RECORDS_FILE
    client = TestClient(create_app(str(workspace / "m.npz"), str(records_path)))
    records = io.read_records(records_path)
    phone = records[0].phone_id
    latest = max((r for r in records if r.phone_id == phone), key=lambda r: r.timestamp)
    body = client.post("/locate", json={"phone_id": phone}).json()
    net = load_model(workspace / "m.npz")
    est = estimate_location(net, latest)
    assert body["cell"] == est.cell
    assert body["x"] == est.fused.x and body["y"] == est.fused.y
    assert body["timestamp"] == latest.timestamp
    assert (body["lat"], body["lon"]) == pytest.approx(unproject(est.fused, net.origin), abs=1e-12)


def test_locate_errors(workspace):
    client = TestClient(create_app())
    assert client.post("/locate", json={"phone_id": "x"}).status_code == 409
    client.post("/model", json={"model_path": str(workspace / "m.npz")})
    assert client.post("/locate", json={"phone_id": "x"}).status_code == 404


def test_pushed_record_is_located(workspace):
    client = TestClient(create_app(str(workspace / "m.npz")))
    rec = io.read_records(workspace / "data" / io.RECORDS_FILE)[3]
    assert client.post("/records", json=io.record_to_dict(rec)).status_code == 201
    assert client.post("/locate", json={"phone_id": rec.phone_id}).status_code == 200


def test_bad_override_is_422(workspace):
    r = TestClient(create_app()).post("/train", json={"samples_path": str(workspace / "dense.jsonl"),
                                                      "model_path": "/tmp/x.npz", "overrides": {"bogus": 1}})
    assert r.status_code == 422
    assert "bogus" in r.json()["detail"]


def test_missing_file_is_404(tmp_path):
    r = TestClient(create_app()).post("/train", json={"samples_path": str(tmp_path / "none.jsonl"),
                                                      "model_path": str(tmp_path / "m.npz")})
    assert r.status_code == 404


def test_cli_verbs(workspace, tmp_path):
    runner = CliRunner()
    data = workspace / "data"
    cfg = tmp_path / "c.yaml"
    cfg.write_text("epochs: 5\nn_augmented: 30\n")
    res = runner.invoke(main, ["sync", "--records", str(data / io.RECORDS_FILE), "--fixes", str(data / io.FIXES_FILE),
                               "--out", str(tmp_path / "s.jsonl"), "--report", str(tmp_path / "r.json"),
                               "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "r.json").read_text())["matched"] == json.loads(res.output)["samples"]
    res = runner.invoke(main, ["train", "--samples", str(workspace / "dense.jsonl"), "--out", str(tmp_path / "m.npz"),
                               "--config", str(cfg), "--seed", "9"])
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["epochs"] == 5
    phone = io.read_records(data / io.RECORDS_FILE)[0].phone_id
    res = runner.invoke(main, ["locate", "--phone-id", phone, "--model", str(tmp_path / "m.npz"),
                               "--records", str(data / io.RECORDS_FILE), "--out", str(tmp_path / "loc.json")])
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "loc.json").read_text())["phone_id"] == phone


def test_cli_evaluate_and_sweep(workspace, tmp_path):
    runner = CliRunner()
    args = ["--data", str(workspace / "data"), "--set", "epochs=3", "--set", "n_augmented=20"]
    res = runner.invoke(main, ["evaluate", *args, "--out", str(tmp_path / "ev")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "ev" / "summary_fused.tsv").exists()
    res = runner.invoke(main, ["sweep", *args, "--out", str(tmp_path / "sw"), "--param", "epochs", "--values", "2,3"])
    assert res.exit_code == 0, res.output
    rows = json.loads(res.output)["rows"]
    assert [r["value"] for r in rows] == [2, 3]
    assert np.all(np.isfinite([r["median"] for r in rows]))


def test_cli_simulate_seed(tmp_path):
    runner = CliRunner()
    outs = []
    for name in ("a", "b"):
        res = runner.invoke(main, ["simulate", "--out", str(tmp_path / name), "--seed", "4",
                                   "--set", "target_records=50", "--set", "n_towers=5"])
        assert res.exit_code == 0, res.output
        outs.append((tmp_path / name / io.RECORDS_FILE).read_bytes())
    assert outs[0] == outs[1]


def test_cli_locate_needs_model():
    res = CliRunner().invoke(main, ["locate", "--phone-id", "p"])
    assert res.exit_code != 0
