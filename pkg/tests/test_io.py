import numpy as np
import pytest

from conftest import record
from cellloc.domain import FeatureVector, GpsFix, InvalidInput, LabeledSample, PlanarPoint, SampleSource, TowerRegistry
from cellloc.evaluation import PipelineConfig
from cellloc.io import (
    SchemaError,
    load_config,
    read_fixes,
    read_records,
    read_samples,
    read_truth,
    write_fixes,
    write_records,
    write_samples,
    write_truth,
)


def test_records_round_trip(tmp_path):
    recs = [record(t=5, active=[("T0", -61.25)], neighbors=[("T1", -90.0)]), record(t=9, phone="B")]
    write_records(tmp_path / "r.jsonl", recs)
    assert read_records(tmp_path / "r.jsonl") == recs
    header = (tmp_path / "r.jsonl").read_text().splitlines()[0]
    assert '"schema":"cellloc/provider-records"' in header and '"version":1' in header


def test_fixes_and_truth_round_trip(tmp_path):
    fixes = [GpsFix("A", 1, 31.2, 29.9), GpsFix("B", 2, -10.5, 100.25)]
    write_fixes(tmp_path / "f.jsonl", fixes)
    assert read_fixes(tmp_path / "f.jsonl") == fixes
    truth = {("A", 1): (31.2, 29.9)}
    write_truth(tmp_path / "t.jsonl", truth)
    assert read_truth(tmp_path / "t.jsonl") == truth


def test_samples_round_trip(tmp_path):
    reg = TowerRegistry(("a", "b"))
    s = [LabeledSample(FeatureVector([-60.5, 0], [1, 0]), PlanarPoint(1.5, -2.25), SampleSource.AUGMENTED)]
    write_samples(tmp_path / "s.jsonl", s, reg, (31.2, 29.9))
    back, reg2, origin = read_samples(tmp_path / "s.jsonl")
    assert reg2 == reg and origin == (31.2, 29.9)
    assert back[0].features == s[0].features and back[0].location == s[0].location
    assert back[0].source is SampleSource.AUGMENTED


def test_wrong_schema_rejected(tmp_path):
    write_fixes(tmp_path / "f.jsonl", [GpsFix("A", 1, 0, 0)])
    with pytest.raises(SchemaError):
        read_records(tmp_path / "f.jsonl")
    (tmp_path / "bad.jsonl").write_text("not json\n")
    with pytest.raises(SchemaError):
        read_records(tmp_path / "bad.jsonl")


def test_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("grid_cell_length_m: 200\nn_augmented: 500\nfingerprint_model: RSS only\nhidden_layers: [8, 4]\n")
    cfg = load_config(p, PipelineConfig)
    assert cfg.grid_cell_length_m == 200 and cfg.n_augmented == 500
    assert cfg.fingerprint_model == "RSS only" and cfg.hidden_layers == (8, 4)
    p.write_text("bogus: 1\n")
    with pytest.raises(InvalidInput, match="bogus"):
        load_config(p, PipelineConfig)
