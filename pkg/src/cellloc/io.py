"""Line-delimited dataset files and the flat key-value run configuration."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import yaml

from cellloc.domain import (
    FeatureVector,
    GpsFix,
    InvalidInput,
    LabeledSample,
    PlanarPoint,
    ProviderRecord,
    SampleSource,
    TowerObservation,
    TowerRegistry,
)

SCHEMA_VERSION = 1
RECORDS_SCHEMA = "cellloc/provider-records"
FIXES_SCHEMA = "cellloc/gps-fixes"
TRUTH_SCHEMA = "cellloc/ground-truth"
SAMPLES_SCHEMA = "cellloc/labeled-samples"

RECORDS_FILE = "provider_records.jsonl"
FIXES_FILE = "gps_fixes.jsonl"
TRUTH_FILE = "ground_truth.jsonl"
WORLD_FILE = "world.json"


class SchemaError(InvalidInput):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


def _write(path: Path, schema: str, rows: Iterable[dict], **header) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"schema": schema, "version": SCHEMA_VERSION, **header}) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")


def _read(path: Path, schema: str) -> tuple[dict, Iterator[dict]]:
    fh = open(path, encoding="utf-8")
    first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        fh.close()
        raise SchemaError(f"{path}: header line is not JSON") from exc
    if header.get("schema") != schema:
        fh.close()
        raise SchemaError(f"{path}: expected schema {schema!r}, found {header.get('schema')!r}")
    if header.get("version") != SCHEMA_VERSION:
        fh.close()
        raise SchemaError(f"{path}: unsupported schema version {header.get('version')!r}")

    def rows():
        with fh:
            for n, line in enumerate(fh, start=2):
                if line.strip():
                    try:
                        yield json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise SchemaError(f"{path}:{n}: malformed line") from exc

    return header, rows()


def _obs(o: TowerObservation) -> dict:
    return {"tower_id": o.tower_id, "rnc": o.rnc, "rss": o.rss}


def record_to_dict(r: ProviderRecord) -> dict:
    return {
        "event_type": r.event_type,
        "timestamp": r.timestamp,
        "phone_id": r.phone_id,
        "active_cells": [_obs(o) for o in r.active_cells],
        "neighbor_cells": [_obs(o) for o in r.neighbor_cells],
    }


def record_from_dict(d: dict) -> ProviderRecord:
    try:
        return ProviderRecord(
            str(d.get("event_type", "")),
            int(d["timestamp"]),
            str(d["phone_id"]),
            tuple(TowerObservation(str(o["tower_id"]), str(o.get("rnc", "")), float(o["rss"]))
                  for o in d["active_cells"]),
            tuple(TowerObservation(str(o["tower_id"]), str(o.get("rnc", "")), float(o["rss"]))
                  for o in d.get("neighbor_cells", [])),
        )
    except KeyError as exc:
        raise SchemaError(f"provider record missing field {exc}") from exc


def write_records(path, records: Iterable[ProviderRecord]) -> None:
    _write(path, RECORDS_SCHEMA, (record_to_dict(r) for r in records))


def read_records(path) -> list[ProviderRecord]:
    _, rows = _read(path, RECORDS_SCHEMA)
    return [record_from_dict(d) for d in rows]


def write_fixes(path, fixes: Iterable[GpsFix], time_base: str = "phone-local") -> None:
    _write(path, FIXES_SCHEMA,
           ({"phone_id": f.phone_id, "timestamp": f.timestamp, "lat": f.lat, "lon": f.lon} for f in fixes),
           time_base=time_base)


def read_fixes(path) -> list[GpsFix]:
    _, rows = _read(path, FIXES_SCHEMA)
    return [GpsFix(str(d["phone_id"]), int(d["timestamp"]), float(d["lat"]), float(d["lon"])) for d in rows]


def write_truth(path, truth: dict[tuple[str, int], tuple[float, float]]) -> None:
    rows = ({"phone_id": p, "timestamp": t, "lat": ll[0], "lon": ll[1]} for (p, t), ll in sorted(truth.items()))
    _write(path, TRUTH_SCHEMA, rows)


def read_truth(path) -> dict[tuple[str, int], tuple[float, float]]:
    _, rows = _read(path, TRUTH_SCHEMA)
    return {(str(d["phone_id"]), int(d["timestamp"])): (float(d["lat"]), float(d["lon"])) for d in rows}


def write_samples(path, samples: Iterable[LabeledSample], registry: TowerRegistry,
                  origin: tuple[float, float]) -> None:
    rows = ({
        "x": s.location.x, "y": s.location.y, "source": s.source.value,
        "rss": s.features.rss.tolist(), "bits": s.features.active_bits.astype(int).tolist(),
    } for s in samples)
    _write(path, SAMPLES_SCHEMA, rows, towers=list(registry.tower_ids), origin=list(origin))


def read_samples(path) -> tuple[list[LabeledSample], TowerRegistry, tuple[float, float]]:
    header, rows = _read(path, SAMPLES_SCHEMA)
    registry = TowerRegistry(tuple(header["towers"]))
    origin = tuple(header["origin"])
    out = []
    for d in rows:
        fv = FeatureVector(np.array(d["rss"], dtype=float), np.array(d["bits"], dtype=float))
        if len(fv) != 2 * len(registry):
            raise SchemaError("sample width does not match the tower registry")
        out.append(LabeledSample(fv, PlanarPoint(float(d["x"]), float(d["y"])), SampleSource(d["source"])))
    return out, registry, origin


def write_sim(out_dir, sim) -> dict[str, Path]:
    """Write a simulator run: training-visible files at top level, ground truth under ``truth/``."""
    out_dir = Path(out_dir)
    paths = {
        "records": out_dir / RECORDS_FILE,
        "fixes": out_dir / FIXES_FILE,
        "truth": out_dir / "truth" / TRUTH_FILE,
        "world": out_dir / "truth" / WORLD_FILE,
    }
    write_records(paths["records"], sim.records)
    write_fixes(paths["fixes"], sim.fixes)
    write_truth(paths["truth"], sim.truth)
    world = {
        "towers": [{"tower_id": t.tower_id, "rnc": t.rnc, "x": t.x, "y": t.y} for t in sim.world.towers],
        "origin": list(sim.world.cfg.origin),
        "clock_offset_ms": sim.world.cfg.clock_offset_ms,
        "seed": sim.world.cfg.seed,
    }
    paths["world"].write_text(json.dumps(world, indent=1) + "\n")
    return paths


def load_config(path, cls):
    """Read a flat key-value YAML file into dataclass ``cls``; unknown keys are rejected."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise InvalidInput(f"{path}: config must be a flat mapping")
    return config_from_mapping(raw, cls)


def config_from_mapping(raw: dict, cls):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise InvalidInput(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)
