"""File-to-file steps behind the service endpoints and CLI verbs."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, fields, replace
from pathlib import Path

from cellloc import io
from cellloc.augmenter import AugmentReport, augment
from cellloc.domain import FeatureStats, InvalidInput, TowerRegistry, centroid_origin
from cellloc.evaluation import (
    PipelineConfig,
    SweepSpec,
    config_dict,
    feature_mask_for,
    gps_traces,
    run_pipeline,
    run_sweep,
    write_cdf,
    write_summary,
    write_sweep,
)
from cellloc.grid import build_grid
from cellloc.model import save_model, train
from cellloc.simulator import SimConfig, generate
from cellloc.synchronizer import SyncConfig, fixes_to_gmt, synchronize

log = logging.getLogger(__name__)


def simulate(cfg: SimConfig, out_dir) -> dict:
    sim = generate(cfg)
    paths = io.write_sim(out_dir, sim)
    return {"records": len(sim.records), "fixes": len(sim.fixes),
            "paths": {k: str(v) for k, v in paths.items()}}


def sync(records_path, fixes_path, out_path, cfg: PipelineConfig) -> dict:
    records = io.read_records(records_path)
    sync_cfg = SyncConfig(cfg.psi_ms, cfg.clock_offset_ms)
    fixes = fixes_to_gmt(io.read_fixes(fixes_path), sync_cfg)
    origin = centroid_origin([(f.lat, f.lon) for f in fixes])
    registry = TowerRegistry.from_records(records)
    stats = FeatureStats()
    samples, report = synchronize(records, fixes, sync_cfg, origin, registry, stats)
    io.write_samples(out_path, samples, registry, origin)
    return {"report": report.as_dict(), "samples": len(samples), "skipped_towers": stats.skipped_towers,
            "conflicts": stats.conflicts, "out": str(out_path)}


def augment_file(samples_path, fixes_path, out_path, cfg: PipelineConfig) -> dict:
    sparse, registry, origin = io.read_samples(samples_path)
    fixes = fixes_to_gmt(io.read_fixes(fixes_path), SyncConfig(cfg.psi_ms, cfg.clock_offset_ms))
    rep = AugmentReport()
    dense = augment(sparse, gps_traces(fixes, origin), cfg.augment_config(), cfg.gp_hyperparams(),
                    registry, cfg.rss_bounds, rep)
    io.write_samples(out_path, dense, registry, origin)
    return {"input": len(sparse), "output": len(dense), "report": asdict(rep), "out": str(out_path)}


def train_file(samples_path, model_path, cfg: PipelineConfig) -> dict:
    data, registry, origin = io.read_samples(samples_path)
    grid = build_grid([s.location for s in data], cfg.grid_cell_length_m)
    net, trace = train(data, grid, registry, cfg.network_config(), feature_mask_for(cfg, registry))
    net.origin = origin
    Path(model_path).parent.mkdir(parents=True, exist_ok=True)
    save_model(net, model_path)
    return {"model": str(model_path), "K": grid.K, "n_parameters": net.n_parameters,
            "final_loss": trace.final_loss, "epochs": len(trace.epoch_losses)}


def _load_dataset(data_dir):
    d = Path(data_dir)
    return (io.read_records(d / io.RECORDS_FILE), io.read_fixes(d / io.FIXES_FILE),
            io.read_truth(d / "truth" / io.TRUTH_FILE))


def evaluate_dir(data_dir, out_dir, cfg: PipelineConfig) -> dict:
    """Full pipeline on a simulator-layout directory; writes model, summaries and CDFs to ``out_dir``."""
    records, fixes, truth = _load_dataset(data_dir)
    res = run_pipeline(records, fixes, truth, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(res.model, out / "model.npz")
    ev = res.evaluation
    write_summary(out / "summary_fused.tsv", ev.fused)
    write_cdf(out / "cdf_fused.tsv", ev.fused)
    write_summary(out / "summary_cell_center.tsv", ev.cell_center)
    for name, s in ev.baselines.items():
        write_summary(out / f"summary_{name}.tsv", s)
        write_cdf(out / f"cdf_{name}.tsv", s)
    (out / "config.json").write_text(json.dumps(config_dict(cfg), indent=1, sort_keys=True) + "\n")
    return {
        "fused": ev.fused.quantiles(),
        "cell_center": ev.cell_center.quantiles(),
        "baselines": {k: v.quantiles() for k, v in ev.baselines.items()},
        "sync_report": res.fitted.sync_report.as_dict(),
        "n_sparse": len(res.fitted.sparse),
        "n_dense": len(res.fitted.dense),
        "K": res.model.grid.K,
        "out": str(out),
    }


def sweep_dir(data_dir, out_dir, parameter: str, values, cfg: PipelineConfig, n_jobs: int = 1) -> dict:
    records, fixes, truth = _load_dataset(data_dir)
    spec = SweepSpec(parameter, tuple(values))
    rows = run_sweep(spec, cfg, records, fixes, truth, n_jobs=n_jobs)
    table = write_sweep(out_dir, spec, rows)
    return {"table": str(table),
            "rows": [{"value": r.value, "median": r.median, "extrapolation": r.extrapolation} for r in rows]}


def with_overrides(cfg, overrides: dict | None):
    if not overrides:
        return cfg
    unknown = sorted(set(overrides) - {f.name for f in fields(cfg)})
    if unknown:
        raise InvalidInput(f"unknown config keys: {', '.join(unknown)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return replace(cfg, **clean)
