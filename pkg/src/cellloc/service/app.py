"""HTTP front end over the cellloc workflows and the online locator."""

from __future__ import annotations

import logging
from dataclasses import replace

from fastapi import FastAPI, HTTPException

from cellloc import io, workflows
from cellloc.domain import InvalidInput, unproject
from cellloc.estimator import PhoneNotFound, RecordStore, estimate_location, fetch_by_phone_id
from cellloc.evaluation import PipelineConfig
from cellloc.model import NetworkModel, load_model
from cellloc.service import schemas
from cellloc.simulator import SimConfig

log = logging.getLogger(__name__)


class LocatorState:
    def __init__(self):
        self.model: NetworkModel | None = None
        self.store = RecordStore()

    def load(self, model_path: str, records_path: str | None = None) -> None:
        self.model = load_model(model_path)
        if records_path:
            self.store = RecordStore(io.read_records(records_path))


def _pipeline_config(req: schemas.ConfigOverrides) -> PipelineConfig:
    cfg = io.load_config(req.config_path, PipelineConfig) if req.config_path else PipelineConfig()
    cfg = workflows.with_overrides(cfg, req.overrides)
    if req.seed is not None:
        cfg = replace(cfg, seed=req.seed)
    return cfg


def _sim_config(req: schemas.SimulateRequest) -> SimConfig:
    cfg = io.load_config(req.config_path, SimConfig) if req.config_path else SimConfig()
    cfg = workflows.with_overrides(cfg, req.overrides)
    if req.seed is not None:
        cfg = replace(cfg, seed=req.seed)
    return cfg


def create_app(model_path: str | None = None, records_path: str | None = None) -> FastAPI:
    app = FastAPI(title="cellloc", version="0.1.0")
    state = LocatorState()
    if model_path:
        state.load(model_path, records_path)
    app.state.locator = state

    def guarded(fn, *args):
        try:
            return fn(*args)
        except (InvalidInput, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/health", response_model=schemas.Health)
    def health():
        return schemas.Health(status="ok", model_loaded=state.model is not None, phones=len(state.store.phone_ids()))

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        return guarded(lambda: workflows.simulate(_sim_config(req), req.out_dir))

    @app.post("/sync", response_model=schemas.SyncResponse)
    def sync(req: schemas.SyncRequest):
        return guarded(lambda: workflows.sync(req.records_path, req.fixes_path, req.out_path, _pipeline_config(req)))

    @app.post("/augment", response_model=schemas.AugmentResponse)
    def augment(req: schemas.AugmentRequest):
        return guarded(lambda: workflows.augment_file(req.samples_path, req.fixes_path, req.out_path,
                                                      _pipeline_config(req)))

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return guarded(lambda: workflows.train_file(req.samples_path, req.model_path, _pipeline_config(req)))

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return guarded(lambda: workflows.evaluate_dir(req.data_dir, req.out_dir, _pipeline_config(req)))

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return guarded(lambda: workflows.sweep_dir(req.data_dir, req.out_dir, req.parameter, req.values,
                                                   _pipeline_config(req), req.n_jobs))

    @app.post("/model", response_model=schemas.LoadResponse)
    def load(req: schemas.LoadRequest):
        guarded(state.load, req.model_path, req.records_path)
        return schemas.LoadResponse(towers=len(state.model.registry), cells=state.model.grid.K,
                                    phones=len(state.store.phone_ids()))

    @app.post("/records", status_code=201)
    def push_record(rec: schemas.RecordIn):
        state.store.add(guarded(io.record_from_dict, rec.model_dump()))
        return {"phones": len(state.store.phone_ids())}

    @app.post("/locate", response_model=schemas.LocateResponse)
    def locate(req: schemas.LocateRequest):
        if state.model is None:
            raise HTTPException(status_code=409, detail="no model loaded")
        try:
            record = fetch_by_phone_id(state.store, req.phone_id)
        except PhoneNotFound:
            raise HTTPException(status_code=404, detail=f"unknown phone id {req.phone_id!r}") from None
        est = estimate_location(state.model, record, req.top_n)
        lat = lon = None
        if state.model.origin is not None:
            lat, lon = unproject(est.fused, state.model.origin)
        return schemas.LocateResponse(
            phone_id=req.phone_id, timestamp=record.timestamp, cell=est.cell, lat=lat, lon=lon,
            x=est.fused.x, y=est.fused.y, confidence=est.confidence, low_confidence=est.low_confidence,
        )

    return app
