"""Request and response bodies for the localization service."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class ConfigOverrides(BaseModel):
    """Flat key-value overrides on top of an optional config file."""

    config_path: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None


class SimulateRequest(BaseModel):
    out_dir: str
    config_path: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None


class SimulateResponse(BaseModel):
    records: int
    fixes: int
    paths: Dict[str, str]


class SyncRequest(ConfigOverrides):
    records_path: str
    fixes_path: str
    out_path: str


class SyncReportBody(BaseModel):
    matched: int
    unmatched_records: int
    unmatched_fixes: int
    ambiguous: int


class SyncResponse(BaseModel):
    report: SyncReportBody
    samples: int
    skipped_towers: int
    conflicts: int
    out: str


class AugmentRequest(ConfigOverrides):
    samples_path: str
    fixes_path: str
    out_path: str


class AugmentResponse(BaseModel):
    input: int
    output: int
    report: Dict[str, int]
    out: str


class TrainRequest(ConfigOverrides):
    samples_path: str
    model_path: str


class TrainResponse(BaseModel):
    model: str
    K: int
    n_parameters: int
    final_loss: float
    epochs: int


class Quantiles(BaseModel):
    min: float
    p25: float
    median: float
    p75: float
    max: float


class EvaluateRequest(ConfigOverrides):
    data_dir: str
    out_dir: str


class EvaluateResponse(BaseModel):
    fused: Quantiles
    cell_center: Quantiles
    baselines: Dict[str, Quantiles]
    sync_report: SyncReportBody
    n_sparse: int
    n_dense: int
    K: int
    out: str


class SweepRequest(ConfigOverrides):
    data_dir: str
    out_dir: str
    parameter: str
    values: List[Any]
    n_jobs: int = 1


class SweepRow(BaseModel):
    value: Any
    median: float
    extrapolation: bool


class SweepResponse(BaseModel):
    table: str
    rows: List[SweepRow]


class LoadRequest(BaseModel):
    model_path: str
    records_path: Optional[str] = None


class LoadResponse(BaseModel):
    towers: int
    cells: int
    phones: int


class LocateRequest(BaseModel):
    phone_id: str
    top_n: Optional[int] = None


class LocateResponse(BaseModel):
    phone_id: str
    timestamp: int
    cell: int
    lat: Optional[float] = None
    lon: Optional[float] = None
    x: float
    y: float
    confidence: float
    low_confidence: bool


class RecordIn(BaseModel):
    """Provider record pushed into the live store; same fields as the ingestion schema."""

    event_type: str = ""
    timestamp: int
    phone_id: str
    active_cells: List[Dict[str, Any]]
    neighbor_cells: List[Dict[str, Any]] = Field(default_factory=list)


class Health(BaseModel):
    status: str
    model_loaded: bool
    phones: int
