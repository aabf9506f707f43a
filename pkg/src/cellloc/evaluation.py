"""End-to-end pipeline, error metrics, baselines and parameter sweeps."""

from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from cellloc.augmenter import AugmentConfig, AugmentReport, GpHyperparams, augment
from cellloc.domain import (
    FeatureStats,
    GpsFix,
    InvalidInput,
    LabeledSample,
    PlanarPoint,
    ProviderRecord,
    TowerRegistry,
    build_feature_vector,
    centroid_origin,
    project_to_local,
)
from cellloc.estimator import estimate_many
from cellloc.grid import VirtualGrid, build_grid
from cellloc.model import NetworkConfig, NetworkModel, TrainingTrace, normalize_features, train
from cellloc.synchronizer import SyncConfig, SyncReport, fixes_to_gmt, synchronize

log = logging.getLogger(__name__)

RSS_ONLY = "RSS only"
RSS_ACTIVE = "RSS with active cells"
SPATIAL_AUG = "Spatial augmentation"
ALL = "All"
FINGERPRINT_MODELS = (RSS_ONLY, RSS_ACTIVE, SPATIAL_AUG, ALL)

# documented sweep ranges; values outside are allowed but flagged
SWEEP_RANGES = {
    "grid_cell_length": (50, 1500),
    "n_augmented": (0, 1000),
    "tower_density": (25, 100),
    "epochs": (50, 500),
    "learning_rate": (1e-4, 1e-2),
}

GroundTruth = dict  # (phone_id, timestamp) -> (lat, lon); only evaluate() may see it


@dataclass(frozen=True)
class PipelineConfig:
    grid_cell_length_m: float = 100.0
    n_augmented: int = 1000
    epochs: int = 500
    learning_rate: float = 1e-4
    tower_density_pct: float = 100.0
    fingerprint_model: str = ALL
    psi_ms: int = 10
    clock_offset_ms: int = 7_200_000
    hidden_layers: tuple[int, ...] = (256, 128, 64)
    dropout_rate: float = 0.2
    batch_size: int = 32
    optimizer: str = "adam"
    rss_min_dbm: float = -113.0
    rss_max_dbm: float = -40.0
    prune_empty_cells: bool = False
    length_scale_m: float = 100.0
    gp_noise_variance: float = 4.0
    indicator_noise_variance: float = 0.1
    path_spacing_m: float = 10.0
    active_bit_threshold: float = 0.5
    match_record_shape: bool = True
    heard_rss_floor_dbm: float = -110.0
    test_fraction: float = 0.3
    knn_k: int = 4
    top_n: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.fingerprint_model not in FINGERPRINT_MODELS:
            raise InvalidInput(f"fingerprint_model must be one of {FINGERPRINT_MODELS}")
        if not 0 < self.tower_density_pct <= 100:
            raise InvalidInput("tower_density_pct must lie in (0, 100]")
        if not 0 < self.test_fraction < 1:
            raise InvalidInput("test_fraction must lie in (0, 1)")

    @property
    def uses_active_bits(self) -> bool:
        return self.fingerprint_model in (RSS_ACTIVE, ALL)

    @property
    def uses_augmentation(self) -> bool:
        return self.fingerprint_model in (SPATIAL_AUG, ALL)

    @property
    def rss_bounds(self) -> tuple[float, float]:
        return (self.rss_min_dbm, self.rss_max_dbm)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            hidden_layers=tuple(self.hidden_layers), dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.seed, optimizer=self.optimizer, rss_bounds=self.rss_bounds,
            prune_empty_cells=self.prune_empty_cells,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            n_augmented=self.n_augmented if self.uses_augmentation else 0,
            path_spacing_m=self.path_spacing_m, active_bit_threshold=self.active_bit_threshold,
            heard_rss_floor=self.heard_rss_floor_dbm, match_record_shape=self.match_record_shape,
            seed=self.seed,
        )

    def gp_hyperparams(self) -> GpHyperparams:
        return GpHyperparams(self.length_scale_m, self.gp_noise_variance,
                             indicator_noise_variance=self.indicator_noise_variance)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ErrorSummary:
    min: float
    p25: float
    median: float
    p75: float
    max: float
    errors: tuple[float, ...]

    def cdf(self) -> list[tuple[float, float]]:
        n = len(self.errors)
        return [(e, (i + 1) / n) for i, e in enumerate(self.errors)]

    def quantiles(self) -> dict:
        return {"min": self.min, "p25": self.p25, "median": self.median, "p75": self.p75, "max": self.max}


def euclidean_error(estimate: PlanarPoint, truth: PlanarPoint) -> float:
    return math.hypot(estimate.x - truth.x, estimate.y - truth.y)


def nearest_rank(sorted_vals: Sequence[float], q: float) -> float:
    n = len(sorted_vals)
    rank = max(1, math.ceil(q * n))
    return sorted_vals[rank - 1]


def summarize(errors: Sequence[float]) -> ErrorSummary:
    if len(errors) == 0:
        raise InvalidInput("cannot summarise an empty error list")
    s = sorted(float(e) for e in errors)
    return ErrorSummary(s[0], nearest_rank(s, 0.25), nearest_rank(s, 0.5), nearest_rank(s, 0.75), s[-1], tuple(s))


def write_summary(path, summary: ErrorSummary) -> None:
    lines = [f"{k}\t{v!r}" for k, v in summary.quantiles().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_cdf(path, summary: ErrorSummary) -> None:
    with open(path, "w") as fh:
        fh.write("error_m\tfraction\n")
        for e, f in summary.cdf():
            fh.write(f"{e!r}\t{f!r}\n")


# ---------------------------------------------------------------------------
# pipeline


def split_records(records: Sequence[ProviderRecord], test_fraction: float, seed: int):
    """Seeded record-level train/test split, independent of input order."""
    ordered = sorted(records, key=lambda r: (r.phone_id, r.timestamp))
    rng = np.random.default_rng([seed, 7])
    perm = rng.permutation(len(ordered))
    n_test = int(round(test_fraction * len(ordered)))
    test_idx = set(perm[:n_test].tolist())
    train = [r for i, r in enumerate(ordered) if i not in test_idx]
    test = [r for i, r in enumerate(ordered) if i in test_idx]
    return train, test


def density_mask(registry: TowerRegistry, pct: float, seed: int) -> np.ndarray:
    """Feature mask keeping a seeded ``pct`` share of towers (RSS and bit columns together)."""
    m = len(registry)
    keep_n = max(1, int(round(m * pct / 100.0)))
    keep = np.random.default_rng([seed, 11]).permutation(m)[:keep_n]
    mask = np.zeros(m)
    mask[keep] = 1.0
    return np.concatenate([mask, mask])


def gps_traces(fixes_gmt: Sequence[GpsFix], origin) -> list[list[PlanarPoint]]:
    by_phone = defaultdict(list)
    for f in fixes_gmt:
        by_phone[f.phone_id].append(f)
    return [[project_to_local(f.lat, f.lon, origin) for f in sorted(by_phone[p], key=lambda f: f.timestamp)]
            for p in sorted(by_phone)]


@dataclass
class FittedPipeline:
    model: NetworkModel
    trace: TrainingTrace
    registry: TowerRegistry
    origin: tuple[float, float]
    sparse: list[LabeledSample]
    dense: list[LabeledSample]
    sync_report: SyncReport
    augment_report: AugmentReport
    timings: dict = field(default_factory=dict)


def feature_mask_for(cfg: PipelineConfig, registry: TowerRegistry) -> np.ndarray:
    mask = density_mask(registry, cfg.tower_density_pct, cfg.seed)
    if not cfg.uses_active_bits:
        mask[len(registry):] = 0.0
    return mask


def fit(train_records: Sequence[ProviderRecord], fixes: Sequence[GpsFix], cfg: PipelineConfig) -> FittedPipeline:
    """Offline phase: synchronise, augment, grid and train. Never sees ground truth."""
    t0 = time.perf_counter()
    sync_cfg = SyncConfig(cfg.psi_ms, cfg.clock_offset_ms)
    fixes_gmt = fixes_to_gmt(fixes, sync_cfg)
    origin = centroid_origin([(f.lat, f.lon) for f in fixes_gmt])
    registry = TowerRegistry.from_records(train_records)
    stats = FeatureStats()
    sparse, report = synchronize(train_records, fixes_gmt, sync_cfg, origin, registry, stats)
    if not sparse:
        raise InvalidInput(f"no provider record matched a GPS fix (psi_ms={cfg.psi_ms}); {report.as_dict()}")
    t1 = time.perf_counter()
    aug_report = AugmentReport()
    dense = augment(sparse, gps_traces(fixes_gmt, origin), cfg.augment_config(), cfg.gp_hyperparams(),
                    registry, cfg.rss_bounds, aug_report)
    t2 = time.perf_counter()
    grid = build_grid([s.location for s in dense], cfg.grid_cell_length_m)
    net, trace = train(dense, grid, registry, cfg.network_config(), feature_mask_for(cfg, registry))
    net.origin = origin
    t3 = time.perf_counter()
    timings = {"sync_s": t1 - t0, "augment_s": t2 - t1, "train_s": t3 - t2}
    log.info("fit: %d sparse, %d dense, K=%d, timings %s", len(sparse), len(dense), grid.K, timings)
    return FittedPipeline(net, trace, registry, origin, sparse, dense, report, aug_report, timings)


def truth_points(records: Sequence[ProviderRecord], truth: GroundTruth, origin) -> list[PlanarPoint]:
    pts = []
    for r in records:
        try:
            lat, lon = truth[(r.phone_id, r.timestamp)]
        except KeyError:
            raise InvalidInput(f"no ground truth for record {r.phone_id}@{r.timestamp}") from None
        pts.append(project_to_local(lat, lon, origin))
    return pts


@dataclass
class EvaluationResult:
    fused: ErrorSummary
    cell_center: ErrorSummary
    baselines: dict[str, ErrorSummary]


def evaluate(fitted: FittedPipeline, test_records: Sequence[ProviderRecord], truth: GroundTruth,
             cfg: PipelineConfig) -> EvaluationResult:
    pts = truth_points(test_records, truth, fitted.origin)
    ests = estimate_many(fitted.model, list(test_records), cfg.top_n)
    fused = summarize([euclidean_error(e.fused, p) for e, p in zip(ests, pts)])
    center = summarize([euclidean_error(e.cell_center, p) for e, p in zip(ests, pts)])
    X_test = np.array([build_feature_vector(r, fitted.registry).flatten() for r in test_records])
    baselines = {
        "serving_cell": baseline_serving_cell(X_test, pts, fitted.sparse),
        f"knn{cfg.knn_k}": baseline_knn(X_test, pts, fitted.sparse, cfg.knn_k, cfg.rss_bounds),
    }
    return EvaluationResult(fused, center, baselines)


@dataclass
class PipelineResult:
    fitted: FittedPipeline
    evaluation: EvaluationResult

    @property
    def model(self) -> NetworkModel:
        return self.fitted.model

    @property
    def summary(self) -> ErrorSummary:
        return self.evaluation.fused


def run_pipeline(records: Sequence[ProviderRecord], fixes: Sequence[GpsFix], truth: GroundTruth,
                 cfg: PipelineConfig) -> PipelineResult:
    train_recs, test_recs = split_records(records, cfg.test_fraction, cfg.seed)
    fitted = fit(train_recs, fixes, cfg)
    return PipelineResult(fitted, evaluate(fitted, test_recs, truth, cfg))


# ---------------------------------------------------------------------------
# baselines


def _strongest_active(X: np.ndarray) -> np.ndarray:
    """Column of the strongest active tower per row of raw features; -1 when none."""
    m = X.shape[1] // 2
    rss, bits = X[:, :m], X[:, m:]
    scored = np.where(bits == 1.0, rss, -np.inf)
    best = np.argmax(scored, axis=1)
    best[~np.isfinite(scored.max(axis=1))] = -1
    return best


def _summarize_estimates(est: np.ndarray, truth: Sequence[PlanarPoint]) -> ErrorSummary:
    return summarize([math.hypot(e[0] - t.x, e[1] - t.y) for e, t in zip(est, truth)])


def serving_cell_estimates(X_test: np.ndarray, training: Sequence[LabeledSample]) -> np.ndarray:
    """Mean training location of samples sharing the strongest active tower; global centroid otherwise."""
    if not training:
        raise InvalidInput("serving-cell baseline needs training samples")
    X_tr = np.array([s.features.flatten() for s in training])
    xy = np.array([[s.location.x, s.location.y] for s in training])
    serving = _strongest_active(X_tr)
    fallback = xy.mean(axis=0)
    centroids = {int(c): xy[serving == c].mean(axis=0) for c in np.unique(serving) if c >= 0}
    q = _strongest_active(np.atleast_2d(X_test))
    return np.array([centroids.get(int(c), fallback) for c in q])


def baseline_serving_cell(X_test, truth, training) -> ErrorSummary:
    return _summarize_estimates(serving_cell_estimates(X_test, training), truth)


def knn_estimates(X_test: np.ndarray, training: Sequence[LabeledSample], k: int = 4,
                  rss_bounds=(-113.0, -40.0)) -> np.ndarray:
    """Mean location of the k nearest training fingerprints in normalised feature space."""
    if not training:
        raise InvalidInput("k-NN baseline needs training samples")
    if k < 1:
        raise InvalidInput("k must be at least 1")
    A = normalize_features(np.array([s.features.flatten() for s in training]), rss_bounds)
    xy = np.array([[s.location.x, s.location.y] for s in training])
    Q = normalize_features(np.atleast_2d(X_test), rss_bounds)
    k = min(k, len(A))
    d2 = (Q**2).sum(1)[:, None] - 2 * Q @ A.T + (A**2).sum(1)[None, :]
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return xy[nn].mean(axis=1)


def baseline_knn(X_test, truth, training, k: int = 4, rss_bounds=(-113.0, -40.0)) -> ErrorSummary:
    return _summarize_estimates(knn_estimates(X_test, training, k, rss_bounds), truth)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_FIELDS = {
    "grid_cell_length": "grid_cell_length_m",
    "n_augmented": "n_augmented",
    "tower_density": "tower_density_pct",
    "epochs": "epochs",
    "learning_rate": "learning_rate",
    "fingerprint_model": "fingerprint_model",
}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple

    def __post_init__(self):
        if self.parameter not in SWEEP_FIELDS:
            raise InvalidInput(f"unknown sweep parameter {self.parameter!r}; choose from {sorted(SWEEP_FIELDS)}")
        if not self.values:
            raise InvalidInput("sweep needs at least one value")
        if self.parameter == "fingerprint_model":
            bad = [v for v in self.values if v not in FINGERPRINT_MODELS]
            if bad:
                raise InvalidInput(f"unknown fingerprint models {bad}")

    def extrapolated(self, value) -> bool:
        rng = SWEEP_RANGES.get(self.parameter)
        return rng is not None and not rng[0] <= float(value) <= rng[1]


@dataclass
class SweepRow:
    value: object
    summary: ErrorSummary
    extrapolation: bool

    @property
    def median(self) -> float:
        return self.summary.median


def _sweep_point(args):
    records, fixes, truth, cfg = args
    return run_pipeline(records, fixes, truth, cfg).summary


def run_sweep(spec: SweepSpec, base: PipelineConfig, records, fixes, truth, n_jobs: int = 1) -> list[SweepRow]:
    """One pipeline run per value, everything else held at ``base``."""
    name = SWEEP_FIELDS[spec.parameter]
    cfgs = [replace(base, **{name: v}) for v in spec.values]
    jobs = [(records, fixes, truth, c) for c in cfgs]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            summaries = list(pool.map(_sweep_point, jobs))
    else:
        summaries = [_sweep_point(j) for j in jobs]
    return [SweepRow(v, s, spec.extrapolated(v) if spec.parameter != "fingerprint_model" else False)
            for v, s in zip(spec.values, summaries)]


def write_sweep(out_dir, spec: SweepSpec, rows: Sequence[SweepRow]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / f"sweep_{spec.parameter}.tsv"
    with open(table, "w") as fh:
        fh.write("value\tmin\tp25\tmedian\tp75\tmax\textrapolation\n")
        for i, r in enumerate(rows):
            q = r.summary.quantiles()
            fh.write(f"{r.value}\t{q['min']!r}\t{q['p25']!r}\t{q['median']!r}\t{q['p75']!r}\t{q['max']!r}"
                     f"\t{int(r.extrapolation)}\n")
            write_cdf(out_dir / f"cdf_{spec.parameter}_{i:02d}.tsv", r.summary)
    return table


def config_dict(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["hidden_layers"] = list(cfg.hidden_layers)
    return d
