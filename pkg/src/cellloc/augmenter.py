"""Per-tower Gaussian-process fingerprint interpolation and trace-path augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from cellloc.domain import (
    FeatureVector,
    InvalidInput,
    LabeledSample,
    PlanarPoint,
    SampleSource,
    TowerRegistry,
)
from cellloc.model import DEFAULT_RSS_BOUNDS

log = logging.getLogger(__name__)

ZERO_CENTERED = "zero_centered"
TRAINING_MEAN = "constant_training_mean"


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpHyperparams:
    length_scale: float = 100.0
    noise_variance: float = 4.0
    prior_mean_mode: str = TRAINING_MEAN
    # for the {0,1} active-bit and presence fields
    indicator_noise_variance: float = 0.1

    def __post_init__(self):
        if not self.length_scale > 0:
            raise InvalidInput("length_scale must be positive")
        if self.noise_variance < 0 or self.indicator_noise_variance < 0:
            raise InvalidInput("noise variances must be non-negative")
        if self.prior_mean_mode not in (ZERO_CENTERED, TRAINING_MEAN):
            raise InvalidInput(f"unknown prior_mean_mode {self.prior_mean_mode!r}")


@dataclass(frozen=True)
class AugmentConfig:
    n_augmented: int = 1000
    path_spacing_m: float = 10.0
    active_bit_threshold: float = 0.5
    presence_threshold: float = 0.5
    heard_rss_floor: float = -110.0
    # cap heard and active towers per synthetic sample at the most common counts seen in the sparse records
    match_record_shape: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_augmented < 0:
            raise InvalidInput("n_augmented must be non-negative")
        if not self.path_spacing_m > 0:
            raise InvalidInput("path_spacing_m must be positive")
        if not 0 < self.active_bit_threshold < 1:
            raise InvalidInput("active_bit_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class GpState:
    """Posterior state of one GP; ``alpha`` may hold several target columns sharing a kernel."""

    train_xy: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    mean: np.ndarray | float
    length_scale: float
    noise_variance: float

    @property
    def n_train(self) -> int:
        return self.train_xy.shape[0]


def kernel(p: PlanarPoint, q: PlanarPoint, length_scale: float) -> float:
    """Squared-exponential covariance between two planar locations."""
    d2 = (p.x - q.x) ** 2 + (p.y - q.y) ** 2
    return float(np.exp(-d2 / (2.0 * length_scale**2)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / (2.0 * length_scale**2))


def fit_gp(
    xy: np.ndarray,
    targets: np.ndarray,
    length_scale: float,
    noise_variance: float,
    prior_mean_mode: str = TRAINING_MEAN,
) -> GpState:
    """Condition a GP on (N, 2) locations and (N,) or (N, T) targets."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    y = np.asarray(targets, dtype=float)
    if len(xy) == 0:
        raise InvalidInput("GP needs at least one training point")
    if y.shape[0] != xy.shape[0]:
        raise InvalidInput("targets and locations differ in length")
    mean = y.mean(axis=0) if prior_mean_mode == TRAINING_MEAN else np.zeros(y.shape[1:])
    K = kernel_matrix(xy, xy, length_scale)
    K[np.diag_indices_from(K)] += noise_variance
    try:
        L = cholesky(K, lower=True)
    except LinAlgError as exc:
        cond = np.linalg.cond(K)
        raise GpFitError(
            f"kernel matrix not positive definite (n={len(xy)}, cond={cond:.3g}, "
            f"length_scale={length_scale}, noise_variance={noise_variance}); "
            "add noise or remove duplicate locations"
        ) from exc
    centered = y - mean
    alpha = solve_triangular(L.T, solve_triangular(L, centered, lower=True), lower=False)
    return GpState(xy, L, alpha, mean, float(length_scale), float(noise_variance))


def predict(gp: GpState, probes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (clamped, noise-free) variance at (P, 2) probe locations."""
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    ks = kernel_matrix(P, gp.train_xy, gp.length_scale)
    mean = ks @ gp.alpha + gp.mean
    v = solve_triangular(gp.chol, ks.T, lower=True)
    var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
    return mean, var


@dataclass(frozen=True)
class TowerGp:
    """RSS and active-bit posteriors for one tower; ``None`` when no sample heard it."""

    rss: GpState | None
    bit: GpState | None

    @property
    def modeled(self) -> bool:
        return self.rss is not None


def _scale(rss: np.ndarray, bounds) -> np.ndarray:
    lo, hi = bounds
    return (rss - lo) / (hi - lo)


def _unscale(v: np.ndarray, bounds) -> np.ndarray:
    lo, hi = bounds
    return v * (hi - lo) + lo


def fit_tower(
    samples: Sequence[LabeledSample],
    tower_index: int,
    hp: GpHyperparams,
    rss_bounds: tuple[float, float] = DEFAULT_RSS_BOUNDS,
) -> TowerGp:
    """Fit the RSS and active-bit GPs of one tower over the samples that hear it.

    RSS targets are min-max scaled by ``rss_bounds`` and the noise variance
    (given in dBm^2) is scaled to match.
    """
    xy = np.array([[s.location.x, s.location.y] for s in samples if s.features.rss[tower_index] != 0])
    if len(xy) == 0:
        return TowerGp(None, None)
    rss = np.array([s.features.rss[tower_index] for s in samples if s.features.rss[tower_index] != 0])
    bits = np.array([s.features.active_bits[tower_index] for s in samples
                     if s.features.rss[tower_index] != 0])
    span = rss_bounds[1] - rss_bounds[0]
    rss_gp = fit_gp(xy, _scale(rss, rss_bounds), hp.length_scale,
                    hp.noise_variance / span**2, hp.prior_mean_mode)
    bit_gp = fit_gp(xy, bits, hp.length_scale, hp.indicator_noise_variance, hp.prior_mean_mode)
    return TowerGp(rss_gp, bit_gp)


def predict_tower(tgp: TowerGp, probes: np.ndarray, rss_bounds=DEFAULT_RSS_BOUNDS):
    """(rss dBm, rss variance, bit score, bit variance) at probes; un-modeled towers read unheard."""
    P = np.atleast_2d(probes)
    if not tgp.modeled:
        zeros = np.zeros(len(P))
        ones = np.ones(len(P))
        return zeros, ones, zeros, ones
    m, v = predict(tgp.rss, P)
    bm, bv = predict(tgp.bit, P)
    span = rss_bounds[1] - rss_bounds[0]
    return _unscale(m, rss_bounds), v * span**2, bm, bv


def resample_path(points: Sequence[PlanarPoint] | np.ndarray, spacing_m: float) -> np.ndarray:
    """Points every ``spacing_m`` metres of arc length along a polyline, starting at its head."""
    P = np.asarray([[p.x, p.y] for p in points] if len(points) and isinstance(points[0], PlanarPoint)
                   else points, dtype=float).reshape(-1, 2)
    if len(P) < 2:
        return P.copy()
    seg = np.hypot(*np.diff(P, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return P[:1].copy()
    targets = np.arange(0.0, s[-1] + 1e-12, spacing_m)
    return np.column_stack([np.interp(targets, s, P[:, 0]), np.interp(targets, s, P[:, 1])])


@dataclass
class AugmentReport:
    requested: int = 0
    available_locations: int = 0
    synthesized: int = 0
    unmodeled_towers: int = 0
    empty_input_warnings: int = 0


def synthesize_locations(traces, spacing_m: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if traces and isinstance(traces[0], PlanarPoint):
        traces = [traces]
    pts = [resample_path(t, spacing_m) for t in traces if len(t)]
    cand = np.concatenate(pts) if pts else np.zeros((0, 2))
    if len(cand) <= n:
        return cand
    pick = np.sort(rng.choice(len(cand), size=n, replace=False))
    return cand[pick]


def _top_k_mask(values: np.ndarray, allowed: np.ndarray, k: int) -> np.ndarray:
    """Per row, the k largest ``values`` among ``allowed`` entries (fewer when not enough are allowed)."""
    ranked = np.argsort(-np.where(allowed, values, -np.inf), axis=1, kind="stable")[:, :k]
    keep = np.zeros_like(allowed)
    np.put_along_axis(keep, ranked, True, axis=1)
    return keep & allowed


def _match_shape(sparse, mean, score, on):
    """Heard set = strongest predicted towers, active set = highest bit scores among them.

    Counts follow the modal heard and active counts of the sparse records, so
    synthetic fingerprints have the same shape as real ones.
    """
    n_heard = np.bincount([int((s.features.rss != 0).sum()) for s in sparse]).argmax()
    n_active = np.bincount([int(s.features.active_bits.sum()) for s in sparse]).argmax()
    heard = _top_k_mask(mean, on, int(n_heard))
    return heard, _top_k_mask(score, heard, int(n_active))


def augment(
    sparse: Sequence[LabeledSample],
    trace_points,
    cfg: AugmentConfig,
    hp: GpHyperparams,
    registry: TowerRegistry,
    rss_bounds: tuple[float, float] = DEFAULT_RSS_BOUNDS,
    report: AugmentReport | None = None,
) -> list[LabeledSample]:
    """Return the sparse samples followed by GP-synthesised samples on the trace paths.

    ``trace_points`` is either one polyline (list of PlanarPoint) or a list of
    polylines, one per GPS trace. Whether a tower is heard at a synthesised
    location comes from a presence GP fit over every sparse sample.
    """
    report = report if report is not None else AugmentReport()
    report.requested = cfg.n_augmented
    out = list(sparse)
    if cfg.n_augmented == 0:
        return out
    if not sparse:
        report.empty_input_warnings += 1
        log.warning("augment called with no sparse samples; returning input unchanged")
        return out

    rng = np.random.default_rng(cfg.seed)
    locs = synthesize_locations(trace_points, cfg.path_spacing_m, cfg.n_augmented, rng)
    report.available_locations = len(locs)
    if len(locs) == 0:
        return out

    M = len(registry)
    xy = np.array([[s.location.x, s.location.y] for s in sparse])
    heard = np.array([s.features.rss != 0 for s in sparse], dtype=float)
    presence = fit_gp(xy, heard, hp.length_scale, hp.indicator_noise_variance, hp.prior_mean_mode)
    pres_mean, _ = predict(presence, locs)

    mean = np.zeros((len(locs), M))
    score = np.zeros((len(locs), M))
    on = np.zeros((len(locs), M), dtype=bool)
    for j in range(M):
        tgp = fit_tower(sparse, j, hp, rss_bounds)
        if not tgp.modeled:
            report.unmodeled_towers += 1
            continue
        mean[:, j], _, score[:, j], _ = predict_tower(tgp, locs, rss_bounds)
        on[:, j] = (pres_mean[:, j] >= cfg.presence_threshold) & (mean[:, j] >= cfg.heard_rss_floor)
    active = on & (score >= cfg.active_bit_threshold)
    if cfg.match_record_shape:
        on, active = _match_shape(sparse, mean, score, on)

    # an exact 0 dBm reading would be indistinguishable from unheard
    rss = np.where(on, np.where(mean == 0.0, -1e-9, mean), 0.0)
    bits = active.astype(float)

    for k in range(len(locs)):
        out.append(LabeledSample(FeatureVector(rss[k], bits[k]),
                                 PlanarPoint(float(locs[k, 0]), float(locs[k, 1])),
                                 SampleSource.AUGMENTED))
    report.synthesized = len(locs)
    return out
