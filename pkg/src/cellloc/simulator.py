"""Synthetic cellular testbed: towers, driving traces, propagation, provider records and GPS fixes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cellloc.domain import (
    GpsFix,
    InvalidInput,
    PlanarPoint,
    ProviderRecord,
    TowerObservation,
    unproject,
)

EVENT_TYPE = "measurement_report"


class SimConfigError(InvalidInput):
    pass


@dataclass(frozen=True)
class SimConfig:
    area_m: tuple[float, float] = (2040.0, 1000.0)
    n_towers: int = 42
    path_loss_exponent: float = 3.5
    tx_power_dbm: float = 43.0
    shadowing_sigma_dbm: float = 6.0
    shadowing_corr_m: float = 60.0
    measurement_noise_dbm: float = 6.0
    noise_floor_dbm: float = -113.0
    active_set_size: int = 3
    max_neighbors: int = 6
    gps_rate_hz: float = 1.0
    gps_noise_m: float = 4.0
    event_probability_per_fix: float = 0.3
    target_records: int = 2013
    n_phones: int = 3
    speed_mps: tuple[float, float] = (5.0, 15.0)
    tower_margin_m: float = 100.0
    jitter_ms: int = 0
    clock_offset_ms: int = 7_200_000
    origin: tuple[float, float] = (31.2000, 29.9000)
    start_time_ms: int = 1_500_000_000_000
    seed: int = 0

    def __post_init__(self):
        w, h = self.area_m
        if not (w > 0 and h > 0):
            raise SimConfigError("area must have positive width and height")
        if self.n_towers < 1 or self.n_phones < 1:
            raise SimConfigError("need at least one tower and one phone")
        if self.active_set_size < 1:
            raise SimConfigError("active_set_size must be at least 1")
        if self.max_neighbors < 0 or self.jitter_ms < 0:
            raise SimConfigError("max_neighbors and jitter_ms must be non-negative")
        if not 0 < self.event_probability_per_fix <= 1:
            raise SimConfigError("event_probability_per_fix must lie in (0, 1]")
        if not self.gps_rate_hz > 0 or not self.path_loss_exponent > 0:
            raise SimConfigError("gps_rate_hz and path_loss_exponent must be positive")
        lo, hi = self.speed_mps
        if not 0 < lo <= hi:
            raise SimConfigError("speed range must be positive and ordered")
        if self.shadowing_sigma_dbm < 0 or self.measurement_noise_dbm < 0 or self.gps_noise_m < 0:
            raise SimConfigError("noise levels must be non-negative")

    @property
    def fixes_per_phone(self) -> int:
        return math.ceil(self.target_records / (self.event_probability_per_fix * self.n_phones))


@dataclass(frozen=True)
class Tower:
    tower_id: str
    rnc: str
    x: float
    y: float


@dataclass
class SimWorld:
    """Tower layout, per-tower shadowing fields and the true driving trajectories."""

    cfg: SimConfig
    towers: list[Tower]
    # random Fourier features approximating a squared-exponential shadowing field per tower
    rff_w: np.ndarray  # (T, F, 2)
    rff_b: np.ndarray  # (T, F)
    trajectories: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def tower_xy(self) -> np.ndarray:
        return np.array([[t.x, t.y] for t in self.towers])

    def shadowing(self, xy: np.ndarray) -> np.ndarray:
        """(N, T) static shadowing in dB at points ``xy``."""
        xy = np.atleast_2d(xy)
        F = self.rff_w.shape[1]
        phase = np.einsum("nd,tfd->ntf", xy, self.rff_w) + self.rff_b[None]
        return self.cfg.shadowing_sigma_dbm * math.sqrt(2.0 / F) * np.cos(phase).sum(axis=-1)

    def mean_rss(self, xy: np.ndarray, shadowing: bool = True) -> np.ndarray:
        """(N, T) noiseless received power in dBm."""
        xy = np.atleast_2d(xy)
        d = np.hypot(xy[:, None, 0] - self.tower_xy()[None, :, 0], xy[:, None, 1] - self.tower_xy()[None, :, 1])
        rss = self.cfg.tx_power_dbm - 10.0 * self.cfg.path_loss_exponent * np.log10(np.maximum(d, 1.0))
        if shadowing and self.cfg.shadowing_sigma_dbm > 0:
            rss = rss + self.shadowing(xy)
        return rss

    def position_at(self, phone_id: str, t_ms: int | np.ndarray) -> np.ndarray:
        ts, xy = self.trajectories[phone_id]
        t = np.asarray(t_ms, dtype=float)
        return np.stack([np.interp(t, ts, xy[:, 0]), np.interp(t, ts, xy[:, 1])], axis=-1)


def rss_at(world: SimWorld, tower: int, p: PlanarPoint, rng: np.random.Generator | None = None,
           shadowing: bool = True) -> float | None:
    """Received power of one tower at ``p``, or None when below the noise floor.

    With ``shadowing=False`` only log-distance path loss applies. Measurement
    noise is added when a generator is supplied.
    """
    rss = world.mean_rss(np.array([[p.x, p.y]]), shadowing)[0, tower]
    if shadowing and rng is not None and world.cfg.measurement_noise_dbm > 0:
        rss += rng.normal(0.0, world.cfg.measurement_noise_dbm)
    return float(rss) if rss >= world.cfg.noise_floor_dbm else None


def build_world(cfg: SimConfig, rng: np.random.Generator, n_features: int = 64) -> SimWorld:
    w, h = cfg.area_m
    m = cfg.tower_margin_m
    towers = []
    for i in range(cfg.n_towers):
        x = rng.uniform(-m, w + m)
        y = rng.uniform(-m, h + m)
        towers.append(Tower(f"T{i:03d}", f"RNC{i // 8:02d}", float(x), float(y)))
    rff_w = rng.normal(0.0, 1.0 / cfg.shadowing_corr_m, size=(cfg.n_towers, n_features, 2))
    rff_b = rng.uniform(0.0, 2 * math.pi, size=(cfg.n_towers, n_features))
    return SimWorld(cfg, towers, rff_w, rff_b)


def random_waypoint(cfg: SimConfig, n_fixes: int, rng: np.random.Generator) -> np.ndarray:
    """(n_fixes, 2) positions sampled at the GPS rate along a random-waypoint drive."""
    w, h = cfg.area_m
    dt = 1.0 / cfg.gps_rate_hz
    pos = np.array([rng.uniform(0, w), rng.uniform(0, h)])
    target = np.array([rng.uniform(0, w), rng.uniform(0, h)])
    speed = rng.uniform(*cfg.speed_mps)
    out = np.empty((n_fixes, 2))
    for k in range(n_fixes):
        out[k] = pos
        step = speed * dt
        while True:
            gap = target - pos
            dist = float(np.hypot(*gap))
            if dist > step:
                pos = pos + gap / dist * step
                break
            pos = target
            step -= dist
            target = np.array([rng.uniform(0, w), rng.uniform(0, h)])
            speed = rng.uniform(*cfg.speed_mps)
    return out


@dataclass
class SimOutput:
    world: SimWorld
    records: list[ProviderRecord]
    fixes: list[GpsFix]  # timestamps in phone-local time
    truth: dict[tuple[str, int], tuple[float, float]]  # (phone_id, record ts) -> (lat, lon)


def _make_record(cfg: SimConfig, towers: list[Tower], rss: np.ndarray, phone: str, ts: int):
    heard = np.flatnonzero(rss >= cfg.noise_floor_dbm)
    if len(heard) == 0:
        return None
    # descending RSS, tower index breaks exact ties
    order = heard[np.lexsort((heard, -rss[heard]))]
    obs = [TowerObservation(towers[i].tower_id, towers[i].rnc, round(float(rss[i]), 2)) for i in order]
    active = obs[:cfg.active_set_size]
    neighbors = obs[cfg.active_set_size:cfg.active_set_size + cfg.max_neighbors]
    return ProviderRecord(EVENT_TYPE, ts, phone, tuple(active), tuple(neighbors))


def generate(cfg: SimConfig) -> SimOutput:
    rng_world, rng_move, rng_events = np.random.default_rng(cfg.seed).spawn(3)
    world = build_world(cfg, rng_world)
    n = cfg.fixes_per_phone
    step_ms = int(round(1000.0 / cfg.gps_rate_hz))
    records: list[ProviderRecord] = []
    fixes: list[GpsFix] = []
    truth: dict[tuple[str, int], tuple[float, float]] = {}
    for k in range(cfg.n_phones):
        phone = f"phone-{k:02d}"
        xy = random_waypoint(cfg, n, rng_move)
        ts = cfg.start_time_ms + step_ms * np.arange(n)
        world.trajectories[phone] = (ts.astype(float), xy)
        gps = xy + rng_events.normal(0.0, cfg.gps_noise_m, size=xy.shape) if cfg.gps_noise_m > 0 else xy
        for i in range(n):
            lat, lon = unproject(PlanarPoint(float(gps[i, 0]), float(gps[i, 1])), cfg.origin)
            fixes.append(GpsFix(phone, int(ts[i]) + cfg.clock_offset_ms, lat, lon))
        emit = rng_events.random(n) < cfg.event_probability_per_fix
        jitter = (rng_events.integers(-cfg.jitter_ms, cfg.jitter_ms + 1, size=n)
                  if cfg.jitter_ms > 0 else np.zeros(n, dtype=int))
        idx = np.flatnonzero(emit)
        t_rec = ts[idx] + jitter[idx]
        at = world.position_at(phone, t_rec)
        rss = world.mean_rss(at)
        if cfg.measurement_noise_dbm > 0:
            rss = rss + rng_events.normal(0.0, cfg.measurement_noise_dbm, size=rss.shape)
        for row, t in enumerate(t_rec):
            rec = _make_record(cfg, world.towers, rss[row], phone, int(t))
            if rec is None:
                continue
            records.append(rec)
            truth[(phone, int(t))] = unproject(PlanarPoint(float(at[row, 0]), float(at[row, 1])), cfg.origin)
    if not records:
        raise SimConfigError("no tower is heard anywhere on the trajectories; check power and floor")
    return SimOutput(world, records, fixes, truth)
