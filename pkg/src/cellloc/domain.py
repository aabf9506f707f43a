"""Core data types, coordinate projection and feature-vector construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class InvalidInput(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class SampleSource(str, Enum):
    SYNCHRONIZED = "synchronized"
    AUGMENTED = "augmented"


@dataclass(frozen=True)
class TowerObservation:
    tower_id: str
    rnc: str
    rss: float

    def __post_init__(self):
        if not self.tower_id:
            raise InvalidInput("tower_id must be non-empty")
        if not math.isfinite(self.rss):
            raise InvalidInput(f"non-finite rss for tower {self.tower_id}")


@dataclass(frozen=True)
class ProviderRecord:
    """One event-based provider measurement: who, when, and which towers were heard."""

    event_type: str
    timestamp: int
    phone_id: str
    active_cells: tuple[TowerObservation, ...]
    neighbor_cells: tuple[TowerObservation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "active_cells", tuple(self.active_cells))
        object.__setattr__(self, "neighbor_cells", tuple(self.neighbor_cells))
        if self.timestamp < 0:
            raise InvalidInput("timestamp must be non-negative")
        if not self.active_cells:
            raise InvalidInput("a provider record needs at least one active cell")

    @property
    def tower_ids(self) -> set[str]:
        return {o.tower_id for o in self.active_cells} | {o.tower_id for o in self.neighbor_cells}

    def strongest_active(self) -> TowerObservation:
        return max(self.active_cells, key=lambda o: (o.rss, o.tower_id))


@dataclass(frozen=True)
class GpsFix:
    phone_id: str
    timestamp: int
    lat: float
    lon: float

    def __post_init__(self):
        _check_latlon(self.lat, self.lon)


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInput(f"non-finite planar point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class TowerRegistry:
    """Ordered tower ids; position in the list is the feature column."""

    tower_ids: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(self.tower_ids)
        if not ids:
            raise InvalidInput("registry needs at least one tower")
        if len(set(ids)) != len(ids):
            raise InvalidInput("duplicate tower ids in registry")
        object.__setattr__(self, "tower_ids", ids)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(ids)})

    @classmethod
    def from_records(cls, records: Iterable[ProviderRecord]) -> "TowerRegistry":
        seen = set()
        for r in records:
            seen |= r.tower_ids
        return cls(tuple(sorted(seen)))

    def __len__(self) -> int:
        return len(self.tower_ids)

    def __contains__(self, tower_id: str) -> bool:
        return tower_id in self._index

    def index(self, tower_id: str) -> int:
        return self._index[tower_id]

    def get(self, tower_id: str, default=None):
        return self._index.get(tower_id, default)


@dataclass(frozen=True)
class FeatureVector:
    rss: np.ndarray
    active_bits: np.ndarray

    def __post_init__(self):
        rss = np.asarray(self.rss, dtype=float)
        bits = np.asarray(self.active_bits, dtype=float)
        if rss.ndim != 1 or rss.shape != bits.shape:
            raise InvalidInput("rss and active_bits must be 1-d vectors of equal length")
        if not np.all((bits == 0.0) | (bits == 1.0)):
            raise InvalidInput("active bits must be 0 or 1")
        rss.setflags(write=False)
        bits.setflags(write=False)
        object.__setattr__(self, "rss", rss)
        object.__setattr__(self, "active_bits", bits)

    def __len__(self) -> int:
        return 2 * self.rss.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.rss, self.active_bits])

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.rss, other.rss) and np.array_equal(self.active_bits, other.active_bits)

    __hash__ = None


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    location: PlanarPoint
    source: SampleSource = SampleSource.SYNCHRONIZED


@dataclass
class FeatureStats:
    """Counters filled in by build_feature_vector; shared across many calls."""

    skipped_towers: int = 0
    conflicts: int = 0


def _check_latlon(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidInput("non-finite coordinates")
    if not -90.0 <= lat <= 90.0:
        raise InvalidInput(f"latitude {lat} out of range")
    if not -180.0 <= lon <= 180.0:
        raise InvalidInput(f"longitude {lon} out of range")


def project_to_local(lat: float, lon: float, origin: tuple[float, float]) -> PlanarPoint:
    """Equirectangular projection of (lat, lon) to metres east/north of ``origin``."""
    lat0, lon0 = origin
    _check_latlon(lat, lon)
    _check_latlon(lat0, lon0)
    rad = math.pi / 180.0
    x = EARTH_RADIUS_M * (lon - lon0) * math.cos(lat0 * rad) * rad
    y = EARTH_RADIUS_M * (lat - lat0) * rad
    return PlanarPoint(x, y)


def unproject(p: PlanarPoint, origin: tuple[float, float]) -> tuple[float, float]:
    """Inverse of :func:`project_to_local`; returns (lat, lon)."""
    lat0, lon0 = origin
    _check_latlon(lat0, lon0)
    rad = math.pi / 180.0
    coslat = math.cos(lat0 * rad)
    if coslat <= 0:
        raise InvalidInput("origin at a pole cannot be unprojected")
    lat = lat0 + p.y / (EARTH_RADIUS_M * rad)
    lon = lon0 + p.x / (EARTH_RADIUS_M * coslat * rad)
    _check_latlon(lat, lon)
    return lat, lon


def centroid_origin(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    if not points:
        raise InvalidInput("cannot take the centroid of no coordinates")
    arr = np.asarray(points, dtype=float)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def build_feature_vector(
    record: ProviderRecord, registry: TowerRegistry, stats: FeatureStats | None = None
) -> FeatureVector:
    """Place each heard tower's RSS (and active bit) at its registry column.

    Towers missing from the registry are skipped and counted in ``stats``. A
    tower listed as both active and neighbour is treated as active.
    """
    m = len(registry)
    rss = np.zeros(m)
    bits = np.zeros(m)
    heard = np.zeros(m, dtype=bool)
    active_ids = set()
    for obs in record.active_cells:
        j = registry.get(obs.tower_id)
        active_ids.add(obs.tower_id)
        if j is None:
            if stats is not None:
                stats.skipped_towers += 1
            continue
        # duplicates keep the strongest reading so list order never matters
        rss[j] = max(rss[j], obs.rss) if heard[j] else obs.rss
        heard[j] = True
        bits[j] = 1.0
    for obs in record.neighbor_cells:
        if obs.tower_id in active_ids:
            if stats is not None:
                stats.conflicts += 1
            continue
        j = registry.get(obs.tower_id)
        if j is None:
            if stats is not None:
                stats.skipped_towers += 1
            continue
        rss[j] = max(rss[j], obs.rss) if heard[j] else obs.rss
        heard[j] = True
    return FeatureVector(rss, bits)
