"""Online location estimation from a phone's latest provider record."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from cellloc.domain import FeatureStats, PlanarPoint, ProviderRecord, build_feature_vector
from cellloc.grid import VirtualGrid, centroid
from cellloc.model import NetworkModel


class PhoneNotFound(KeyError):
    pass


@dataclass(frozen=True)
class LocationEstimate:
    cell: int
    cell_center: PlanarPoint
    fused: PlanarPoint
    distribution: np.ndarray
    confidence: float
    low_confidence: bool = False


def argmax_cell(distribution: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(np.asarray(distribution)))


def fuse(distribution: np.ndarray, grid: VirtualGrid, top_n: int | None = None) -> PlanarPoint:
    """Probability-weighted centre of mass of the cell centroids.

    With ``top_n`` only the n most probable cells contribute (renormalised).
    """
    p = np.asarray(distribution, dtype=float)
    if top_n is not None and top_n < len(p):
        keep = np.argsort(-p, kind="stable")[:top_n]
        q = np.zeros_like(p)
        q[keep] = p[keep]
        p = q / q.sum()
    xy = p @ grid.centroids()
    return PlanarPoint(float(xy[0]), float(xy[1]))


def _features(net: NetworkModel, record: ProviderRecord) -> tuple[np.ndarray, bool]:
    stats = FeatureStats()
    fv = build_feature_vector(record, net.registry, stats)
    heard_none = not np.any(fv.rss != 0)
    return fv.flatten(), heard_none


def estimate_cell(net: NetworkModel, record: ProviderRecord) -> int:
    x, _ = _features(net, record)
    return argmax_cell(net.predict_proba(x)[0])


def estimate_from_distribution(p: np.ndarray, grid: VirtualGrid, low_confidence: bool = False,
                               top_n: int | None = None) -> LocationEstimate:
    c = argmax_cell(p)
    return LocationEstimate(c, centroid(c, grid), fuse(p, grid, top_n), p, float(p[c]), low_confidence)


def estimate_location(net: NetworkModel, record: ProviderRecord, top_n: int | None = None) -> LocationEstimate:
    x, heard_none = _features(net, record)
    p = net.predict_proba(x)[0]
    return estimate_from_distribution(p, net.grid, heard_none, top_n)


def estimate_many(net: NetworkModel, records: list[ProviderRecord], top_n: int | None = None):
    """Batched :func:`estimate_location` (one forward pass for all records)."""
    if not records:
        return []
    feats = [_features(net, r) for r in records]
    P = net.predict_proba(np.array([f for f, _ in feats]))
    return [estimate_from_distribution(P[i], net.grid, feats[i][1], top_n) for i in range(len(records))]


class RecordStore:
    """In-memory provider database keyed by phone id."""

    def __init__(self, records: Iterable[ProviderRecord] = ()):
        self._by_phone: dict[str, list[ProviderRecord]] = defaultdict(list)
        for r in records:
            self.add(r)

    def add(self, record: ProviderRecord) -> None:
        self._by_phone[record.phone_id].append(record)

    def latest(self, phone_id: str) -> ProviderRecord:
        recs = self._by_phone.get(phone_id)
        if not recs:
            raise PhoneNotFound(phone_id)
        return max(recs, key=lambda r: r.timestamp)

    def phone_ids(self) -> list[str]:
        return sorted(self._by_phone)

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_phone.values())


def fetch_by_phone_id(store: RecordStore, phone_id: str) -> ProviderRecord:
    return store.latest(phone_id)
