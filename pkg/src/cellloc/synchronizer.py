"""Timestamp matching of provider records against GPS fixes."""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from cellloc.domain import (
    FeatureStats,
    GpsFix,
    InvalidInput,
    LabeledSample,
    ProviderRecord,
    SampleSource,
    TowerRegistry,
    build_feature_vector,
    project_to_local,
)

# Both sides are int64 on the wire.
_INT64_MAX = 2**63 - 1
_INT64_MIN = -(2**63)

STRICT_PSI_MS = 10
REALISTIC_PSI_MS = 1000


@dataclass(frozen=True)
class SyncConfig:
    psi_ms: int = STRICT_PSI_MS
    default_offset_ms: int = 0
    phone_clock_offset_ms: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.psi_ms < 0:
            raise InvalidInput("psi_ms must be non-negative")

    def offset_for(self, phone_id: str) -> int:
        return self.phone_clock_offset_ms.get(phone_id, self.default_offset_ms)


@dataclass
class SyncReport:
    matched: int = 0
    unmatched_records: int = 0
    unmatched_fixes: int = 0
    ambiguous: int = 0

    def as_dict(self) -> dict:
        return {
            "matched": self.matched,
            "unmatched_records": self.unmatched_records,
            "unmatched_fixes": self.unmatched_fixes,
            "ambiguous": self.ambiguous,
        }


def to_gmt(local_timestamp: int, offset_ms: int) -> int:
    """Convert a phone-local millisecond timestamp to GMT (``local - offset``)."""
    out = int(local_timestamp) - int(offset_ms)
    if not _INT64_MIN <= out <= _INT64_MAX:
        raise InvalidInput(f"timestamp {local_timestamp} - {offset_ms} overflows int64")
    return out


def fixes_to_gmt(fixes: Sequence[GpsFix], cfg: SyncConfig) -> list[GpsFix]:
    return [
        GpsFix(f.phone_id, to_gmt(f.timestamp, cfg.offset_for(f.phone_id)), f.lat, f.lon)
        for f in fixes
    ]


def match_fix(t: int, times: Sequence[int], psi_ms: int) -> tuple[int | None, int]:
    """Index of the nearest time within ``psi_ms`` (earlier wins ties) and the candidate count.

    ``times`` must be sorted ascending.
    """
    lo = bisect.bisect_left(times, t - psi_ms)
    hi = bisect.bisect_right(times, t + psi_ms)
    if lo == hi:
        return None, 0
    best = min(range(lo, hi), key=lambda i: (abs(times[i] - t), times[i]))
    return best, hi - lo


def synchronize(
    records: Sequence[ProviderRecord],
    fixes: Sequence[GpsFix],
    cfg: SyncConfig,
    origin: tuple[float, float],
    registry: TowerRegistry,
    stats: FeatureStats | None = None,
) -> tuple[list[LabeledSample], SyncReport]:
    """Label each provider record with its nearest same-phone GPS fix inside ``psi_ms``.

    ``fixes`` must already be in GMT. Output order follows records sorted by
    (phone_id, timestamp), so the result does not depend on input order.
    """
    by_phone: dict[str, list[GpsFix]] = defaultdict(list)
    for f in fixes:
        by_phone[f.phone_id].append(f)
    for lst in by_phone.values():
        lst.sort(key=lambda f: (f.timestamp, f.lat, f.lon))
    times = {p: [f.timestamp for f in lst] for p, lst in by_phone.items()}

    report = SyncReport()
    used: set[tuple[str, int]] = set()
    out: list[LabeledSample] = []
    ordered = sorted(records, key=lambda r: (r.phone_id, r.timestamp))
    for rec in ordered:
        lst = by_phone.get(rec.phone_id)
        if not lst:
            report.unmatched_records += 1
            continue
        i, n_candidates = match_fix(rec.timestamp, times[rec.phone_id], cfg.psi_ms)
        if i is None:
            report.unmatched_records += 1
            continue
        if n_candidates > 1:
            report.ambiguous += 1
        fix = lst[i]
        used.add((rec.phone_id, i))
        report.matched += 1
        out.append(
            LabeledSample(
                build_feature_vector(rec, registry, stats),
                project_to_local(fix.lat, fix.lon, origin),
                SampleSource.SYNCHRONIZED,
            )
        )
    report.unmatched_fixes = len(fixes) - len(used)
    return out, report
