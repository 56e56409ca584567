"""Rank parking lots by travel distance against spot availability.

A lot with ``m`` free spots at ``d`` km scores ``alpha * d + (1 - alpha) / m``
and lower is better. ``alpha`` near 1 favors the nearest lot, near 0 the
emptiest one. Full lots (``m == 0``) are never candidates.
"""

from __future__ import annotations

import itertools
import math
import secrets
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from parkrec.geo import GeoPoint, haversine_km


class FullLotError(ValueError):
    """Objective requested for a lot with no free spots."""


class NoAvailabilityError(Exception):
    """Every candidate lot is full."""


def objective(distance_km: float, spots: int, alpha: float) -> float:
    if spots < 1:
        raise FullLotError(f"objective undefined for a full lot (spots={spots})")
    if distance_km < 0:
        raise ValueError("distance_km must be non-negative")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    return alpha * distance_km + (1.0 - alpha) / spots


@dataclass(frozen=True)
class RecommendationRequest:
    origin: GeoPoint
    alpha: float = 0.5
    top_k: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.alpha, (int, float)) and 0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha {self.alpha!r} outside [0, 1]")
        if self.top_k is not None and (not isinstance(self.top_k, int) or self.top_k < 1):
            raise ValueError(f"top_k must be a positive integer, got {self.top_k!r}")

    def to_dict(self) -> dict:
        return {"lat": self.origin.lat_deg, "lon": self.origin.lon_deg, "alpha": self.alpha, "top_k": self.top_k}


@dataclass(frozen=True)
class ScoredLot:
    lot_id: str
    distance_km: float
    spots: int
    objective: float

    def to_dict(self) -> dict:
        return {"lot_id": self.lot_id, "distance_km": self.distance_km, "spots": self.spots,
                "objective": self.objective}


@dataclass(frozen=True)
class Recommendation:
    recommendation_id: str
    request: Optional[RecommendationRequest]
    alpha: float
    ranked: tuple
    best: ScoredLot
    snapshot_version: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "recommendation_id": self.recommendation_id,
            "request": self.request.to_dict() if self.request else {"alpha": self.alpha},
            "snapshot_version": self.snapshot_version,
            "best": self.best.to_dict(),
            "ranked": [s.to_dict() for s in self.ranked],
        }


class _IdSource:
    """Monotone counter plus a random suffix, so ids never repeat within a process."""

    def __init__(self, start: int = 1):
        self._counter = itertools.count(start)
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            n = next(self._counter)
        return f"rec-{n:08d}-{secrets.token_hex(4)}"


new_recommendation_id = _IdSource()


def best_single_pass(candidates: Iterable[tuple], alpha: float) -> Optional[ScoredLot]:
    """Best lot in one sweep, holding only the running best.

    ``candidates`` yields ``(lot_id, distance_km, spots)`` in registry
    order. Full lots are skipped; ties keep the earlier lot.
    """
    best = None
    for lot_id, distance_km, spots in candidates:
        if spots < 1:
            continue
        score = objective(distance_km, spots, alpha)
        if best is None or score < best.objective:
            best = ScoredLot(lot_id, distance_km, spots, score)
    return best


def _rank(entries: Sequence[tuple], alpha: float, top_k: Optional[int]) -> tuple:
    best = best_single_pass(entries, alpha)
    if best is None:
        raise NoAvailabilityError("all parking lots are full")
    scored = [(objective(d, m, alpha), idx, ScoredLot(lot_id, d, m, objective(d, m, alpha)))
              for idx, (lot_id, d, m) in enumerate(entries) if m >= 1]
    scored.sort(key=lambda item: (item[0], item[1]))
    ranked = tuple(item[2] for item in scored)
    if top_k is not None:
        ranked = ranked[:top_k]
    return ranked, best


def recommend(snapshot, registry, request: RecommendationRequest,
              recommendation_id: Optional[str] = None) -> Recommendation:
    """Score every non-full lot in ``registry`` from ``request.origin``.

    ``snapshot`` supplies per-lot free-spot counts through ``.counts``;
    lots it does not mention count as full.
    """
    lots = list(registry)
    if not lots:
        raise ValueError("registry is empty")
    counts = snapshot.counts
    entries = [(lot.lot_id, haversine_km(request.origin, lot.location), int(counts.get(lot.lot_id, 0)))
               for lot in lots]
    ranked, best = _rank(entries, request.alpha, request.top_k)
    return Recommendation(recommendation_id or new_recommendation_id(), request, request.alpha,
                          ranked, best, getattr(snapshot, "version", None))


def recommend_with_fixed_distances(distances: Mapping, spots: Mapping, alpha: float = 0.5,
                                   top_k: Optional[int] = None,
                                   recommendation_id: Optional[str] = None) -> Recommendation:
    """Same ranking as :func:`recommend` over precomputed distances.

    Mapping iteration order of ``distances`` is the tie-break order.
    """
    if set(distances) != set(spots):
        raise KeyError(f"distance and spot maps disagree on lots: "
                       f"{sorted(set(distances) ^ set(spots))}")
    if not distances:
        raise ValueError("need at least one lot")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be positive")
    entries = []
    for lot_id, d in distances.items():
        if not (math.isfinite(d) and d >= 0):
            raise ValueError(f"bad distance {d!r} for lot {lot_id!r}")
        entries.append((lot_id, float(d), int(spots[lot_id])))
    ranked, best = _rank(entries, alpha, top_k)
    return Recommendation(recommendation_id or new_recommendation_id(), None, alpha, ranked, best)
