"""Vacant-spot tracking and per-lot availability counts.

Each camera keeps its own list of spot tracks. A parking-class detection
that overlaps an existing track (IoU at or above ``tau_match``) is the same
physical spot seen again, so it extends the track rather than adding to the
count. Tracks start tentative, become active once they collect
``h_confirm`` hits inside a ``window``-frame ring, fall back to tentative if
their hits drop below that, and are dropped after ``expiry`` consecutive
misses. Only active tracks count as available spots.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

from parkrec.geo import GeoPoint
from parkrec.perception import BBox, DetectionEvent, ObjectClass, filter_by_confidence, iou


class OccupancyError(Exception):
    pass


class RegistryError(OccupancyError):
    """Unknown lot, or a camera that is not installed at the named lot."""


class OrderingError(OccupancyError):
    """Frame index did not increase for a camera."""


@dataclass(frozen=True)
class ParkingLot:
    lot_id: str
    name: str
    location: GeoPoint
    camera_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "camera_ids", tuple(self.camera_ids))

    def to_dict(self) -> dict:
        return {
            "lot_id": self.lot_id,
            "name": self.name,
            "lat": self.location.lat_deg,
            "lon": self.location.lon_deg,
            "camera_ids": list(self.camera_ids),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ParkingLot":
        return cls(str(obj["lot_id"]), obj.get("name", str(obj["lot_id"])),
                   GeoPoint(obj["lat"], obj["lon"]), tuple(obj.get("camera_ids", ())))


class Registry:
    """Ordered, read-only collection of parking lots.

    Order matters: it is the tie-break order for recommendations.
    """

    def __init__(self, lots: Iterable[ParkingLot]):
        self.lots = tuple(lots)
        self._by_id = {}
        self._camera_lot = {}
        for lot in self.lots:
            if lot.lot_id in self._by_id:
                raise ValueError(f"duplicate lot_id {lot.lot_id!r}")
            self._by_id[lot.lot_id] = lot
            for cam in lot.camera_ids:
                if cam in self._camera_lot:
                    raise ValueError(f"camera {cam!r} registered at two lots")
                self._camera_lot[cam] = lot.lot_id

    def __len__(self):
        return len(self.lots)

    def __iter__(self):
        return iter(self.lots)

    def __contains__(self, lot_id):
        return lot_id in self._by_id

    def __getitem__(self, lot_id) -> ParkingLot:
        try:
            return self._by_id[lot_id]
        except KeyError:
            raise RegistryError(f"unknown lot {lot_id!r}") from None

    def ids(self) -> list:
        return [lot.lot_id for lot in self.lots]

    def check_camera(self, lot_id: str, camera_id: str) -> None:
        lot = self[lot_id]
        if camera_id not in lot.camera_ids:
            raise RegistryError(f"camera {camera_id!r} is not installed at lot {lot_id!r}")

    def to_json(self) -> str:
        return json.dumps([lot.to_dict() for lot in self.lots], indent=2)


def load_registry(path) -> Registry:
    with open(path) as fh:
        return Registry(ParkingLot.from_dict(obj) for obj in json.load(fh))


def default_registry() -> Registry:
    """The seven Johannesburg lots shipped with the package."""
    text = resources.files("parkrec").joinpath("data/registry.json").read_text()
    return Registry(ParkingLot.from_dict(obj) for obj in json.loads(text))


@dataclass(frozen=True)
class TrackerConfig:
    tau_match: float = 0.5
    window: int = 10
    h_confirm: int = 3
    expiry: int = 10
    beta: float = 0.3
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau_match <= 1.0:
            raise ValueError("tau_match must be in (0, 1]")
        if self.window < 1 or self.h_confirm < 1 or self.expiry < 1:
            raise ValueError("window, h_confirm and expiry must be positive")
        if self.h_confirm > self.window:
            raise ValueError("h_confirm cannot exceed window")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0, 1]")

    @classmethod
    def from_dict(cls, obj: Optional[Mapping]) -> "TrackerConfig":
        if not obj:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown tracker settings {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrackerConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


class TrackState(str, Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    EXPIRED = "expired"


@dataclass
class SpotTrack:
    track_id: str
    camera_id: str
    smoothed_bbox: BBox
    hit_window: deque
    state: TrackState = TrackState.TENTATIVE
    last_matched_frame: int = 0
    miss_streak: int = 0

    @property
    def hits(self) -> int:
        return sum(self.hit_window)

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "camera_id": self.camera_id,
            "bbox": self.smoothed_bbox.as_list(),
            "hit_window": [int(h) for h in self.hit_window],
            "state": self.state.value,
            "last_matched_frame": self.last_matched_frame,
            "miss_streak": self.miss_streak,
        }

    @classmethod
    def from_dict(cls, obj: dict, window: int) -> "SpotTrack":
        return cls(obj["track_id"], obj["camera_id"], BBox(*obj["bbox"]),
                   deque((bool(h) for h in obj["hit_window"]), maxlen=window),
                   TrackState(obj["state"]), obj["last_matched_frame"], obj["miss_streak"])


@dataclass
class ApplyResult:
    """Track ids touched by one event."""

    matched: list = field(default_factory=list)
    created: list = field(default_factory=list)
    promoted: list = field(default_factory=list)
    demoted: list = field(default_factory=list)
    expired: list = field(default_factory=list)
    merged: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OccupancySnapshot:
    version: int
    as_of: int
    counts: Mapping

    def __post_init__(self):
        object.__setattr__(self, "counts", MappingProxyType(dict(self.counts)))

    def to_dict(self) -> dict:
        return {"version": self.version, "as_of": self.as_of, "counts": dict(self.counts)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


class OccupancyState:
    """Mutable tracker state for every camera in a registry.

    One writer at a time; :meth:`snapshot` hands out immutable copies for
    readers.
    """

    def __init__(self, registry: Registry, config: TrackerConfig = TrackerConfig()):
        self.registry = registry
        self.config = config
        self.tracks = {}
        self.last_frame = {}
        self.lot_updated_ms = {}
        self.as_of = 0
        self.version = 0
        self.latest = None
        self._next_track = 1

    def _new_track_id(self, camera_id: str) -> str:
        tid = f"{camera_id}#{self._next_track}"
        self._next_track += 1
        return tid

    def check_event(self, event: DetectionEvent) -> None:
        """Raise if ``event`` cannot be applied; never mutates."""
        self.registry.check_camera(event.lot_id, event.camera_id)
        last = self.last_frame.get(event.camera_id)
        if last is not None and event.frame_index <= last:
            raise OrderingError(
                f"camera {event.camera_id!r}: frame {event.frame_index} does not follow {last}")

    def apply_event(self, event: DetectionEvent) -> ApplyResult:
        self.check_event(event)
        cfg = self.config
        result = ApplyResult()
        tracks = self.tracks.setdefault(event.camera_id, [])
        boxes = [d.bbox for d in event.detections if d.object_class is ObjectClass.PARKING]

        pairs = []
        for t, track in enumerate(tracks):
            for d, box in enumerate(boxes):
                overlap = iou(track.smoothed_bbox, box)
                if overlap >= cfg.tau_match:
                    pairs.append((-overlap, t, d))
        pairs.sort()
        track_used, box_used = set(), set()
        for _, t, d in pairs:
            if t in track_used or d in box_used:
                continue
            track_used.add(t)
            box_used.add(d)
            track = tracks[t]
            old, new = track.smoothed_bbox, boxes[d]
            b = cfg.beta
            track.smoothed_bbox = BBox((1 - b) * old.x_min + b * new.x_min, (1 - b) * old.y_min + b * new.y_min,
                                       (1 - b) * old.x_max + b * new.x_max, (1 - b) * old.y_max + b * new.y_max)
            track.hit_window.append(True)
            track.miss_streak = 0
            track.last_matched_frame = event.frame_index
            result.matched.append(track.track_id)

        survivors = []
        for t, track in enumerate(tracks):
            if t not in track_used:
                track.hit_window.append(False)
                track.miss_streak += 1
                if track.miss_streak >= cfg.expiry:
                    track.state = TrackState.EXPIRED
                    result.expired.append(track.track_id)
                    continue
            survivors.append(track)

        for d, box in enumerate(boxes):
            if d in box_used:
                continue
            track = SpotTrack(self._new_track_id(event.camera_id), event.camera_id, box,
                              deque([True], maxlen=cfg.window), last_matched_frame=event.frame_index)
            survivors.append(track)
            result.created.append(track.track_id)

        for track in survivors:
            if track.state is TrackState.TENTATIVE and track.hits >= cfg.h_confirm:
                track.state = TrackState.ACTIVE
                result.promoted.append(track.track_id)
            elif track.state is TrackState.ACTIVE and track.hits < cfg.h_confirm:
                track.state = TrackState.TENTATIVE
                result.demoted.append(track.track_id)

        self.tracks[event.camera_id] = self._merge_duplicates(survivors, result)
        self.last_frame[event.camera_id] = event.frame_index
        self.lot_updated_ms[event.lot_id] = max(self.lot_updated_ms.get(event.lot_id, 0), event.timestamp_ms)
        self.as_of = max(self.as_of, event.timestamp_ms)
        return result

    def _merge_duplicates(self, tracks: list, result: ApplyResult) -> list:
        # Two tracks on one spot: keep the active/older one, drop the other.
        ranked = sorted(tracks, key=lambda t: (t.state is not TrackState.ACTIVE, _track_seq(t)))
        kept = []
        for track in ranked:
            if any(iou(track.smoothed_bbox, other.smoothed_bbox) >= self.config.tau_match for other in kept):
                result.merged.append(track.track_id)
                continue
            kept.append(track)
        kept.sort(key=_track_seq)
        return kept

    def active_tracks(self, camera_id: str) -> list:
        return [t for t in self.tracks.get(camera_id, []) if t.state is TrackState.ACTIVE]

    def available_spots(self, lot_id: str) -> int:
        lot = self.registry[lot_id]
        return sum(len(self.active_tracks(cam)) for cam in lot.camera_ids)

    def counts(self) -> dict:
        return {lot.lot_id: self.available_spots(lot.lot_id) for lot in self.registry}

    def snapshot(self) -> OccupancySnapshot:
        self.version += 1
        self.latest = OccupancySnapshot(self.version, self.as_of, self.counts())
        return self.latest

    def to_dict(self) -> dict:
        """Full tracker state, stable enough to compare byte-for-byte once dumped."""
        return {
            "config": self.config.to_dict(),
            "as_of": self.as_of,
            "version": self.version,
            "next_track": self._next_track,
            "last_frame": dict(sorted(self.last_frame.items())),
            "lot_updated_ms": dict(sorted(self.lot_updated_ms.items())),
            "tracks": {cam: [t.to_dict() for t in ts] for cam, ts in sorted(self.tracks.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict, registry: Registry) -> "OccupancyState":
        config = TrackerConfig.from_dict(obj["config"])
        state = cls(registry, config)
        state.as_of = obj["as_of"]
        state.version = obj["version"]
        state._next_track = obj["next_track"]
        state.last_frame = dict(obj["last_frame"])
        state.lot_updated_ms = dict(obj["lot_updated_ms"])
        state.tracks = {cam: [SpotTrack.from_dict(t, config.window) for t in ts]
                        for cam, ts in obj["tracks"].items()}
        if state.version:
            state.latest = OccupancySnapshot(state.version, state.as_of, state.counts())
        return state


def _track_seq(track: SpotTrack) -> int:
    return int(track.track_id.rsplit("#", 1)[1])


def canonical_state(state: OccupancyState) -> str:
    """Counts plus per-camera tracks as sorted, compact JSON."""
    return json.dumps({"counts": state.counts(), "state": state.to_dict()}, sort_keys=True, separators=(",", ":"))


def apply_event(state: OccupancyState, event: DetectionEvent) -> ApplyResult:
    return state.apply_event(event)


def available_spots(state: OccupancyState, lot_id: str) -> int:
    return state.available_spots(lot_id)


def snapshot(state: OccupancyState) -> OccupancySnapshot:
    return state.snapshot()


def track_events(events: Iterable[DetectionEvent], registry: Registry,
                 config: TrackerConfig = TrackerConfig()) -> OccupancyState:
    """Confidence-filter and apply a sequence of events to a fresh state."""
    state = OccupancyState(registry, config)
    for event in events:
        state.apply_event(filter_by_confidence(event, config.confidence_threshold))
    return state


def read_event_file(path) -> list:
    """Wire-format events, one JSON object per line; blank lines skipped."""
    events = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            events.append(DetectionEvent.from_json(line))
    return events
