"""Detector output model, box geometry and annotation ingestion.

A camera frame arrives as a :class:`DetectionEvent`, serialized on the wire
as one line of JSON::

    {"camera_id": "cam-3", "lot_id": "3", "frame_index": 12,
     "timestamp_ms": 1700000000000,
     "detections": [{"class": "parking", "bbox": [10.0, 20.0, 50.0, 90.0],
                     "confidence": 0.91, "polygon": [[10, 20], ...]}]}

``polygon`` is optional and omitted when absent.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence


class WireFormatError(ValueError):
    """A wire record or annotation document does not match its schema."""


class UnknownCategoryError(WireFormatError):
    pass


class MalformedPolygonError(WireFormatError):
    pass


class DuplicateImageError(WireFormatError):
    pass


class ObjectClass(str, Enum):
    CAR = "car"
    PARKING = "parking"
    PERSON = "person"
    PLATE = "plate"

    @classmethod
    def parse(cls, name: str) -> "ObjectClass":
        if not isinstance(name, str):
            raise UnknownCategoryError(f"class name must be a string, got {name!r}")
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise UnknownCategoryError(f"unknown object class {name!r}") from None


def _finite(*values) -> bool:
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in values)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not _finite(self.x_min, self.y_min, self.x_max, self.y_max):
            raise ValueError(f"non-finite box {self}")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError(f"negative pixel coordinate in {self}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box has no area: {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def expand(self, pad: float) -> "BBox":
        """Grow by ``pad`` on every side, clipping the low edges at zero."""
        return BBox(max(self.x_min - pad, 0), max(self.y_min - pad, 0), self.x_max + pad, self.y_max + pad)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(inter / union, 1.0)


def polygon_bbox(vertices: Sequence[Sequence[float]]) -> BBox:
    """Tight axis-aligned box around a polygon."""
    if len(vertices) < 3:
        raise MalformedPolygonError(f"polygon needs at least 3 vertices, got {len(vertices)}")
    xs, ys = [], []
    for vertex in vertices:
        if len(vertex) != 2 or not _finite(*vertex):
            raise MalformedPolygonError(f"bad polygon vertex {vertex!r}")
        xs.append(vertex[0])
        ys.append(vertex[1])
    try:
        return BBox(min(xs), min(ys), max(xs), max(ys))
    except ValueError as exc:
        raise MalformedPolygonError(f"degenerate polygon: {exc}") from None


@dataclass(frozen=True)
class Detection:
    object_class: ObjectClass
    bbox: BBox
    confidence: float
    mask_polygon: Optional[tuple] = None

    def __post_init__(self):
        if not _finite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")
        if self.mask_polygon is not None:
            poly = tuple(tuple(v) for v in self.mask_polygon)
            outer = polygon_bbox(poly)
            if (outer.x_min < self.bbox.x_min - 1 or outer.y_min < self.bbox.y_min - 1
                    or outer.x_max > self.bbox.x_max + 1 or outer.y_max > self.bbox.y_max + 1):
                raise MalformedPolygonError("mask polygon extends beyond its bounding box")
            object.__setattr__(self, "mask_polygon", poly)

    def to_wire(self) -> dict:
        out = {"class": self.object_class.value, "bbox": self.bbox.as_list(), "confidence": self.confidence}
        if self.mask_polygon is not None:
            out["polygon"] = [list(v) for v in self.mask_polygon]
        return out

    @classmethod
    def from_wire(cls, obj) -> "Detection":
        if not isinstance(obj, dict):
            raise WireFormatError("detection must be an object")
        missing = {"class", "bbox", "confidence"} - obj.keys()
        if missing:
            raise WireFormatError(f"detection missing fields {sorted(missing)}")
        box = obj["bbox"]
        if not isinstance(box, list) or len(box) != 4:
            raise WireFormatError("bbox must be [x_min, y_min, x_max, y_max]")
        try:
            return cls(ObjectClass.parse(obj["class"]), BBox(*box), obj["confidence"], obj.get("polygon"))
        except WireFormatError:
            raise
        except (ValueError, TypeError) as exc:
            raise WireFormatError(str(exc)) from None


@dataclass(frozen=True)
class DetectionEvent:
    """Everything the detector reported for one camera frame."""

    camera_id: str
    lot_id: str
    frame_index: int
    timestamp_ms: int
    detections: tuple = ()

    def __post_init__(self):
        for name in ("camera_id", "lot_id"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                raise ValueError(f"{name} must be a non-empty string")
        for name in ("frame_index", "timestamp_ms"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
        object.__setattr__(self, "detections", tuple(self.detections))

    def to_wire(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "lot_id": self.lot_id,
            "frame_index": self.frame_index,
            "timestamp_ms": self.timestamp_ms,
            "detections": [d.to_wire() for d in self.detections],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_wire(), separators=(",", ":"))

    @classmethod
    def from_wire(cls, obj) -> "DetectionEvent":
        if not isinstance(obj, dict):
            raise WireFormatError("event must be a JSON object")
        missing = {"camera_id", "lot_id", "frame_index", "timestamp_ms", "detections"} - obj.keys()
        if missing:
            raise WireFormatError(f"event missing fields {sorted(missing)}")
        if not isinstance(obj["detections"], list):
            raise WireFormatError("detections must be an array")
        detections = tuple(Detection.from_wire(d) for d in obj["detections"])
        try:
            return cls(obj["camera_id"], obj["lot_id"], obj["frame_index"], obj["timestamp_ms"], detections)
        except ValueError as exc:
            raise WireFormatError(str(exc)) from None

    @classmethod
    def from_json(cls, line) -> "DetectionEvent":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise WireFormatError(f"invalid JSON: {exc}") from None
        return cls.from_wire(obj)


def redaction_regions(event: DetectionEvent, dilation_px: float = 0.0) -> list:
    """Boxes to blank out so number plates stay unreadable."""
    if dilation_px < 0:
        raise ValueError("dilation_px must be non-negative")
    return [d.bbox.expand(dilation_px) for d in event.detections if d.object_class is ObjectClass.PLATE]


def filter_by_confidence(event: DetectionEvent, threshold: float) -> DetectionEvent:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    kept = tuple(d for d in event.detections if d.confidence >= threshold)
    return dataclasses.replace(event, detections=kept)


# Category spellings seen in annotation tools, beyond the canonical names.
_CATEGORY_ALIASES = {"number plate": "plate", "number_plate": "plate", "license plate": "plate"}


def _category_class(name) -> ObjectClass:
    if isinstance(name, str):
        name = _CATEGORY_ALIASES.get(name.strip().lower(), name)
    return ObjectClass.parse(name)


def _flat_to_vertices(flat) -> list:
    if not isinstance(flat, list) or len(flat) < 6 or len(flat) % 2:
        raise MalformedPolygonError("segmentation polygon must be a flat list of at least 3 x,y pairs")
    return [(flat[k], flat[k + 1]) for k in range(0, len(flat), 2)]


def parse_annotations(document, lot_id: str, camera_id: str,
                      start_ms: int = 0, interval_ms: int = 1000) -> list:
    """Turn a COCO-style polygon annotation document into ground-truth events.

    ``document`` may be a JSON string, bytes, or an already-decoded dict.
    Images become frames in document order; every detection gets
    confidence 1.0.
    """
    if isinstance(document, (str, bytes, bytearray)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise WireFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise WireFormatError("annotation document must be an object")
    images = document.get("images", [])
    annotations = document.get("annotations", [])
    categories = document.get("categories", [])

    classes = {}
    for cat in categories:
        classes[cat["id"]] = _category_class(cat["name"])

    order = []
    for image in images:
        if image["id"] in order:
            raise DuplicateImageError(f"duplicate image id {image['id']!r}")
        order.append(image["id"])
    per_image = {image_id: [] for image_id in order}

    for ann in annotations:
        image_id = ann.get("image_id")
        if image_id not in per_image:
            raise WireFormatError(f"annotation {ann.get('id')!r} references unknown image {image_id!r}")
        if ann.get("category_id") not in classes:
            raise UnknownCategoryError(f"annotation {ann.get('id')!r} has unknown category {ann.get('category_id')!r}")
        parts = ann.get("segmentation")
        if not isinstance(parts, list) or not parts:
            raise MalformedPolygonError(f"annotation {ann.get('id')!r} has no polygon")
        vertices = [v for part in parts for v in _flat_to_vertices(part)]
        if ann.get("bbox"):
            x, y, w, h = ann["bbox"]
            box = BBox(x, y, x + w, y + h)
        else:
            box = polygon_bbox(vertices)
        polygon = _flat_to_vertices(parts[0]) if len(parts) == 1 else None
        per_image[image_id].append(Detection(classes[ann["category_id"]], box, 1.0, polygon))

    return [
        DetectionEvent(camera_id, lot_id, k, start_ms + k * interval_ms, tuple(per_image[image_id]))
        for k, image_id in enumerate(order)
    ]


def count_classes(events: Iterable[DetectionEvent]) -> dict:
    counts = {c: 0 for c in ObjectClass}
    for event in events:
        for det in event.detections:
            counts[det.object_class] += 1
    return counts
