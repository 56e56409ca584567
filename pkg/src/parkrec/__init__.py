"""Parking occupancy tracking and parking-lot recommendation."""

from parkrec.geo import EARTH, EarthModel, GeoPoint, distance_matrix, haversine_km
from parkrec.occupancy import (
    OccupancySnapshot,
    OccupancyState,
    ParkingLot,
    Registry,
    TrackerConfig,
    default_registry,
    load_registry,
)
from parkrec.perception import BBox, Detection, DetectionEvent, ObjectClass, iou
from parkrec.recommender import (
    NoAvailabilityError,
    Recommendation,
    RecommendationRequest,
    ScoredLot,
    objective,
    recommend,
    recommend_with_fixed_distances,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "DetectionEvent",
    "EARTH",
    "EarthModel",
    "GeoPoint",
    "NoAvailabilityError",
    "ObjectClass",
    "OccupancySnapshot",
    "OccupancyState",
    "ParkingLot",
    "Recommendation",
    "RecommendationRequest",
    "Registry",
    "ScoredLot",
    "TrackerConfig",
    "default_registry",
    "distance_matrix",
    "haversine_km",
    "iou",
    "load_registry",
    "objective",
    "recommend",
    "recommend_with_fixed_distances",
]
