"""Geographic points and great-circle distances on a spherical Earth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GeoPoint:
    """A (latitude, longitude) pair in decimal degrees."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat, lon = float(self.lat_deg), float(self.lon_deg)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({self.lat_deg}, {self.lon_deg})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat_deg", lat)
        object.__setattr__(self, "lon_deg", lon)


@dataclass(frozen=True)
class EarthModel:
    radius_km: float = 6371.0088  # IUGG mean radius

    def __post_init__(self):
        if not self.radius_km > 0:
            raise ValueError("radius_km must be positive")


EARTH = EarthModel()


def haversine_km(a: GeoPoint, b: GeoPoint, earth: EarthModel = EARTH) -> float:
    """Great-circle distance between two points, in kilometers.

    Symmetric to the last bit: differences enter only through their
    absolute value and the cosine product commutes.
    """
    phi_a = math.radians(a.lat_deg)
    phi_b = math.radians(b.lat_deg)
    dphi = abs(phi_a - phi_b)
    dlam = abs(math.radians(a.lon_deg) - math.radians(b.lon_deg))
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi_a) * math.cos(phi_b) * math.sin(dlam / 2.0) ** 2
    h = min(max(h, 0.0), 1.0)
    return 2.0 * earth.radius_km * math.asin(math.sqrt(h))


def _location(item) -> GeoPoint:
    return item if isinstance(item, GeoPoint) else item.location


def distance_matrix(origins: Sequence[GeoPoint], lots: Sequence, earth: EarthModel = EARTH) -> np.ndarray:
    """Kilometers from every origin to every lot, shaped ``(len(origins), len(lots))``.

    ``lots`` may hold ``ParkingLot`` objects or bare ``GeoPoint`` values.
    """
    if not origins:
        raise ValueError("distance_matrix needs at least one origin")
    if not lots:
        raise ValueError("distance_matrix needs at least one lot")
    points = [_location(lot) for lot in lots]
    out = np.empty((len(origins), len(points)), dtype=float)
    for j, origin in enumerate(origins):
        for i, point in enumerate(points):
            out[j, i] = haversine_km(origin, point, earth)
    return out
