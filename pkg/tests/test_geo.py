import math
import random

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import LOT3, LOT5
from oracles import great_circle_km
from parkrec.geo import EARTH, EarthModel, GeoPoint, distance_matrix, haversine_km
from parkrec.occupancy import default_registry

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False)
points = st.builds(GeoPoint, lats, lons)


def test_identity():
    p = GeoPoint(-26.0158, 28.0064)
    assert haversine_km(p, p) == 0.0


def test_lot3_to_lot5():
    # 0.939820655717466 km from the 40-digit vector oracle
    assert haversine_km(LOT3, LOT5) == pytest.approx(0.939820655717466, rel=1e-12)
    assert haversine_km(LOT3, LOT5) == pytest.approx(0.94, rel=0.01)
    assert haversine_km(LOT3, LOT5) == haversine_km(LOT5, LOT3)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 181), (0, -180.01), (math.nan, 0), (0, math.inf)])
def test_geopoint_rejects_out_of_range(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_earth_model_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        EarthModel(0.0)
    assert EARTH.radius_km == 6371.0088


def test_antipodes_do_not_produce_nan():
    d = haversine_km(GeoPoint(0, 0), GeoPoint(0, 180))
    assert d == pytest.approx(math.pi * EARTH.radius_km, rel=1e-15)
    d = haversine_km(GeoPoint(45.0, 10.0), GeoPoint(-45.0, -170.0))
    assert not math.isnan(d) and d <= math.pi * EARTH.radius_km + 1e-9


@given(points, points)
def test_symmetric_bounded_nonnegative(a, b):
    d = haversine_km(a, b)
    assert d == haversine_km(b, a)
    assert 0.0 <= d <= math.pi * EARTH.radius_km + 1e-9


@given(points, lats)
def test_positive_for_distinct_latitudes(a, lat):
    b = GeoPoint(lat, a.lon_deg)
    if abs(a.lat_deg - lat) > 1e-9:
        assert haversine_km(a, b) > 0


def test_triangle_inequality_random_triples():
    rng = random.Random(11)
    for _ in range(1000):
        a, b, c = (GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3))
        assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9


def test_matches_vector_oracle():
    rng = random.Random(3)
    for _ in range(200):
        a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        ref = great_circle_km(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg)
        assert abs(mpmath.mpf(haversine_km(a, b)) - ref) / ref < 1e-12


def test_distance_matrix_zero_diagonal():
    lots = list(default_registry())
    m = distance_matrix([lot.location for lot in lots], lots)
    assert m.shape == (7, 7)
    assert np.all(np.diag(m) == 0.0)
    assert np.array_equal(m, m.T)


def test_distance_matrix_single_entry():
    m = distance_matrix([LOT3], [LOT5])
    assert m.shape == (1, 1) and m[0, 0] == haversine_km(LOT3, LOT5)


def test_distance_matrix_against_oracle():
    origins = [GeoPoint(-26.0797, 27.9313), GeoPoint(-26.0107, 28.1036), GeoPoint(-26.2152, 27.8706),
               GeoPoint(-26.2216, 28.1704), GeoPoint(-25.8317, 28.1574)]
    lots = list(default_registry())
    m = distance_matrix(origins, lots)
    assert m.shape == (5, 7)
    for j, o in enumerate(origins):
        for i, lot in enumerate(lots):
            ref = great_circle_km(o.lat_deg, o.lon_deg, lot.location.lat_deg, lot.location.lon_deg)
            assert float(abs(m[j, i] - ref) / ref) < 1e-12


def test_distance_matrix_rejects_empty():
    with pytest.raises(ValueError):
        distance_matrix([], [LOT3])
    with pytest.raises(ValueError):
        distance_matrix([LOT3], [])
