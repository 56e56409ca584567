"""Reference computations kept independent of the code under test."""

from fractions import Fraction

import mpmath

mpmath.mp.dps = 40

RADIUS_KM = mpmath.mpf("6371.0088")


def great_circle_km(lat1, lon1, lat2, lon2):
    """Central angle from unit vectors: atan2(|u x v|, u . v), at 40 digits."""
    def unit(lat, lon):
        la, lo = mpmath.radians(mpmath.mpf(lat)), mpmath.radians(mpmath.mpf(lon))
        return (mpmath.cos(la) * mpmath.cos(lo), mpmath.cos(la) * mpmath.sin(lo), mpmath.sin(la))

    u, v = unit(lat1, lon1), unit(lat2, lon2)
    cross = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
    dot = sum(a * b for a, b in zip(u, v))
    return RADIUS_KM * mpmath.atan2(mpmath.sqrt(sum(c * c for c in cross)), dot)


def equirectangular_km(lat1, lon1, lat2, lon2):
    import math

    mean = math.radians((lat1 + lat2) / 2)
    x = math.radians(lon2 - lon1) * math.cos(mean)
    y = math.radians(lat2 - lat1)
    return 6371.0088 * math.hypot(x, y)


def raster_iou(a, b):
    """IoU by counting unit pixels covered by integer boxes (x0, y0, x1, y1)."""
    def pixels(box):
        x0, y0, x1, y1 = box
        return {(x, y) for x in range(x0, x1) for y in range(y0, y1)}

    pa, pb = pixels(a), pixels(b)
    union = len(pa | pb)
    return Fraction(len(pa & pb), union)


def fold_bbox(vertices):
    lo_x = lo_y = float("inf")
    hi_x = hi_y = float("-inf")
    for x, y in vertices:
        lo_x = x if x < lo_x else lo_x
        lo_y = y if y < lo_y else lo_y
        hi_x = x if x > hi_x else hi_x
        hi_y = y if y > hi_y else hi_y
    return lo_x, lo_y, hi_x, hi_y


def brute_force_best(distances, spots, alpha, exact=False):
    """Lot id minimizing alpha*d + (1-alpha)/m over non-full lots, first lot on ties.

    Scores every candidate in double precision, or in exact rationals with
    ``exact=True`` (which can split values that round to the same double).
    """
    best_key, best_id = None, None
    for idx, (lot_id, d) in enumerate(distances.items()):
        m = spots[lot_id]
        if m == 0:
            continue
        if exact:
            value = Fraction(alpha) * Fraction(d) + (1 - Fraction(alpha)) / m
        else:
            value = alpha * d + (1.0 - alpha) / m
        key = (value, idx)
        if best_key is None or key < best_key:
            best_key, best_id = key, lot_id
    return best_id
