"""GPS <-> local planar frame conversions and geodesic distance on a spherical earth.

The local frame is an equirectangular projection around a fixed origin:
x grows east, y grows north, both in meters. Angles are radians throughout;
degrees appear only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import PolarOrigin

EARTH_RADIUS_M = 6_371_000.0

_COS_EPS = 1e-12


@dataclass(frozen=True)
class GeoPoint:
    """Latitude/longitude in radians."""

    lat: float
    lon: float

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float) -> GeoPoint:
        return cls(math.radians(lat_deg), math.radians(lon_deg))

    @property
    def lat_deg(self) -> float:
        return math.degrees(self.lat)

    @property
    def lon_deg(self) -> float:
        return math.degrees(self.lon)


@dataclass(frozen=True)
class WorldPoint:
    """Position on the sea plane in meters: x east, y north of the origin."""

    x: float
    y: float


@dataclass(frozen=True)
class EarthModel:
    """Spherical earth of configurable radius (meters)."""

    radius: float = EARTH_RADIUS_M


def gps_to_local(p: GeoPoint, origin: GeoPoint, earth: EarthModel = EarthModel()) -> WorldPoint:
    """Project a GPS point onto the local planar frame around ``origin``.

    x = r * (lon - lon0) * cos(lat0), y = r * (lat - lat0). Exact on the
    sphere only at the origin; adequate within a few kilometers.
    """
    x = earth.radius * (p.lon - origin.lon) * math.cos(origin.lat)
    y = earth.radius * (p.lat - origin.lat)
    return WorldPoint(x, y)


def local_to_gps(w: WorldPoint, origin: GeoPoint, earth: EarthModel = EarthModel()) -> GeoPoint:
    """Invert :func:`gps_to_local`.

    Raises:
        PolarOrigin: origin latitude is (numerically) a pole, so east
            displacement carries no longitude information.
    """
    cos0 = math.cos(origin.lat)
    if abs(cos0) < _COS_EPS:
        raise PolarOrigin(f"origin latitude {origin.lat} rad is too close to a pole")
    lat = origin.lat + w.y / earth.radius
    lon = origin.lon + w.x / (earth.radius * cos0)
    return GeoPoint(lat, lon)


def haversine(a: GeoPoint, b: GeoPoint, earth: EarthModel = EarthModel()) -> float:
    """Great-circle distance between two GPS points in meters."""
    dlat = b.lat - a.lat
    dlon = b.lon - a.lon
    h = math.sin(dlat / 2.0) ** 2 + math.cos(a.lat) * math.cos(b.lat) * math.sin(dlon / 2.0) ** 2
    # clamp against rounding just above 1 for near-antipodal pairs
    return 2.0 * earth.radius * math.asin(min(1.0, math.sqrt(h)))
