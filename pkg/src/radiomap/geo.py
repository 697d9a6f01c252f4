"""Geodetic points, great-circle distances, and a local metric frame.

Positions are (latitude, longitude, height). Horizontal separation uses
the spherical law of cosines on a sphere of mean radius; heights live in
one consistent above-ground reference frame. A ``LocalFrame`` provides an
equirectangular east/north projection about an origin, good to well below
the millimeter over the sub-kilometre extents this package grids.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    """A transmitter or receiver position."""

    lat_deg: float
    lon_deg: float
    height_m: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.lat_deg <= 90.0):
            raise DataError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not (-180.0 <= self.lon_deg <= 180.0):
            raise DataError(f"longitude {self.lon_deg} outside [-180, 180]")
        if not np.isfinite(self.height_m) or self.height_m < 0.0:
            raise DataError(f"height {self.height_m} must be finite and >= 0")


def horizontal_distance_arrays(lat1_deg, lon1_deg, lat2_deg, lon2_deg):
    """Great-circle distance in meters, elementwise over degree inputs.

    Computes A*arccos(sin p1 sin p2 + cos p1 cos p2 cos dlon) in its
    arctan2 form: algebraically identical, but it neither needs the
    round-off clamp at coincident points nor loses the ~15 cm of
    resolution the arccos form drops near zero separation.
    """
    lat1 = np.radians(np.asarray(lat1_deg, dtype=float))
    lat2 = np.radians(np.asarray(lat2_deg, dtype=float))
    dlon = np.radians(np.asarray(lon1_deg, dtype=float) - np.asarray(lon2_deg, dtype=float))
    s1, c1 = np.sin(lat1), np.cos(lat1)
    s2, c2 = np.sin(lat2), np.cos(lat2)
    cd, sd = np.cos(dlon), np.sin(dlon)
    num = np.hypot(c2 * sd, c1 * s2 - s1 * c2 * cd)
    return EARTH_RADIUS_M * np.arctan2(num, s1 * s2 + c1 * c2 * cd)


def horizontal_distance(p: GeoPoint, q: GeoPoint) -> float:
    """Great-circle distance between two points, ignoring height."""
    return float(horizontal_distance_arrays(p.lat_deg, p.lon_deg, q.lat_deg, q.lon_deg))


def vertical_distance(p: GeoPoint, q: GeoPoint) -> float:
    """Absolute height difference in meters."""
    return abs(p.height_m - q.height_m)


def distance_3d(p: GeoPoint, q: GeoPoint) -> float:
    """Euclidean combination of horizontal and vertical separation."""
    return float(np.hypot(horizontal_distance(p, q), vertical_distance(p, q)))


def pairwise_distances(lat_deg, lon_deg, height_m):
    """(d_v, d_h) matrices over all point pairs; inputs are 1-D arrays."""
    lat = np.asarray(lat_deg, dtype=float)
    lon = np.asarray(lon_deg, dtype=float)
    h = np.asarray(height_m, dtype=float)
    d_h = horizontal_distance_arrays(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    d_v = np.abs(h[:, None] - h[None, :])
    return d_v, d_h


@dataclass(frozen=True)
class LocalFrame:
    """Equirectangular projection about an origin, in meters east/north."""

    origin: GeoPoint
    meters_per_deg_lat: float
    meters_per_deg_lon: float

    def __post_init__(self):
        if not (np.isfinite(self.meters_per_deg_lat) and self.meters_per_deg_lat > 0.0):
            raise DataError("meters_per_deg_lat must be positive and finite")
        if not (np.isfinite(self.meters_per_deg_lon) and self.meters_per_deg_lon > 0.0):
            raise DataError("meters_per_deg_lon must be positive and finite")

    @classmethod
    def at(cls, origin: GeoPoint) -> "LocalFrame":
        scale = EARTH_RADIUS_M * np.pi / 180.0
        return cls(
            origin=origin,
            meters_per_deg_lat=scale,
            meters_per_deg_lon=scale * np.cos(np.radians(origin.lat_deg)),
        )

    @classmethod
    def from_points(cls, lat_deg, lon_deg) -> "LocalFrame":
        """Frame centered on the centroid of a sample set."""
        origin = GeoPoint(float(np.mean(lat_deg)), float(np.mean(lon_deg)), 0.0)
        return cls.at(origin)

    def to_local_xy(self, lat_deg, lon_deg):
        """Degrees -> (x east, y north) meters relative to the origin."""
        x = (np.asarray(lon_deg, dtype=float) - self.origin.lon_deg) * self.meters_per_deg_lon
        y = (np.asarray(lat_deg, dtype=float) - self.origin.lat_deg) * self.meters_per_deg_lat
        return x, y

    def from_local_xy(self, x_m, y_m):
        """(x east, y north) meters -> (lat, lon) degrees."""
        lon = self.origin.lon_deg + np.asarray(x_m, dtype=float) / self.meters_per_deg_lon
        lat = self.origin.lat_deg + np.asarray(y_m, dtype=float) / self.meters_per_deg_lat
        return lat, lon


def to_local_xy(frame: LocalFrame, p: GeoPoint):
    x, y = frame.to_local_xy(p.lat_deg, p.lon_deg)
    return float(x), float(y)


def from_local_xy(frame: LocalFrame, x_m: float, y_m: float) -> GeoPoint:
    lat, lon = frame.from_local_xy(x_m, y_m)
    return GeoPoint(float(lat), float(lon), 0.0)


def bearing_deg(p: GeoPoint, q: GeoPoint) -> float:
    """Initial bearing from p to q, degrees clockwise from north."""
    lat1, lat2 = np.radians(p.lat_deg), np.radians(q.lat_deg)
    dlon = np.radians(q.lon_deg - p.lon_deg)
    y = np.sin(dlon) * np.cos(lat2)
    x = np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)
    return float(np.degrees(np.arctan2(y, x)) % 360.0)
