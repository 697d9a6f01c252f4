"""Synthetic radio channel: two-ray pathloss, correlated shadow fading,
zig-zag dataset synthesis, and residual extraction.

Received power in dB is ``rsrp = tx_power - pathloss + shadow``. The
pathloss combines a line-of-sight ray and a ground-reflected ray (image
geometry, Fresnel reflection), each weighted by the endpoint antenna
gains. Shadow fading is a zero-mean Gaussian field whose covariance
follows the fitted 3D correlation model; an optional monotone skewing
transform and white measurement noise make the residuals non-Gaussian
and noisy the way field data is.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .antenna import AntennaPattern, isotropic_pattern
from .correlation import CorrelationModel, cov_from_distances
from .errors import DataError
from .geo import GeoPoint, LocalFrame, bearing_deg, horizontal_distance_arrays, pairwise_distances

DEEP_FADE_FLOOR = 1e-18  # linear-gain floor keeping dB pathloss finite at exact nulls
SHADOW_JITTER = 1e-10  # relative diagonal jitter before factorizing the field covariance


@dataclass(frozen=True)
class Sample:
    """One measurement: location, received power, and (once detrended)
    the shadow-fading residual."""

    location: GeoPoint
    rsrp_db: float
    shadow_db: Optional[float] = None


class SampleSet:
    """Column-oriented collection of samples.

    Arrays are float64 and immutable by convention; ``shadow_db`` is None
    until residuals are extracted.
    """

    __slots__ = ("lat_deg", "lon_deg", "height_m", "rsrp_db", "shadow_db")

    def __init__(self, lat_deg, lon_deg, height_m, rsrp_db, shadow_db=None):
        self.lat_deg = np.atleast_1d(np.asarray(lat_deg, dtype=float))
        self.lon_deg = np.atleast_1d(np.asarray(lon_deg, dtype=float))
        self.height_m = np.atleast_1d(np.asarray(height_m, dtype=float))
        self.rsrp_db = np.atleast_1d(np.asarray(rsrp_db, dtype=float))
        self.shadow_db = None if shadow_db is None else np.atleast_1d(np.asarray(shadow_db, dtype=float))
        n = self.lat_deg.size
        for arr in (self.lon_deg, self.height_m, self.rsrp_db):
            if arr.size != n:
                raise DataError("sample columns have mismatched lengths")
        if self.shadow_db is not None and self.shadow_db.size != n:
            raise DataError("shadow column length mismatch")
        if not np.all(np.isfinite(self.rsrp_db)):
            raise DataError("rsrp values must be finite")
        if np.any(self.lat_deg < -90) or np.any(self.lat_deg > 90):
            raise DataError("latitude outside [-90, 90]")
        if np.any(self.lon_deg < -180) or np.any(self.lon_deg > 180):
            raise DataError("longitude outside [-180, 180]")
        if np.any(~np.isfinite(self.height_m)) or np.any(self.height_m < 0):
            raise DataError("heights must be finite and >= 0")

    def __len__(self):
        return self.lat_deg.size

    def point(self, i: int) -> GeoPoint:
        return GeoPoint(float(self.lat_deg[i]), float(self.lon_deg[i]), float(self.height_m[i]))

    def sample(self, i: int) -> Sample:
        w = None if self.shadow_db is None else float(self.shadow_db[i])
        return Sample(self.point(i), float(self.rsrp_db[i]), w)

    def subset(self, idx) -> "SampleSet":
        w = None if self.shadow_db is None else self.shadow_db[idx]
        return SampleSet(self.lat_deg[idx], self.lon_deg[idx], self.height_m[idx], self.rsrp_db[idx], w)

    @staticmethod
    def concat(parts) -> "SampleSet":
        parts = list(parts)
        shadows = [p.shadow_db for p in parts]
        w = None if any(s is None for s in shadows) else np.concatenate(shadows)
        return SampleSet(
            np.concatenate([p.lat_deg for p in parts]),
            np.concatenate([p.lon_deg for p in parts]),
            np.concatenate([p.height_m for p in parts]),
            np.concatenate([p.rsrp_db for p in parts]),
            w,
        )

    def with_shadow(self, shadow_db) -> "SampleSet":
        return SampleSet(self.lat_deg, self.lon_deg, self.height_m, self.rsrp_db, shadow_db)


@dataclass(frozen=True)
class TwoRayParams:
    """Deterministic channel parameters."""

    wavelength_m: float
    tx_power_db: float
    bs: GeoPoint
    ground_rel_permittivity: float = 15.0
    polarization: str = "vertical"

    def __post_init__(self):
        if not self.wavelength_m > 0.0:
            raise DataError("wavelength must be positive")
        if not self.ground_rel_permittivity > 1.0:
            raise DataError("relative permittivity must exceed 1")
        if self.polarization not in ("vertical", "horizontal"):
            raise DataError(f"unknown polarization {self.polarization!r}")


def reflection_coefficient(theta_r, eps_r: float, pol: str):
    """Fresnel ground reflection for a ray at grazing angle theta_r (rad).

    Real permittivity; both polarizations tend to -1 at grazing incidence.
    """
    theta = np.asarray(theta_r, dtype=float)
    if np.any(theta <= 0.0) or np.any(theta > np.pi / 2 + 1e-12):
        raise DataError("grazing angle must be in (0, pi/2]")
    if eps_r <= 1.0:
        raise DataError("relative permittivity must exceed 1")
    root = np.sqrt(eps_r - np.cos(theta) ** 2)
    if pol == "vertical":
        g = (eps_r * np.sin(theta) - root) / (eps_r * np.sin(theta) + root)
    elif pol == "horizontal":
        g = (np.sin(theta) - root) / (np.sin(theta) + root)
    else:
        raise DataError(f"unknown polarization {pol!r}")
    g = np.asarray(g, dtype=complex)
    return g if g.ndim else complex(g)


def _two_ray_geometry(params: TwoRayParams, lat_deg, lon_deg, height_m):
    d_h = horizontal_distance_arrays(params.bs.lat_deg, params.bs.lon_deg, lat_deg, lon_deg)
    h_bs = params.bs.height_m
    h_uav = np.asarray(height_m, dtype=float)
    d3 = np.hypot(d_h, h_uav - h_bs)
    r12 = np.hypot(d_h, h_uav + h_bs)
    theta_los = np.degrees(np.arctan2(h_uav - h_bs, d_h))
    theta_r = np.arctan2(h_uav + h_bs, d_h)  # grazing angle at the reflection point, radians
    return d_h, d3, r12, theta_los, theta_r


def two_ray_pathloss_arrays(
    params: TwoRayParams,
    lat_deg,
    lon_deg,
    height_m,
    g_bs: AntennaPattern,
    g_uav: AntennaPattern,
    gamma=None,
):
    """Two-ray pathloss in dB over arrays of receiver positions.

    ``gamma`` overrides the Fresnel reflection coefficient (tests use 0
    for free space and -1 for a perfect reflector). The azimuth fed to
    both patterns is the bs->receiver bearing; the reflected path is
    looked up at its downward departure elevation.
    """
    lat = np.atleast_1d(np.asarray(lat_deg, dtype=float))
    lon = np.atleast_1d(np.asarray(lon_deg, dtype=float))
    h = np.atleast_1d(np.asarray(height_m, dtype=float))
    if params.bs.height_m <= 0.0 or np.any(h <= 0.0):
        raise DataError("two-ray geometry needs positive heights at both ends")

    d_h, d3, r12, theta_los, theta_r = _two_ray_geometry(params, lat, lon, h)
    if np.any(d3 == 0.0):
        raise DataError("receiver co-located with the base station")

    azim = np.array([
        bearing_deg(params.bs, GeoPoint(float(a), float(b), float(c)))
        for a, b, c in zip(lat, lon, h)
    ])
    if gamma is None:
        gam = reflection_coefficient(theta_r, params.ground_rel_permittivity, params.polarization)
    else:
        gam = np.asarray(gamma, dtype=complex)

    amp_los = np.sqrt(g_bs.gain_linear_at(theta_los, azim) * g_uav.gain_linear_at(theta_los, azim))
    refl_elev = -np.degrees(theta_r)
    amp_ref = np.sqrt(g_bs.gain_linear_at(refl_elev, azim) * g_uav.gain_linear_at(refl_elev, azim))
    dtau = 2.0 * np.pi * (r12 - d3) / params.wavelength_m

    total = amp_los / d3 + gam * amp_ref * np.exp(-1j * dtau) / r12
    linear = (params.wavelength_m / (4.0 * np.pi)) ** 2 * np.abs(total) ** 2
    return -10.0 * np.log10(np.maximum(linear, DEEP_FADE_FLOOR))


def two_ray_pathloss(
    params: TwoRayParams,
    uav: GeoPoint,
    g_bs: AntennaPattern,
    g_uav: AntennaPattern,
    gamma=None,
) -> float:
    return float(two_ray_pathloss_arrays(params, uav.lat_deg, uav.lon_deg, uav.height_m,
                                         g_bs, g_uav, gamma=gamma)[0])


def received_power(params: TwoRayParams, pathloss_db, shadow_db):
    """rsrp = tx_power - pathloss + shadow, everything in dB."""
    return params.tx_power_db - np.asarray(pathloss_db, dtype=float) + np.asarray(shadow_db, dtype=float)


@dataclass(frozen=True)
class Channel:
    """Channel parameters plus the two endpoint antenna patterns."""

    params: TwoRayParams
    g_bs: AntennaPattern
    g_uav: AntennaPattern

    @classmethod
    def isotropic(cls, params: TwoRayParams) -> "Channel":
        return cls(params, isotropic_pattern(), isotropic_pattern())

    def pathloss_db(self, lat_deg, lon_deg, height_m):
        return two_ray_pathloss_arrays(self.params, lat_deg, lon_deg, height_m, self.g_bs, self.g_uav)

    def trend_db(self, lat_deg, lon_deg, height_m):
        """Deterministic part of the received power (zero shadow)."""
        return self.params.tx_power_db - self.pathloss_db(lat_deg, lon_deg, height_m)


class ShadowFieldSampler:
    """Correlated Gaussian shadow field over a fixed point set.

    Factorizes the covariance once; each seed then costs one matrix-vector
    product, so sweeps over many seeds reuse the expensive part.
    """

    MAX_POINTS = 5000

    def __init__(self, lat_deg, lon_deg, height_m, model: CorrelationModel):
        lat = np.atleast_1d(np.asarray(lat_deg, dtype=float))
        if lat.size > self.MAX_POINTS:
            raise DataError(f"dense factorization capped at {self.MAX_POINTS} points")
        d_v, d_h = pairwise_distances(lat, lon_deg, height_m)
        cov = cov_from_distances(model, d_v, d_h)
        cov[np.diag_indices_from(cov)] += SHADOW_JITTER * model.sigma_w_sq
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DataError("correlation model produced a non-PSD covariance "
                            "even after jitter; check fitted parameters") from exc
        self.n = lat.size

    def draw(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self._chol @ rng.standard_normal(self.n)


def generate_shadow_fading(lat_deg, lon_deg, height_m, model: CorrelationModel, seed: int) -> np.ndarray:
    """Zero-mean Gaussian draw with covariance sigma_w_sq * R(d_v, d_h)."""
    return ShadowFieldSampler(lat_deg, lon_deg, height_m, model).draw(seed)


def skew_shadow_fading(values, skew: float) -> np.ndarray:
    """Rank-preserving sinh-arcsinh skewing of a residual field.

    skew = 0 is the identity; positive skew raises sample skewness. The
    input is standardized, warped, and mapped back to its original
    location/scale so the output stays in plausible dB range.
    """
    x = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("values must be finite")
    if skew == 0.0 or x.size == 0:
        return x.copy()
    mu = x.mean()
    sd = x.std()
    if sd == 0.0:
        return x.copy()
    z = (x - mu) / sd
    return mu + sd * np.sinh(np.arcsinh(z) + skew)


@dataclass(frozen=True)
class ZigZagSpec:
    """Serpentine survey pattern: parallel lines along the north axis,
    flown at each listed height.

    ``jitter_m`` perturbs every waypoint by a fixed (trajectory-intrinsic,
    not seed-dependent) offset, the way logged GPS positions scatter
    around planned waypoints. Besides realism this keeps survey points
    off any exact lattice, which matters downstream: a grid node that
    coincides exactly with a measurement gets a near-zero trust interval
    that freezes the matrix-completion solver at the unshrunk matrix.
    """

    origin: GeoPoint  # southwest corner of the surveyed box
    extent_north_m: float
    extent_east_m: float
    line_spacing_m: float
    sample_spacing_m: float
    heights_m: tuple
    jitter_m: float = 0.0

    def __post_init__(self):
        if self.extent_north_m <= 0.0 or self.extent_east_m <= 0.0:
            raise DataError("survey box must be non-degenerate")
        if self.line_spacing_m <= 0.0 or self.sample_spacing_m <= 0.0:
            raise DataError("spacings must be positive")
        if not self.heights_m:
            raise DataError("at least one height required")
        if self.jitter_m < 0.0:
            raise DataError("jitter must be >= 0")

    def points(self):
        """(lat, lon, height) arrays for the full multi-height trajectory."""
        frame = LocalFrame.at(self.origin)
        n_lines = int(np.floor(self.extent_east_m / self.line_spacing_m + 1e-9)) + 1
        n_pts = int(np.floor(self.extent_north_m / self.sample_spacing_m + 1e-9)) + 1
        ys = np.arange(n_pts) * self.sample_spacing_m
        xs, yy = [], []
        for k in range(n_lines):
            x = k * self.line_spacing_m
            line_y = ys if k % 2 == 0 else ys[::-1]
            xs.append(np.full(n_pts, x))
            yy.append(line_y)
        x_line = np.concatenate(xs)
        y_line = np.concatenate(yy)
        lats, lons, hs = [], [], []
        for hi, h in enumerate(self.heights_m):
            x_all, y_all = x_line, y_line
            if self.jitter_m > 0.0:
                rng = np.random.default_rng(np.random.SeedSequence([0x717, hi]))
                x_all = x_all + rng.uniform(-self.jitter_m, self.jitter_m, x_line.size)
                y_all = y_all + rng.uniform(-self.jitter_m, self.jitter_m, y_line.size)
            lat, lon = frame.from_local_xy(x_all, y_all)
            lats.append(lat)
            lons.append(lon)
            hs.append(np.full(lat.size, float(h)))
        return np.concatenate(lats), np.concatenate(lons), np.concatenate(hs)


def synthesize_dataset(
    trajectory: ZigZagSpec,
    channel: Channel,
    model: CorrelationModel,
    seed: int,
    skew: float = 0.0,
    noise_db: float = 0.0,
    sampler: ShadowFieldSampler = None,
) -> SampleSet:
    """Fly the trajectory through the synthetic channel.

    The returned samples carry both the received power and the exact
    residual that produced it, so detrending can be verified round-trip.
    White measurement noise (std ``noise_db``) is folded into the
    residual: it is part of what an interpolator must cope with.
    """
    lat, lon, h = trajectory.points()
    if lat.size == 0:
        raise DataError("trajectory produced no points")
    if sampler is None:
        sampler = ShadowFieldSampler(lat, lon, h, model)
    shadow = sampler.draw(seed)
    shadow = skew_shadow_fading(shadow, skew)
    if noise_db > 0.0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        shadow = shadow + noise_db * noise_rng.standard_normal(lat.size)
    pl = channel.pathloss_db(lat, lon, h)
    rsrp = received_power(channel.params, pl, shadow)
    return SampleSet(lat, lon, h, rsrp, shadow)


def detrend(samples: SampleSet, channel: Channel) -> SampleSet:
    """Fill shadow residuals: w = rsrp - tx_power + pathloss."""
    pl = channel.pathloss_db(samples.lat_deg, samples.lon_deg, samples.height_m)
    w = samples.rsrp_db - channel.params.tx_power_db + pl
    return samples.with_shadow(w)


def retrend(samples: SampleSet, channel: Channel) -> np.ndarray:
    """Inverse of detrend: reconstruct rsrp from the stored residuals."""
    if samples.shadow_db is None:
        raise DataError("samples carry no residuals")
    pl = channel.pathloss_db(samples.lat_deg, samples.lon_deg, samples.height_m)
    return received_power(channel.params, pl, samples.shadow_db)
