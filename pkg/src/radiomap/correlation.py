"""Spatial correlation of shadow fading in 3D.

The correlation between two locations is modeled as an exponential decay
in vertical separation times a two-component exponential mixture in
horizontal separation:

    R(d_v, d_h) = exp(-q d_v) * [a exp(-p1 d_h) + (1 - a) exp(-p2 d_h)]

Parameters are estimated by binning products of detrended residuals over
(d_v, d_h) and fitting the model to the binned estimates with bounded,
pair-count-weighted least squares.

The semivariogram and covariance used by the interpolators derive from
the same model. For a stationary field with variance sigma_w_sq,
cov(Z_i, Z_j) = sigma_w_sq * R, and the semivariogram is its complement
gamma = sigma_w_sq * (1 - R), so gamma + cov = sigma_w_sq identically.
(Equivalently gamma is half the variance of the increment Z_i - Z_j.)
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import DataError, SolverError
from .geo import GeoPoint, horizontal_distance, vertical_distance

RATE_BOUND = 1.0  # 1/m upper bound for decay rates


@dataclass(frozen=True)
class CorrelationModel:
    """Fitted parameters of the 3D correlation function."""

    a: float
    p1: float
    p2: float
    q: float
    sigma_w_sq: float

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise DataError(f"mixture weight a={self.a} outside [0, 1]")
        for name in ("p1", "p2", "q"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise DataError(f"decay rate {name}={v} must be >= 0")
        if not (np.isfinite(self.sigma_w_sq) and self.sigma_w_sq > 0.0):
            raise DataError(f"sigma_w_sq={self.sigma_w_sq} must be > 0")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "CorrelationModel":
        p = Path(source)
        text = p.read_text(encoding="utf-8") if p.exists() else str(source)
        d = json.loads(text)
        return cls(a=d["a"], p1=d["p1"], p2=d["p2"], q=d["q"], sigma_w_sq=d["sigma_w_sq"])


def evaluate(model: CorrelationModel, d_v, d_h):
    """R(d_v, d_h); accepts scalars or arrays, distances in meters."""
    d_v = np.asarray(d_v, dtype=float)
    d_h = np.asarray(d_h, dtype=float)
    if np.any(d_v < 0.0) or np.any(d_h < 0.0):
        raise DataError("distances must be non-negative")
    r = np.exp(-model.q * d_v) * (
        model.a * np.exp(-model.p1 * d_h) + (1.0 - model.a) * np.exp(-model.p2 * d_h)
    )
    return r if r.ndim else float(r)


def gamma_from_distances(model: CorrelationModel, d_v, d_h):
    """Semivariogram sigma_w_sq * (1 - R) over distance arrays."""
    return model.sigma_w_sq * (1.0 - evaluate(model, d_v, d_h))


def cov_from_distances(model: CorrelationModel, d_v, d_h):
    """Covariance sigma_w_sq * R over distance arrays."""
    return model.sigma_w_sq * evaluate(model, d_v, d_h)


def semivariogram(model: CorrelationModel, s_i: GeoPoint, s_j: GeoPoint) -> float:
    return float(gamma_from_distances(model, vertical_distance(s_i, s_j), horizontal_distance(s_i, s_j)))


def covariance(model: CorrelationModel, s_i: GeoPoint, s_j: GeoPoint) -> float:
    return float(cov_from_distances(model, vertical_distance(s_i, s_j), horizontal_distance(s_i, s_j)))


@dataclass(frozen=True)
class CorrelationBins:
    """Binned empirical correlation estimates.

    Bin coordinates are the mean pair distances within each bin, which
    keeps sparse vertical spacings (0 m, 20 m, ...) honest instead of
    forcing them to nominal bin centers.
    """

    d_v_center: np.ndarray
    d_h_center: np.ndarray
    rho_hat: np.ndarray
    pair_count: np.ndarray

    def __len__(self):
        return self.rho_hat.size


def empirical_correlation(
    d_v_pairs,
    d_h_pairs,
    products,
    variance: float,
    d_h_bin: float = 10.0,
    d_v_bin: float = 20.0,
    max_d_h: float = 500.0,
    min_count: int = 30,
) -> CorrelationBins:
    """Bin normalized residual products over (d_v, d_h).

    Callers usually go through :func:`empirical_correlation_from_samples`;
    this array form is the unit being composed.
    """
    d_v = np.asarray(d_v_pairs, dtype=float)
    d_h = np.asarray(d_h_pairs, dtype=float)
    prod = np.asarray(products, dtype=float)
    keep = d_h <= max_d_h
    d_v, d_h, prod = d_v[keep], d_h[keep], prod[keep]
    if d_v.size == 0:
        raise DataError("no point pairs within max_d_h")

    iv = np.floor(d_v / d_v_bin).astype(np.int64)
    ih = np.floor(d_h / d_h_bin).astype(np.int64)
    nh = int(ih.max()) + 1
    flat = iv * nh + ih
    counts = np.bincount(flat)
    sums = np.bincount(flat, weights=prod)
    sum_dv = np.bincount(flat, weights=d_v)
    sum_dh = np.bincount(flat, weights=d_h)

    occupied = np.nonzero(counts >= min_count)[0]
    if occupied.size == 0:
        raise DataError(f"no bin reached the minimum pair count of {min_count}")
    c = counts[occupied].astype(float)
    return CorrelationBins(
        d_v_center=sum_dv[occupied] / c,
        d_h_center=sum_dh[occupied] / c,
        rho_hat=sums[occupied] / c / variance,
        pair_count=counts[occupied],
    )


def empirical_correlation_from_samples(
    samples,
    d_h_bin: float = 10.0,
    d_v_bin: float = 20.0,
    max_d_h: float = 500.0,
    min_count: int = 30,
) -> CorrelationBins:
    """Estimate R over all pairs of detrended samples.

    Raw residual products normalized by the sample variance: detrended
    residuals are zero-mean by construction, and re-centering them by the
    realization's spatial mean would deflate every long-lag estimate by
    the domain-average covariance.
    """
    from .geo import pairwise_distances  # local import: cheap, avoids cycle risk

    w = samples.shadow_db
    if w is None:
        raise DataError("samples must be detrended first (shadow_db unset)")
    if len(samples) < 2:
        raise DataError("need at least 2 samples")
    variance = float(np.var(w))
    if variance <= 0.0 or not np.isfinite(variance):
        raise DataError("zero-variance residuals: correlation undefined")

    d_v, d_h = pairwise_distances(samples.lat_deg, samples.lon_deg, samples.height_m)
    iu, ju = np.triu_indices(len(samples), k=1)
    return empirical_correlation(
        d_v[iu, ju], d_h[iu, ju], w[iu] * w[ju], variance,
        d_h_bin=d_h_bin, d_v_bin=d_v_bin, max_d_h=max_d_h, min_count=min_count,
    )


def _fit_starts() -> list:
    # 8 deterministic starts: a cycles {0.25, 0.5, 0.75}, rates log-spaced
    rates = np.logspace(-4, -1, 8)
    starts = []
    for k in range(8):
        a0 = (0.25, 0.5, 0.75)[k % 3]
        p1 = rates[-(k % 4) - 1]
        p2 = rates[k % 4]
        qv = rates[(2 * k + 1) % 8]
        starts.append((a0, max(p1, p2), min(p1, p2), qv))
    return starts


def fit_correlation_model(bins: CorrelationBins, sigma_w_sq: float) -> CorrelationModel:
    """Bounded weighted least squares of the model against binned estimates.

    Eight deterministic multi-starts; the best converged solution wins.
    Components are reordered so p1 >= p2 (the mixture is label-symmetric).
    """
    if len(bins) < 5:
        raise DataError(f"need at least 5 bins to fit, got {len(bins)}")
    if np.unique(bins.d_h_center).size < 2:
        raise DataError("bins must span at least 2 distinct horizontal distances")

    d_v = bins.d_v_center
    d_h = bins.d_h_center
    rho = bins.rho_hat
    wgt = np.sqrt(bins.pair_count.astype(float))

    def resid(x):
        a, p1, p2, q = x
        model = np.exp(-q * d_v) * (a * np.exp(-p1 * d_h) + (1.0 - a) * np.exp(-p2 * d_h))
        return wgt * (model - rho)

    lb = [0.0, 0.0, 0.0, 0.0]
    ub = [1.0, RATE_BOUND, RATE_BOUND, RATE_BOUND]
    best = None
    for x0 in _fit_starts():
        try:
            res = least_squares(resid, x0, bounds=(lb, ub), method="trf",
                                xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
        except Exception:
            continue
        if not res.success:
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise SolverError("correlation fit did not converge from any of 8 starts")

    a, p1, p2, q = best.x
    if p1 < p2:
        a, p1, p2 = 1.0 - a, p2, p1
    return CorrelationModel(a=float(a), p1=float(p1), p2=float(p2), q=float(q),
                            sigma_w_sq=float(sigma_w_sq))
