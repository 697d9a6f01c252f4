"""Hybrid interpolation: grid the area, Krige each node locally, then
complete the matrix by constrained nuclear-norm minimization.

The solver bisects on a nuclear-norm budget. For each candidate budget it
alternates re-imposing the known entries with projecting the matrix onto
the requested norm (soft-thresholding the singular values); the budget is
accepted when every known entry stays inside its trust interval
``(-alpha * sigma_ij, alpha * sigma_ij)``, where sigma is the local
Kriging error estimate. Bisection stops once consecutive budgets differ
by at most ``t_lambda`` and the final iterate is feasible.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .channel import SampleSet
from .correlation import CorrelationModel
from .errors import DataError, SolverError
from .geo import LocalFrame
from .kriging import DEFAULT_NUGGET_SCALE, gamma_matrix

BOUNDARY_EPS_M = 1e-6  # grid node count uses floor((extent + eps) / d) + 1
SIGMA_FLOOR = 1e-9  # dB; keeps trust intervals non-empty at exact hits


@dataclass(frozen=True)
class GridSpec:
    """Uniform metric lattice over the sample bounding box."""

    d_grid: float
    frame: LocalFrame
    lat_nodes: np.ndarray
    lon_nodes: np.ndarray
    x0: float
    y0: float

    @property
    def n_rows(self) -> int:
        return self.lat_nodes.size

    @property
    def n_cols(self) -> int:
        return self.lon_nodes.size

    def nearest_index(self, lat_deg, lon_deg):
        """Row/col of the closest node; out-of-bounds targets clamp."""
        x, y = self.frame.to_local_xy(lat_deg, lon_deg)
        i = np.clip(np.rint((np.asarray(y) - self.y0) / self.d_grid).astype(int), 0, self.n_rows - 1)
        j = np.clip(np.rint((np.asarray(x) - self.x0) / self.d_grid).astype(int), 0, self.n_cols - 1)
        return i, j


@dataclass
class GridField:
    """Node values, their error estimates, and the known-entry mask."""

    values: np.ndarray
    mse: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.mse, dtype=float)
        k = np.asarray(self.known, dtype=bool)
        if v.shape != m.shape or v.shape != k.shape or v.ndim != 2:
            raise DataError("values, mse, and known must share one 2-D shape")
        if np.any(~np.isfinite(v[k])) or np.any(~np.isfinite(m[k])) or np.any(m[k] < 0):
            raise DataError("known entries must have finite values and non-negative mse")
        self.values, self.mse, self.known = v, m, k


@dataclass(frozen=True)
class CompletionParams:
    """Tuning knobs for the grid fill and the completion solver."""

    alpha: float = 1.0
    t_v: float = 1000.0
    t_lambda: float = 10.0
    n_iter: int = 600
    local_n: int = 20
    max_outer: int = 60

    def __post_init__(self):
        for name in ("alpha", "t_v", "t_lambda"):
            if not getattr(self, name) > 0.0:
                raise DataError(f"{name} must be positive")
        for name in ("n_iter", "local_n", "max_outer"):
            if not getattr(self, name) >= 1:
                raise DataError(f"{name} must be >= 1")


def build_grid(samples: SampleSet, d_grid: float = 5.0, frame: LocalFrame = None) -> GridSpec:
    """Lay a d_grid lattice over the horizontal bounding box.

    Node counts follow floor(extent / d_grid) + 1, i.e. both box edges are
    included and a trailing partial cell is dropped; a 1e-6 m slack keeps
    exact multiples from flipping to the smaller count under round-off.
    """
    if len(samples) < 2:
        raise DataError("need at least 2 samples to grid")
    if frame is None:
        frame = LocalFrame.from_points(samples.lat_deg, samples.lon_deg)
    x, y = frame.to_local_xy(samples.lat_deg, samples.lon_deg)
    ext_x = float(x.max() - x.min())
    ext_y = float(y.max() - y.min())
    if ext_x <= 0.0 or ext_y <= 0.0:
        raise DataError("degenerate bounding box: samples span no area")
    x0, y0 = float(x.min()), float(y.min())
    n_cols = int(np.floor((ext_x + BOUNDARY_EPS_M) / d_grid)) + 1
    n_rows = int(np.floor((ext_y + BOUNDARY_EPS_M) / d_grid)) + 1
    lat_nodes, _ = frame.from_local_xy(np.zeros(n_rows), y0 + d_grid * np.arange(n_rows))
    _, lon_nodes = frame.from_local_xy(x0 + d_grid * np.arange(n_cols), np.zeros(n_cols))
    return GridSpec(d_grid=float(d_grid), frame=frame, lat_nodes=lat_nodes,
                    lon_nodes=lon_nodes, x0=x0, y0=y0)


def local_fill(samples: SampleSet, values, spec: GridSpec, params: CompletionParams,
               model: CorrelationModel, nugget_scale: float = DEFAULT_NUGGET_SCALE,
               backend: str = None) -> GridField:
    """Ordinary-Krige every node from its nearest ``local_n`` samples.

    A node becomes a known matrix entry only when its estimated MSE stays
    below the gate ``t_v``; failed or gated nodes stay unknown. Operates
    in the horizontal plane (one flight altitude at a time).
    """
    if len(samples) == 0:
        raise DataError("no samples")
    vals = np.asarray(values, dtype=float)
    if vals.shape != (len(samples),):
        raise DataError("values must be one per sample")
    gam = gamma_matrix(model, samples)
    z, v, k = kernels.local_fill_values(
        spec.lat_nodes, spec.lon_nodes, samples.lat_deg, samples.lon_deg, vals,
        gam, model.a, model.p1, model.p2, model.sigma_w_sq,
        nugget_scale * model.sigma_w_sq, params.local_n, params.t_v, backend=backend)
    return GridField(values=z, mse=v, known=k.astype(bool))


def check_completable(field: GridField) -> bool:
    """True iff every row and every column holds at least one known entry."""
    return bool(field.known.any(axis=1).all() and field.known.any(axis=0).all())


def nuclear_norm(m) -> float:
    return float(np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False).sum())


def set_nuclear_norm(h: np.ndarray, target: float) -> np.ndarray:
    """Soft-threshold singular values so the nuclear norm hits ``target``.

    The threshold is found by bisection on tau with
    sum(max(sigma_i - tau, 0)) = target. Budgets at or above the current
    norm leave the matrix untouched (returned as-is).
    """
    if target < 0.0:
        raise DataError("target nuclear norm must be >= 0")
    h = np.asarray(h, dtype=float)
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    total = float(s.sum())
    if target >= total:
        return h
    if target == 0.0:
        return np.zeros_like(h)
    lo, hi = 0.0, float(s[0])
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        achieved = float(np.maximum(s - tau, 0.0).sum())
        if abs(achieved - target) <= 1e-9 * max(1.0, target):
            break
        if achieved > target:
            lo = tau
        else:
            hi = tau
    s_new = np.maximum(s - tau, 0.0)
    return (u * s_new) @ vt


def nuclear_norm_min(field: GridField, params: CompletionParams) -> np.ndarray:
    """Complete the unknown entries by norm-budget bisection.

    Unknown entries start at the mean of the known ones. The result always
    satisfies every trust-interval constraint: if the outer-iteration
    guard trips, the tightest feasible iterate seen so far is returned
    with a warning.
    """
    if not check_completable(field):
        raise SolverError("grid not completable: some row or column has no known entry; "
                          "raise t_v or supply denser data")
    known = field.known
    sigma = np.sqrt(np.maximum(field.mse, 0.0))
    sigma = np.where(known, np.maximum(sigma, SIGMA_FLOOR), sigma)
    bound = params.alpha * sigma

    h = field.values.copy()
    h[~known] = h[known].mean()
    h_hat = h.copy()

    def violated(m) -> bool:
        return bool(np.any(np.abs(m[known] - h[known]) >= bound[known]))

    lam = nuclear_norm(h)
    lam_min, lam_max = 0.0, lam
    dlam = np.inf
    best = h.copy()  # feasible: a budget of ||h||_* keeps h fixed
    outer = 0
    while violated(h_hat) or dlam > params.t_lambda:
        outer += 1
        if outer > params.max_outer:
            warnings.warn(f"nuclear_norm_min: no convergence in {params.max_outer} outer "
                          "iterations; returning the best feasible iterate", RuntimeWarning)
            return best
        lam_old = lam
        lam = 0.5 * (lam_min + lam_max)
        for _ in range(params.n_iter):
            imposed = np.where(known, h, h_hat)
            shrunk = set_nuclear_norm(imposed, lam)
            if np.array_equal(shrunk, h_hat):
                break  # fixed point: further sweeps are no-ops
            h_hat = shrunk
        if violated(h_hat):
            lam_min = lam
        else:
            lam_max = lam
            best = h_hat.copy()
        dlam = abs(lam - lam_old)
    return h_hat


def mc_predict(completed: np.ndarray, spec: GridSpec, lat_deg, lon_deg):
    """Value of the grid node nearest to each target (clamped at edges)."""
    i, j = spec.nearest_index(lat_deg, lon_deg)
    out = np.asarray(completed)[i, j]
    return out if np.ndim(out) else float(out)


def matrix_completion_pipeline(train: SampleSet, values, target_lat, target_lon,
                               params: CompletionParams, model: CorrelationModel,
                               d_grid: float = 5.0, frame: LocalFrame = None,
                               nugget_scale: float = DEFAULT_NUGGET_SCALE,
                               backend: str = None):
    """build_grid -> local_fill -> nuclear_norm_min -> nearest-node lookup.

    Returns (predictions, completed_matrix, field, spec). ``values`` is
    whatever domain the caller wants completed (residuals by default in
    the evaluation harness, raw power for ablations).
    """
    spec = build_grid(train, d_grid=d_grid, frame=frame)
    field = local_fill(train, values, spec, params, model,
                       nugget_scale=nugget_scale, backend=backend)
    completed = nuclear_norm_min(field, params)
    preds = np.atleast_1d(mc_predict(completed, spec, target_lat, target_lon))
    return preds, completed, field, spec


def save_grid_field(field: GridField, spec: GridSpec, path) -> None:
    """Text serialization: header `nrows,ncols,d_grid`, then rows of
    `value;mse;known` triples; frame origin goes in a JSON sidecar."""
    path = Path(path)
    lines = [f"{field.values.shape[0]},{field.values.shape[1]},{spec.d_grid:.17g}"]
    for i in range(field.values.shape[0]):
        cells = [
            f"{field.values[i, j]:.17g};{field.mse[i, j]:.17g};{int(field.known[i, j])}"
            for j in range(field.values.shape[1])
        ]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "origin_lat_deg": spec.frame.origin.lat_deg,
        "origin_lon_deg": spec.frame.origin.lon_deg,
        "meters_per_deg_lat": spec.frame.meters_per_deg_lat,
        "meters_per_deg_lon": spec.frame.meters_per_deg_lon,
        "x0_m": spec.x0,
        "y0_m": spec.y0,
        "d_grid_m": spec.d_grid,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2) + "\n",
                                                       encoding="utf-8")


def load_grid_field(path):
    """Inverse of save_grid_field; returns (field, spec)."""
    from .geo import GeoPoint

    path = Path(path)
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    try:
        nr_s, nc_s, d_s = lines[0].split(",")
        nr, nc, d_grid = int(nr_s), int(nc_s), float(d_s)
    except ValueError as exc:
        raise DataError(f"{path}:1: bad header ({exc})") from exc
    if len(lines) - 1 != nr:
        raise DataError(f"{path}: expected {nr} rows, found {len(lines) - 1}")
    values = np.empty((nr, nc))
    mse = np.empty((nr, nc))
    known = np.empty((nr, nc), dtype=bool)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != nc:
            raise DataError(f"{path}:{i + 2}: expected {nc} cells, found {len(cells)}")
        for j, cell in enumerate(cells):
            try:
                v, m, k = cell.split(";")
                values[i, j], mse[i, j], known[i, j] = float(v), float(m), bool(int(k))
            except ValueError as exc:
                raise DataError(f"{path}:{i + 2}: bad cell {cell!r}") from exc
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    frame = LocalFrame(
        origin=GeoPoint(meta["origin_lat_deg"], meta["origin_lon_deg"], 0.0),
        meters_per_deg_lat=meta["meters_per_deg_lat"],
        meters_per_deg_lon=meta["meters_per_deg_lon"],
    )
    x0, y0 = meta["x0_m"], meta["y0_m"]
    lat_nodes, _ = frame.from_local_xy(np.zeros(nr), y0 + d_grid * np.arange(nr))
    _, lon_nodes = frame.from_local_xy(x0 + d_grid * np.arange(nc), np.zeros(nc))
    spec = GridSpec(d_grid=d_grid, frame=frame, lat_nodes=lat_nodes, lon_nodes=lon_nodes,
                    x0=x0, y0=y0)
    return GridField(values=values, mse=mse, known=known), spec
