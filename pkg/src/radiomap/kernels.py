"""Hot inner loops: per-cell grid Kriging and batched point prediction.

Each entry point dispatches between a numba-jitted scalar implementation
and a vectorized numpy one (see ``backend``). Both are sequential and
write each output slot independently, so results do not depend on any
threading decisions made by the BLAS underneath.

All functions work on bare arrays; callers (kriging, matcomp) precompute
the sample-sample semivariogram/covariance matrix once and pass it in,
since neighborhoods overlap heavily across targets.
"""

import math

import numpy as np

from .backend import njit, resolve_backend

EARTH_RADIUS_M = 6_371_000.0


@njit(cache=True)
def _haversine_rad(sin_lat1, cos_lat1, lon1, sin_lat2, cos_lat2, lon2):
    # arctan2 form of the great-circle arc: stable at tiny separations
    cd = math.cos(lon1 - lon2)
    sd = math.sin(lon1 - lon2)
    num = math.hypot(cos_lat2 * sd, cos_lat1 * sin_lat2 - sin_lat1 * cos_lat2 * cd)
    return EARTH_RADIUS_M * math.atan2(num, sin_lat1 * sin_lat2 + cos_lat1 * cos_lat2 * cd)


@njit(cache=True)
def _corr(d_v, d_h, a, p1, p2, q):
    return math.exp(-q * d_v) * (a * math.exp(-p1 * d_h) + (1.0 - a) * math.exp(-p2 * d_h))


def _haversine_np(sin_s, cos_s, lon_s, sin_t, cos_t, lon_t):
    cd = np.cos(lon_s - lon_t)
    sd = np.sin(lon_s - lon_t)
    num = np.hypot(cos_t * sd, cos_s * sin_t - sin_s * cos_t * cd)
    return EARTH_RADIUS_M * np.arctan2(num, sin_s * sin_t + cos_s * cos_t * cd)


@njit(cache=True)
def _ok_solve_cell(sel, m, gamma_nn, gamma_t, values, nugget):
    """Ordinary-Kriging solve on a gathered neighborhood.

    Returns (pred, mse, mu, ok_flag); mse is clamped at zero.
    """
    nm = m + 1
    A = np.zeros((nm, nm))
    b = np.zeros(nm)
    for r in range(m):
        sr = sel[r]
        for c in range(m):
            A[r, c] = gamma_nn[sr, sel[c]]
        A[r, r] += nugget
        A[r, m] = 1.0
        A[m, r] = 1.0
        b[r] = gamma_t[sr]
    b[m] = 1.0
    try:
        sol = np.linalg.solve(A, b)
    except Exception:
        return 0.0, 0.0, 0.0, False
    pred = 0.0
    mse = sol[m]
    for r in range(m):
        pred += sol[r] * values[sel[r]]
        mse += sol[r] * b[r]
    if mse < 0.0:
        mse = 0.0
    return pred, mse, sol[m], True


@njit(cache=True)
def _local_fill_numba(cell_lat_rad, cell_lon_rad, s_lat_rad, s_lon_rad, values,
                      gamma_nn, a, p1, p2, sw2, nugget, local_n, t_v):
    nr = cell_lat_rad.size
    nc = cell_lon_rad.size
    n = s_lat_rad.size
    Z = np.zeros((nr, nc))
    V = np.zeros((nr, nc))
    K = np.zeros((nr, nc), dtype=np.uint8)
    sin_s = np.sin(s_lat_rad)
    cos_s = np.cos(s_lat_rad)
    m = local_n if local_n < n else n
    d = np.empty(n)
    for i in range(nr):
        sin_c = math.sin(cell_lat_rad[i])
        cos_c = math.cos(cell_lat_rad[i])
        for j in range(nc):
            lon_c = cell_lon_rad[j]
            for k in range(n):
                d[k] = _haversine_rad(sin_s[k], cos_s[k], s_lon_rad[k], sin_c, cos_c, lon_c)
            sel = np.argsort(d, kind="mergesort")[:m]
            gamma_t = np.empty(n)
            for r in range(m):
                sr = sel[r]
                gamma_t[sr] = sw2 * (1.0 - _corr(0.0, d[sr], a, p1, p2, 0.0))
            pred, mse, _, ok = _ok_solve_cell(sel, m, gamma_nn, gamma_t, values, nugget)
            if ok and mse < t_v:
                Z[i, j] = pred
                V[i, j] = mse
                K[i, j] = 1
    return Z, V, K


def _local_fill_numpy(cell_lat_rad, cell_lon_rad, s_lat_rad, s_lon_rad, values,
                      gamma_nn, a, p1, p2, sw2, nugget, local_n, t_v):
    nr, nc, n = cell_lat_rad.size, cell_lon_rad.size, s_lat_rad.size
    Z = np.zeros((nr, nc))
    V = np.zeros((nr, nc))
    K = np.zeros((nr, nc), dtype=np.uint8)
    sin_s, cos_s = np.sin(s_lat_rad), np.cos(s_lat_rad)
    m = min(local_n, n)
    ones_col = np.ones(m)
    for i in range(nr):
        sin_c, cos_c = math.sin(cell_lat_rad[i]), math.cos(cell_lat_rad[i])
        for j in range(nc):
            d = _haversine_np(sin_s, cos_s, s_lon_rad, sin_c, cos_c, cell_lon_rad[j])
            sel = np.argsort(d, kind="stable")[:m]
            A = np.empty((m + 1, m + 1))
            A[:m, :m] = gamma_nn[np.ix_(sel, sel)]
            A[np.arange(m), np.arange(m)] += nugget
            A[:m, m] = ones_col
            A[m, :m] = ones_col
            A[m, m] = 0.0
            dh = d[sel]
            b = np.empty(m + 1)
            b[:m] = sw2 * (1.0 - (a * np.exp(-p1 * dh) + (1.0 - a) * np.exp(-p2 * dh)))
            b[m] = 1.0
            try:
                sol = np.linalg.solve(A, b)
            except np.linalg.LinAlgError:
                continue
            mse = float(sol[:m] @ b[:m] + sol[m])
            if mse < 0.0:
                mse = 0.0
            if mse < t_v:
                Z[i, j] = float(sol[:m] @ values[sel])
                V[i, j] = mse
                K[i, j] = 1
    return Z, V, K


def local_fill_values(cell_lat_deg, cell_lon_deg, s_lat_deg, s_lon_deg, values,
                      gamma_nn, a, p1, p2, sw2, nugget, local_n, t_v, backend=None):
    """Ordinary Kriging of every grid node from its nearest samples.

    Horizontal-plane operation: node-to-sample distances are great-circle,
    correlation is evaluated at zero vertical separation. Returns
    (values, mse, known) matrices; nodes whose solve fails or whose mse
    reaches ``t_v`` stay unknown.
    """
    args = (
        np.radians(np.asarray(cell_lat_deg, dtype=float)),
        np.radians(np.asarray(cell_lon_deg, dtype=float)),
        np.radians(np.asarray(s_lat_deg, dtype=float)),
        np.radians(np.asarray(s_lon_deg, dtype=float)),
        np.ascontiguousarray(values, dtype=float),
        np.ascontiguousarray(gamma_nn, dtype=float),
        float(a), float(p1), float(p2), float(sw2), float(nugget),
        int(local_n), float(t_v),
    )
    impl = _local_fill_numba if resolve_backend(backend) == "numba" else _local_fill_numpy
    return impl(*args)


@njit(cache=True)
def _select_neighbors_numba(metric, radius_m, nearest_n):
    n = metric.size
    if radius_m > 0.0:
        m = 0
        for k in range(n):
            if metric[k] <= radius_m:
                m += 1
        sel = np.empty(m, dtype=np.int64)
        c = 0
        for k in range(n):
            if metric[k] <= radius_m:
                sel[c] = k
                c += 1
        return sel
    m = nearest_n if nearest_n < n else n
    return np.argsort(metric, kind="mergesort")[:m]


@njit(cache=True)
def _batch_ok_numba(t_lat_rad, t_lon_rad, t_h, s_lat_rad, s_lon_rad, s_h, values,
                    gamma_nn, a, p1, p2, q, sw2, nugget, radius_m, nearest_n, use_3d):
    nt = t_lat_rad.size
    n = s_lat_rad.size
    pred = np.full(nt, np.nan)
    mse = np.full(nt, np.nan)
    mu = np.full(nt, np.nan)
    n_used = np.zeros(nt, dtype=np.int64)
    sin_s, cos_s = np.sin(s_lat_rad), np.cos(s_lat_rad)
    d_h = np.empty(n)
    d_v = np.empty(n)
    metric = np.empty(n)
    for t in range(nt):
        sin_t = math.sin(t_lat_rad[t])
        cos_t = math.cos(t_lat_rad[t])
        for k in range(n):
            d_h[k] = _haversine_rad(sin_s[k], cos_s[k], s_lon_rad[k], sin_t, cos_t, t_lon_rad[t])
            d_v[k] = abs(s_h[k] - t_h[t])
            metric[k] = math.hypot(d_h[k], d_v[k]) if use_3d else d_h[k]
        sel = _select_neighbors_numba(metric, radius_m, nearest_n)
        m = sel.size
        if m == 0:
            continue
        gamma_t = np.empty(n)
        for r in range(m):
            sr = sel[r]
            gamma_t[sr] = sw2 * (1.0 - _corr(d_v[sr], d_h[sr], a, p1, p2, q))
        p, v, lam, ok = _ok_solve_cell(sel, m, gamma_nn, gamma_t, values, nugget)
        if not ok:
            n_used[t] = -1
            continue
        pred[t] = p
        mse[t] = v
        mu[t] = lam
        n_used[t] = m
    return pred, mse, mu, n_used


def _batch_ok_numpy(t_lat_rad, t_lon_rad, t_h, s_lat_rad, s_lon_rad, s_h, values,
                    gamma_nn, a, p1, p2, q, sw2, nugget, radius_m, nearest_n, use_3d):
    nt, n = t_lat_rad.size, s_lat_rad.size
    pred = np.full(nt, np.nan)
    mse = np.full(nt, np.nan)
    mu = np.full(nt, np.nan)
    n_used = np.zeros(nt, dtype=np.int64)
    sin_s, cos_s = np.sin(s_lat_rad), np.cos(s_lat_rad)
    for t in range(nt):
        d_h = _haversine_np(sin_s, cos_s, s_lon_rad,
                            math.sin(t_lat_rad[t]), math.cos(t_lat_rad[t]), t_lon_rad[t])
        d_v = np.abs(s_h - t_h[t])
        metric = np.hypot(d_h, d_v) if use_3d else d_h
        if radius_m > 0.0:
            sel = np.nonzero(metric <= radius_m)[0]
        else:
            sel = np.argsort(metric, kind="stable")[: min(nearest_n, n)]
        m = sel.size
        if m == 0:
            continue
        A = np.empty((m + 1, m + 1))
        A[:m, :m] = gamma_nn[np.ix_(sel, sel)]
        A[np.arange(m), np.arange(m)] += nugget
        A[:m, m] = 1.0
        A[m, :m] = 1.0
        A[m, m] = 0.0
        b = np.empty(m + 1)
        corr = np.exp(-q * d_v[sel]) * (a * np.exp(-p1 * d_h[sel]) + (1.0 - a) * np.exp(-p2 * d_h[sel]))
        b[:m] = sw2 * (1.0 - corr)
        b[m] = 1.0
        try:
            sol = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            n_used[t] = -1
            continue
        pred[t] = sol[:m] @ values[sel]
        mse[t] = max(float(sol[:m] @ b[:m] + sol[m]), 0.0)
        mu[t] = sol[m]
        n_used[t] = m
    return pred, mse, mu, n_used


@njit(cache=True)
def _batch_sk_numba(t_lat_rad, t_lon_rad, t_h, s_lat_rad, s_lon_rad, s_h, values,
                    cov_nn, a, p1, p2, q, var_z, mean_z, nugget, radius_m, nearest_n, use_3d):
    nt = t_lat_rad.size
    n = s_lat_rad.size
    pred = np.full(nt, np.nan)
    mse = np.full(nt, np.nan)
    sum_lc = np.full(nt, np.nan)
    n_used = np.zeros(nt, dtype=np.int64)
    sin_s, cos_s = np.sin(s_lat_rad), np.cos(s_lat_rad)
    d_h = np.empty(n)
    d_v = np.empty(n)
    metric = np.empty(n)
    for t in range(nt):
        sin_t = math.sin(t_lat_rad[t])
        cos_t = math.cos(t_lat_rad[t])
        for k in range(n):
            d_h[k] = _haversine_rad(sin_s[k], cos_s[k], s_lon_rad[k], sin_t, cos_t, t_lon_rad[t])
            d_v[k] = abs(s_h[k] - t_h[t])
            metric[k] = math.hypot(d_h[k], d_v[k]) if use_3d else d_h[k]
        sel = _select_neighbors_numba(metric, radius_m, nearest_n)
        m = sel.size
        if m == 0:
            continue
        A = np.empty((m, m))
        b = np.empty(m)
        for r in range(m):
            sr = sel[r]
            for c in range(m):
                A[r, c] = cov_nn[sr, sel[c]]
            A[r, r] += nugget
            b[r] = var_z * _corr(d_v[sr], d_h[sr], a, p1, p2, q)
        try:
            lam = np.linalg.solve(A, b)
        except Exception:
            n_used[t] = -1
            continue
        p = mean_z
        slc = 0.0
        for r in range(m):
            p += lam[r] * (values[sel[r]] - mean_z)
            slc += lam[r] * b[r]
        v = var_z - slc
        if v < 0.0:
            v = 0.0
        pred[t] = p
        mse[t] = v
        sum_lc[t] = slc
        n_used[t] = m
    return pred, mse, sum_lc, n_used


def _batch_sk_numpy(t_lat_rad, t_lon_rad, t_h, s_lat_rad, s_lon_rad, s_h, values,
                    cov_nn, a, p1, p2, q, var_z, mean_z, nugget, radius_m, nearest_n, use_3d):
    nt, n = t_lat_rad.size, s_lat_rad.size
    pred = np.full(nt, np.nan)
    mse = np.full(nt, np.nan)
    sum_lc = np.full(nt, np.nan)
    n_used = np.zeros(nt, dtype=np.int64)
    sin_s, cos_s = np.sin(s_lat_rad), np.cos(s_lat_rad)
    for t in range(nt):
        d_h = _haversine_np(sin_s, cos_s, s_lon_rad,
                            math.sin(t_lat_rad[t]), math.cos(t_lat_rad[t]), t_lon_rad[t])
        d_v = np.abs(s_h - t_h[t])
        metric = np.hypot(d_h, d_v) if use_3d else d_h
        if radius_m > 0.0:
            sel = np.nonzero(metric <= radius_m)[0]
        else:
            sel = np.argsort(metric, kind="stable")[: min(nearest_n, n)]
        m = sel.size
        if m == 0:
            continue
        A = cov_nn[np.ix_(sel, sel)].copy()
        A[np.arange(m), np.arange(m)] += nugget
        corr = np.exp(-q * d_v[sel]) * (a * np.exp(-p1 * d_h[sel]) + (1.0 - a) * np.exp(-p2 * d_h[sel]))
        b = var_z * corr
        try:
            lam = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            n_used[t] = -1
            continue
        slc = float(lam @ b)
        pred[t] = mean_z + lam @ (values[sel] - mean_z)
        mse[t] = max(var_z - slc, 0.0)
        sum_lc[t] = slc
        n_used[t] = m
    return pred, mse, sum_lc, n_used


def _prep_common(t_lat, t_lon, t_h, s_lat, s_lon, s_h, values, mat):
    return (
        np.radians(np.atleast_1d(np.asarray(t_lat, dtype=float))),
        np.radians(np.atleast_1d(np.asarray(t_lon, dtype=float))),
        np.atleast_1d(np.asarray(t_h, dtype=float)),
        np.radians(np.asarray(s_lat, dtype=float)),
        np.radians(np.asarray(s_lon, dtype=float)),
        np.asarray(s_h, dtype=float),
        np.ascontiguousarray(values, dtype=float),
        np.ascontiguousarray(mat, dtype=float),
    )


def batch_ordinary(t_lat, t_lon, t_h, s_lat, s_lon, s_h, values, gamma_nn,
                   a, p1, p2, q, sw2, nugget, radius_m=0.0, nearest_n=0,
                   use_3d=False, backend=None):
    """Ordinary-Kriging predictions at many targets.

    ``radius_m > 0`` selects all samples within that metric distance,
    otherwise the ``nearest_n`` closest (ties keep input order). Returns
    (pred, mse, lagrange_mu, n_used); n_used is 0 for empty neighborhoods
    and -1 where the regularized system was singular.
    """
    args = _prep_common(t_lat, t_lon, t_h, s_lat, s_lon, s_h, values, gamma_nn)
    impl = _batch_ok_numba if resolve_backend(backend) == "numba" else _batch_ok_numpy
    return impl(*args, float(a), float(p1), float(p2), float(q), float(sw2),
                float(nugget), float(radius_m), int(nearest_n), bool(use_3d))


def batch_simple(t_lat, t_lon, t_h, s_lat, s_lon, s_h, values, cov_nn,
                 a, p1, p2, q, var_z, mean_z, nugget, radius_m=0.0, nearest_n=0,
                 use_3d=False, backend=None):
    """Simple-Kriging predictions at many targets; see batch_ordinary.

    Returns (pred, mse, sum_lambda_cov, n_used).
    """
    args = _prep_common(t_lat, t_lon, t_h, s_lat, s_lon, s_h, values, cov_nn)
    impl = _batch_sk_numba if resolve_backend(backend) == "numba" else _batch_sk_numpy
    return impl(*args, float(a), float(p1), float(p2), float(q), float(var_z),
                float(mean_z), float(nugget), float(radius_m), int(nearest_n), bool(use_3d))
