import numpy as np
import pytest
import scipy.linalg
from scipy.special import ndtri
from scipy.stats import skew as sample_skewness

from radiomap.channel import SampleSet, ShadowFieldSampler, detrend, synthesize_dataset
from radiomap.correlation import CorrelationModel, evaluate
from radiomap.errors import DataError, SolverError
from radiomap.geo import GeoPoint, horizontal_distance, pairwise_distances, vertical_distance
from radiomap.kriging import (
    KrigingPredictor,
    NeighborSelector,
    fit_gaussian_transform,
    ordinary_kriging,
    predict_rsrp,
    select_neighbors,
    simple_kriging,
    trans_gaussian_ok,
    trans_gaussian_sk,
)


def oracle_gamma(model, pts_a, pts_b):
    """Test-local semivariogram matrix, written independently of the library."""
    out = np.zeros((len(pts_a), len(pts_b)))
    for i, p in enumerate(pts_a):
        for j, q in enumerate(pts_b):
            dh = horizontal_distance(p, q)
            dv = vertical_distance(p, q)
            r = np.exp(-model.q * dv) * (model.a * np.exp(-model.p1 * dh)
                                         + (1 - model.a) * np.exp(-model.p2 * dh))
            out[i, j] = model.sigma_w_sq * (1.0 - r)
    return out


def oracle_ok_solve(model, neighbors, values, target):
    """Dense assembly + scipy solve of the ordinary-Kriging system."""
    pts = [neighbors.point(i) for i in range(len(neighbors))]
    n = len(pts)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = oracle_gamma(model, pts, pts)
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    b = np.append(oracle_gamma(model, pts, [target])[:, 0], 1.0)
    sol = scipy.linalg.solve(A, b)
    pred = float(sol[:n] @ values)
    mse = float(sol[:n] @ b[:n] + sol[n])
    return sol[:n], float(sol[n]), pred, mse


def oracle_sk_solve(model, neighbors, values, target, mean_z, var_z):
    pts = [neighbors.point(i) for i in range(len(neighbors))]
    n = len(pts)
    C = var_z - oracle_gamma(model, pts, pts) / model.sigma_w_sq * var_z
    c0 = var_z - oracle_gamma(model, pts, [target])[:, 0] / model.sigma_w_sq * var_z
    lam = scipy.linalg.solve(C, c0)
    pred = float(mean_z + lam @ (np.asarray(values) - mean_z))
    mse = float(var_z - lam @ c0)
    return lam, pred, mse


class TestSelectNeighbors:
    def test_coincident_sample_first(self, samples_builder):
        s = samples_builder([(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)])
        target = s.point(1)
        idx = select_neighbors(s, target, NeighborSelector.nearest(1))
        assert list(idx) == [1]

    def test_fixed_radius_empty_raises(self, samples_builder):
        s = samples_builder([(500.0, 0.0), (600.0, 0.0)])
        target = GeoPoint(s.lat_deg.mean(), s.lon_deg.mean() - 1.0, 100.0)
        with pytest.raises(DataError):
            select_neighbors(s, target, NeighborSelector.fixed_radius(70.0))

    def test_nearest_matches_bruteforce_sort(self, samples_builder, frame):
        rng = np.random.default_rng(17)
        for trial in range(10):
            xy = rng.uniform(-400, 400, size=(40, 2))
            s = samples_builder(xy)
            tx, ty = rng.uniform(-400, 400, 2)
            lat, lon = frame.from_local_xy(tx, ty)
            target = GeoPoint(float(lat), float(lon), 100.0)
            idx = select_neighbors(s, target, NeighborSelector.nearest(5))
            dists = np.array([horizontal_distance(s.point(i), target) for i in range(len(s))])
            expected = np.argsort(dists, kind="stable")[:5]
            np.testing.assert_array_equal(idx, expected)

    def test_3d_metric_for_mixed_heights(self, samples_builder, frame):
        xy = [(0.0, 0.0), (30.0, 0.0)]
        s = samples_builder(xy, heights=100.0)
        mixed = SampleSet(s.lat_deg, s.lon_deg, np.array([100.0, 180.0]), s.rsrp_db)
        lat, lon = frame.from_local_xy(10.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        # horizontally the second point is closer to x=10+25 -> no; with the
        # vertical offset the first point wins under the 3D metric
        idx = select_neighbors(mixed, target, NeighborSelector.nearest(1))
        assert list(idx) == [0]

    def test_selector_validation(self):
        with pytest.raises(DataError):
            NeighborSelector.fixed_radius(0.0)
        with pytest.raises(DataError):
            NeighborSelector.nearest(0)


class TestOrdinaryKriging:
    def test_single_neighbor_hand_solution(self, model, samples_builder, frame):
        s = samples_builder([(80.0, 0.0)], values=[3.7])
        lat, lon = frame.from_local_xy(0.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        pred, sol = ordinary_kriging(s, s.rsrp_db, target, model, nugget_scale=0.0)
        gamma01 = oracle_gamma(model, [s.point(0)], [target])[0, 0]
        assert sol.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert sol.lagrange_mu == pytest.approx(gamma01, rel=1e-12)
        assert pred.value == pytest.approx(3.7, abs=1e-12)
        assert pred.mse == pytest.approx(2.0 * gamma01, rel=1e-12)

    def test_mirror_symmetric_weights(self, model, samples_builder, frame):
        s = samples_builder([(-60.0, 0.0), (60.0, 0.0)], values=[1.0, 5.0])
        lat, lon = frame.from_local_xy(0.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        _, sol = ordinary_kriging(s, s.rsrp_db, target, model)
        np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-9)

    def test_matches_dense_solve_oracle(self, model, samples_builder, frame):
        rng = np.random.default_rng(23)
        for trial in range(20):
            n = rng.integers(2, 12)
            xy = rng.uniform(-300, 300, size=(n, 2))
            vals = rng.normal(0, 4, n)
            s = samples_builder(xy, values=vals)
            lat, lon = frame.from_local_xy(*rng.uniform(-300, 300, 2))
            target = GeoPoint(float(lat), float(lon), 100.0)
            pred, sol = ordinary_kriging(s, vals, target, model, nugget_scale=0.0)
            w_o, mu_o, pred_o, mse_o = oracle_ok_solve(model, s, vals, target)
            np.testing.assert_allclose(sol.weights, w_o, atol=1e-9)
            assert pred.value == pytest.approx(pred_o, abs=1e-9)
            assert pred.mse == pytest.approx(max(mse_o, 0.0), abs=1e-9)
            assert sol.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_duplicate_locations_deduped(self, model, samples_builder, frame):
        s = samples_builder([(0.0, 0.0), (0.0, 0.0), (90.0, 0.0)], values=[2.0, 9.0, 4.0])
        lat, lon = frame.from_local_xy(30.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        pred, sol = ordinary_kriging(s, s.rsrp_db, target, model)
        assert sol.weights.size == 2  # first duplicate kept

    def test_translation_invariance(self, model, samples_builder, frame):
        rng = np.random.default_rng(31)
        xy = rng.uniform(-200, 200, size=(6, 2))
        vals = rng.normal(0, 3, 6)
        s = samples_builder(xy, values=vals)
        lat, lon = frame.from_local_xy(10.0, -20.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        p1, _ = ordinary_kriging(s, vals, target, model)
        p2, _ = ordinary_kriging(s, vals + 13.5, target, model)
        assert p2.value == pytest.approx(p1.value + 13.5, abs=1e-9)


class TestSimpleKriging:
    def test_uncorrelated_limit(self, model, samples_builder):
        s = samples_builder([(0.0, 0.0), (50.0, 0.0)], values=[4.0, 8.0])
        target = GeoPoint(0.0, 100.0, 100.0)  # half a world away
        pred, _ = simple_kriging(s, s.rsrp_db, target, model, mean_z=5.5, var_z=9.0)
        assert pred.value == pytest.approx(5.5, abs=1e-6)
        assert pred.mse == pytest.approx(9.0, rel=1e-6)

    def test_exact_interpolation_at_neighbor(self, model, samples_builder):
        s = samples_builder([(0.0, 0.0), (70.0, 30.0)], values=[2.5, -1.0])
        target = s.point(1)
        pred, _ = simple_kriging(s, s.rsrp_db, target, model, mean_z=0.0,
                                 var_z=model.sigma_w_sq, nugget_scale=0.0)
        assert pred.value == pytest.approx(-1.0, abs=1e-8)
        assert pred.mse == pytest.approx(0.0, abs=1e-8)

    def test_matches_dense_solve_oracle(self, model, samples_builder, frame):
        rng = np.random.default_rng(29)
        for trial in range(20):
            n = rng.integers(2, 12)
            xy = rng.uniform(-300, 300, size=(n, 2))
            vals = rng.normal(2.0, 4, n)
            s = samples_builder(xy, values=vals)
            lat, lon = frame.from_local_xy(*rng.uniform(-300, 300, 2))
            target = GeoPoint(float(lat), float(lon), 100.0)
            mean_z, var_z = 2.0, 12.0
            pred, sol = simple_kriging(s, vals, target, model, mean_z, var_z, nugget_scale=0.0)
            lam_o, pred_o, mse_o = oracle_sk_solve(model, s, vals, target, mean_z, var_z)
            np.testing.assert_allclose(sol.weights, lam_o, atol=1e-9)
            assert pred.value == pytest.approx(pred_o, abs=1e-9)
            assert pred.mse == pytest.approx(max(mse_o, 0.0), abs=1e-9)
            assert pred.mse <= var_z + 1e-9

    def test_mse_calibration_monte_carlo(self, model, samples_builder, frame):
        # simulate the joint gaussian field at 5 neighbors + target and
        # compare the analytic mse with the empirical one
        xy = np.array([(0.0, 0.0), (30.0, 0.0), (0.0, 40.0), (-50.0, 10.0), (20.0, -60.0)])
        s = samples_builder(xy)
        lat, lon = frame.from_local_xy(10.0, 10.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        all_lat = np.append(s.lat_deg, target.lat_deg)
        all_lon = np.append(s.lon_deg, target.lon_deg)
        all_h = np.append(s.height_m, target.height_m)
        d_v, d_h = pairwise_distances(all_lat, all_lon, all_h)
        cov = model.sigma_w_sq * np.asarray(evaluate(model, d_v, d_h))
        L = np.linalg.cholesky(cov + 1e-12 * np.eye(6))
        rng = np.random.default_rng(77)
        draws = L @ rng.standard_normal((6, 10_000))
        _, sol = simple_kriging(s, np.zeros(5), target, model, 0.0, model.sigma_w_sq,
                                nugget_scale=0.0)
        preds = sol.weights @ draws[:5]
        emp_mse = float(np.mean((preds - draws[5]) ** 2))
        pred, _ = simple_kriging(s, draws[:5, 0], target, model, 0.0, model.sigma_w_sq,
                                 nugget_scale=0.0)
        assert pred.mse == pytest.approx(emp_mse, rel=0.05)


class TestGaussianTransform:
    def test_standard_normal_near_identity(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal(5000)
        tg = fit_gaussian_transform(z)
        assert abs(tg.phi_dd_at_my) < 0.05
        grid = np.linspace(-1.5, 1.5, 21)
        np.testing.assert_allclose(tg.f(grid), grid, atol=0.08)

    def test_lognormal_skew_reduction(self):
        rng = np.random.default_rng(5)
        z = np.exp(rng.standard_normal(2000))
        assert sample_skewness(z) > 1.0
        tg = fit_gaussian_transform(z)
        y = tg.f(z)
        assert abs(sample_skewness(y)) < 0.2

    def test_inverse_pair_property(self):
        rng = np.random.default_rng(7)
        z = rng.gamma(2.0, 2.0, 300)
        tg = fit_gaussian_transform(z)
        interior = np.sort(z)[1:-1]
        np.testing.assert_allclose(tg.phi(tg.f(interior)), interior, atol=1e-6)

    def test_transformed_moments(self):
        rng = np.random.default_rng(11)
        z = rng.exponential(3.0, 1500)
        tg = fit_gaussian_transform(z)
        y = np.asarray(tg.f(z))
        assert abs(y.mean()) < 0.05
        assert abs(y.var() - 1.0) < 0.1

    def test_errors(self):
        with pytest.raises(DataError):
            fit_gaussian_transform(np.arange(10.0))
        with pytest.raises(DataError):
            fit_gaussian_transform(np.full(30, 2.0))


def linear_transform_data(n=40, scale=3.0, shift=7.0):
    # training data that makes the fitted phi exactly affine
    pp = np.arange(1, n + 1) / (n + 1.0)
    return scale * ndtri(pp) + shift


class TestTransGaussian:
    def test_linear_phi_no_correction_ok(self, model, samples_builder, frame):
        z = linear_transform_data()
        tg = fit_gaussian_transform(z)
        assert abs(tg.phi_dd_at_my) < 1e-9
        s = samples_builder([(0.0, 0.0), (60.0, 0.0)], values=z[:2])
        lat, lon = frame.from_local_xy(20.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        model_y = CorrelationModel(a=model.a, p1=model.p1, p2=model.p2, q=model.q, sigma_w_sq=1.0)
        pred = trans_gaussian_ok(s, s.rsrp_db, target, model_y, tg)
        pred_y, _ = ordinary_kriging(s, np.asarray(tg.f(s.rsrp_db)), target, model_y)
        assert pred.value == pytest.approx(float(tg.phi(pred_y.value)), abs=1e-12)

    def test_hand_case_ok(self, model, samples_builder, frame):
        rng = np.random.default_rng(13)
        z_train = rng.gamma(3.0, 1.5, 30)
        tg = fit_gaussian_transform(z_train)
        s = samples_builder([(0.0, 0.0), (45.0, 25.0)], values=z_train[:2])
        lat, lon = frame.from_local_xy(15.0, 5.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        model_y = CorrelationModel(a=0.5, p1=0.02, p2=0.002, q=0.01, sigma_w_sq=1.0)
        got = trans_gaussian_ok(s, s.rsrp_db, target, model_y, tg, nugget_scale=0.0)
        # manual evaluation: ordinary solve in y, then the printed correction
        y = np.asarray(tg.f(s.rsrp_db))
        w_o, mu_o, pred_o, mse_o = oracle_ok_solve(model_y, s, y, target)
        expected = tg.phi(pred_o) + tg.phi_dd_at_my * (mse_o / 2.0 - mu_o)
        assert got.value == pytest.approx(float(expected), abs=1e-9)

    def test_linear_phi_no_correction_sk(self, model, samples_builder, frame):
        z = linear_transform_data()
        tg = fit_gaussian_transform(z)
        s = samples_builder([(0.0, 0.0), (60.0, 0.0)], values=z[:2])
        lat, lon = frame.from_local_xy(20.0, 0.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        model_y = CorrelationModel(a=model.a, p1=model.p1, p2=model.p2, q=model.q, sigma_w_sq=1.0)
        pred = trans_gaussian_sk(s, s.rsrp_db, target, model_y, tg, mean_y=0.0, var_y=1.0)
        pred_y, _ = simple_kriging(s, np.asarray(tg.f(s.rsrp_db)), target, model_y, 0.0, 1.0)
        assert pred.value == pytest.approx(float(tg.phi(pred_y.value)), abs=1e-12)

    def test_uncorrelated_target_correction_sk(self, samples_builder):
        rng = np.random.default_rng(19)
        z_train = rng.gamma(3.0, 1.5, 30)
        tg = fit_gaussian_transform(z_train)
        s = samples_builder([(0.0, 0.0), (50.0, 0.0)], values=z_train[:2])
        target = GeoPoint(0.0, 100.0, 100.0)  # no correlation left
        model_y = CorrelationModel(a=0.5, p1=0.02, p2=0.002, q=0.01, sigma_w_sq=1.0)
        var_y = 1.0
        pred = trans_gaussian_sk(s, s.rsrp_db, target, model_y, tg, mean_y=tg.m_y, var_y=var_y)
        expected = tg.phi(tg.m_y) + tg.phi_dd_at_my / 2.0 * var_y
        assert pred.value == pytest.approx(float(expected), abs=1e-6)

    def test_hand_case_sk(self, samples_builder, frame):
        rng = np.random.default_rng(37)
        z_train = rng.gamma(2.0, 2.0, 35)
        tg = fit_gaussian_transform(z_train)
        s = samples_builder([(0.0, 0.0), (40.0, 10.0), (-25.0, 60.0)], values=z_train[:3])
        lat, lon = frame.from_local_xy(5.0, 15.0)
        target = GeoPoint(float(lat), float(lon), 100.0)
        model_y = CorrelationModel(a=0.4, p1=0.03, p2=0.003, q=0.02, sigma_w_sq=1.0)
        mean_y, var_y = 0.1, 0.9
        got = trans_gaussian_sk(s, s.rsrp_db, target, model_y, tg, mean_y, var_y,
                                nugget_scale=0.0)
        y = np.asarray(tg.f(s.rsrp_db))
        lam_o, pred_o, mse_o = oracle_sk_solve(model_y, s, y, target, mean_y, var_y)
        pts = [s.point(i) for i in range(3)]
        c0 = var_y - oracle_gamma(model_y, pts, [target])[:, 0] * var_y
        expected = tg.phi(pred_o) + tg.phi_dd_at_my / 2.0 * (mse_o - float(lam_o @ c0))
        assert got.value == pytest.approx(float(expected), abs=1e-9)

    def test_bias_correction_reduces_mean_error(self, frame):
        # skewed field: corrected predictor has smaller mean signed error
        truth = CorrelationModel(a=0.6, p1=0.02, p2=0.004, q=0.0, sigma_w_sq=16.0)
        rng = np.random.default_rng(41)
        xy = rng.uniform(0, 800, size=(600, 2))
        lat, lon = frame.from_local_xy(xy[:, 0], xy[:, 1])
        h = np.full(600, 100.0)
        w = ShadowFieldSampler(lat, lon, h, truth).draw(3)
        w = np.asarray(w)
        z = 4.0 * np.sinh(np.arcsinh(w / 4.0) + 1.0)  # strong positive skew
        train_idx, test_idx = np.arange(100), np.arange(100, 600)
        train = SampleSet(lat[train_idx], lon[train_idx], h[train_idx], z[train_idx])
        tg = fit_gaussian_transform(z[train_idx])
        model_y = CorrelationModel(a=0.6, p1=0.02, p2=0.004, q=0.001, sigma_w_sq=1.0)
        err_corr, err_plain = [], []
        for t in test_idx:
            target = GeoPoint(float(lat[t]), float(lon[t]), 100.0)
            idx = select_neighbors(train, target, NeighborSelector.nearest(8))
            sub = train.subset(idx)
            got = trans_gaussian_ok(sub, sub.rsrp_db, target, model_y, tg)
            pred_y, _ = ordinary_kriging(sub, np.asarray(tg.f(sub.rsrp_db)), target, model_y)
            err_corr.append(got.value - z[t])
            err_plain.append(float(tg.phi(pred_y.value)) - z[t])
        assert abs(np.mean(err_corr)) < abs(np.mean(err_plain))


class TestPredictRsrp:
    def test_zero_shadow_world_is_exact(self, channel, frame):
        from radiomap.channel import ZigZagSpec

        tiny = CorrelationModel(a=0.6, p1=0.03, p2=0.004, q=0.03, sigma_w_sq=1e-12)
        traj = ZigZagSpec(origin=frame.origin, extent_north_m=300.0, extent_east_m=200.0,
                          line_spacing_m=50.0, sample_spacing_m=30.0, heights_m=(100.0,))
        data = synthesize_dataset(traj, channel, tiny, seed=2)
        train = data.subset(np.arange(0, len(data), 2))
        test = data.subset(np.arange(1, len(data), 2))
        pred = KrigingPredictor(train, "ok", NeighborSelector.nearest(10), tiny, channel=channel)
        vals, _ = pred.predict(test.lat_deg, test.lon_deg, test.height_m)
        assert np.max(np.abs(vals - test.rsrp_db)) < 1e-6

    def test_training_location_reproduced(self, model, channel, frame):
        from radiomap.channel import ZigZagSpec

        traj = ZigZagSpec(origin=frame.origin, extent_north_m=300.0, extent_east_m=200.0,
                          line_spacing_m=50.0, sample_spacing_m=30.0, heights_m=(100.0,))
        data = synthesize_dataset(traj, channel, model, seed=3)
        target = data.point(5)
        got = predict_rsrp(data, target, "ok", NeighborSelector.nearest(10), model,
                           channel=channel, nugget_scale=0.0)
        assert got.value == pytest.approx(data.rsrp_db[5], abs=1e-6)

    def test_baseline_beaten_by_kriging(self, model, channel, frame):
        from radiomap.channel import ZigZagSpec
        from radiomap.experiments import rmse

        traj = ZigZagSpec(origin=frame.origin, extent_north_m=500.0, extent_east_m=300.0,
                          line_spacing_m=40.0, sample_spacing_m=15.0, heights_m=(110.0,),
                          jitter_m=2.0)
        data = synthesize_dataset(traj, channel, model, seed=8)
        rng = np.random.default_rng(8)
        perm = rng.permutation(len(data))
        train, test = data.subset(np.sort(perm[:450])), data.subset(np.sort(perm[450:]))
        scores = {}
        for method in ("ok", "pathloss_baseline"):
            p = KrigingPredictor(train, method, NeighborSelector.fixed_radius(200.0),
                                 model, channel=channel)
            vals, _ = p.predict(test.lat_deg, test.lon_deg, test.height_m)
            scores[method] = rmse(vals, test.rsrp_db)
        assert scores["ok"] < scores["pathloss_baseline"]

    def test_empty_neighborhood_falls_back_to_mean(self, model, channel, samples_builder, frame):
        s = samples_builder([(0.0, 0.0), (10.0, 0.0)], values=[-70.0, -72.0])
        p = KrigingPredictor(s, "ok", NeighborSelector.fixed_radius(50.0), model,
                             channel=channel, mode="raw")
        lat, lon = frame.from_local_xy(5000.0, 0.0)
        vals, mses = p.predict(np.array([float(lat)]), np.array([float(lon)]), np.array([100.0]))
        assert vals[0] == pytest.approx(-71.0)
        assert mses[0] == pytest.approx(p.var_z)

    def test_mse_nonnegative_property(self, model, samples_builder, frame):
        rng = np.random.default_rng(53)
        for _ in range(30):
            n = rng.integers(1, 15)
            s = samples_builder(rng.uniform(-300, 300, size=(n, 2)),
                                values=rng.normal(0, 4, n))
            lat, lon = frame.from_local_xy(*rng.uniform(-300, 300, 2))
            target = GeoPoint(float(lat), float(lon), 100.0)
            p_ok, _ = ordinary_kriging(s, s.rsrp_db, target, model)
            p_sk, _ = simple_kriging(s, s.rsrp_db, target, model, 0.0, model.sigma_w_sq)
            assert p_ok.mse >= 0.0
            assert 0.0 <= p_sk.mse <= model.sigma_w_sq + 1e-9
