import numpy as np
import pytest
from scipy.stats import skew as sample_skewness

from radiomap.antenna import isotropic_pattern
from radiomap.channel import (
    Channel,
    SampleSet,
    ShadowFieldSampler,
    TwoRayParams,
    ZigZagSpec,
    detrend,
    generate_shadow_fading,
    received_power,
    reflection_coefficient,
    retrend,
    skew_shadow_fading,
    synthesize_dataset,
    two_ray_pathloss,
    two_ray_pathloss_arrays,
)
from radiomap.correlation import CorrelationModel, evaluate
from radiomap.errors import DataError
from radiomap.geo import GeoPoint, LocalFrame


def bisect_brewster(eps_r, lo=1e-6, hi=np.pi / 2):
    # independent root of the vertical-polarization Fresnel numerator
    f = lambda t: eps_r * np.sin(t) - np.sqrt(eps_r - np.cos(t) ** 2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestReflectionCoefficient:
    def test_grazing_limit(self):
        for pol in ("vertical", "horizontal"):
            g = reflection_coefficient(1e-9, 15.0, pol)
            assert g == pytest.approx(-1.0, abs=1e-4)

    def test_brewster_angle_vertical(self):
        theta_b = bisect_brewster(15.0)
        g = reflection_coefficient(theta_b, 15.0, "vertical")
        assert abs(g) < 0.02
        # bisection found the analytic angle asin(1/sqrt(eps+1))
        assert theta_b == pytest.approx(np.arcsin(1.0 / 4.0), abs=1e-9)

    def test_normal_incidence_horizontal(self):
        g = reflection_coefficient(np.pi / 2, 15.0, "horizontal")
        expected = (1.0 - np.sqrt(15.0)) / (1.0 + np.sqrt(15.0))
        assert g == pytest.approx(expected, rel=1e-12)
        assert abs(g) <= 1.0

    def test_magnitude_bound_and_errors(self):
        thetas = np.linspace(1e-3, np.pi / 2, 200)
        for pol in ("vertical", "horizontal"):
            g = reflection_coefficient(thetas, 15.0, pol)
            assert np.all(np.abs(g) <= 1.0 + 1e-12)
        with pytest.raises(DataError):
            reflection_coefficient(-0.1, 15.0, "vertical")
        with pytest.raises(DataError):
            reflection_coefficient(0.5, 0.9, "vertical")


def make_params(frame, wavelength=0.3, bs_xy=(0.0, 0.0), bs_h=10.0):
    lat, lon = frame.from_local_xy(*bs_xy)
    return TwoRayParams(wavelength_m=wavelength, tx_power_db=30.0,
                        bs=GeoPoint(float(lat), float(lon), bs_h))


class TestTwoRayPathloss:
    def test_free_space_degeneration(self, frame):
        iso = isotropic_pattern()
        params = make_params(frame)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, y, h = rng.uniform(50, 2000), rng.uniform(-500, 500), rng.uniform(5, 150)
            lat, lon = frame.from_local_xy(x, y)
            uav = GeoPoint(float(lat), float(lon), h)
            pl = two_ray_pathloss(params, uav, iso, iso, gamma=0.0)
            from radiomap.geo import distance_3d
            d3 = distance_3d(params.bs, uav)
            assert pl == pytest.approx(20.0 * np.log10(4.0 * np.pi * d3 / 0.3), abs=1e-9)

    def test_coherent_sum_oracle(self, frame):
        # evaluate the two-path sum term by term with complex arithmetic
        iso = isotropic_pattern()
        params = make_params(frame, wavelength=0.3, bs_h=10.0)
        rng = np.random.default_rng(3)
        for _ in range(30):
            d, h = rng.uniform(100, 5000), rng.uniform(5, 120)
            lat, lon = frame.from_local_xy(d, 0.0)
            uav = GeoPoint(float(lat), float(lon), h)
            pl = two_ray_pathloss(params, uav, iso, iso, gamma=-1.0)
            from radiomap.geo import horizontal_distance
            dh = horizontal_distance(params.bs, uav)
            d3 = np.hypot(dh, h - 10.0)
            r12 = np.hypot(dh, h + 10.0)
            dtau = 2 * np.pi * (r12 - d3) / 0.3
            amp = 1.0 / d3 - np.exp(-1j * dtau) / r12
            expected = -10 * np.log10(max((0.3 / 4 / np.pi) ** 2 * abs(amp) ** 2, 1e-18))
            assert pl == pytest.approx(expected, abs=1e-9)

    def test_destructive_interference_bound(self, frame):
        # near dtau = pi the coherent sum should stay within 6 dB of the
        # in-phase amplitude sum evaluated independently
        iso = isotropic_pattern()
        params = make_params(frame, wavelength=0.5, bs_h=10.0)
        from radiomap.geo import horizontal_distance
        for d in np.linspace(100.0, 400.0, 60):
            lat, lon = frame.from_local_xy(d, 0.0)
            uav = GeoPoint(float(lat), float(lon), 10.0)
            dh = horizontal_distance(params.bs, uav)
            d3 = np.hypot(dh, 0.0)
            r12 = np.hypot(dh, 20.0)
            dtau = 2 * np.pi * (r12 - d3) / 0.5
            if abs((dtau % (2 * np.pi)) - np.pi) < 0.05:
                pl = two_ray_pathloss(params, uav, iso, iso, gamma=-1.0)
                coherent = 1.0 / d3 + 1.0 / r12
                floor_db = -10 * np.log10((0.5 / 4 / np.pi) ** 2 * coherent**2)
                assert pl >= floor_db - 1e-9
                assert pl <= floor_db + 6.0 + 1e-9

    @staticmethod
    def fitted_slope(frame, lo_m, hi_m):
        iso = isotropic_pattern()
        params = make_params(frame, wavelength=0.3, bs_h=10.0)
        d = np.logspace(np.log10(lo_m), np.log10(hi_m), 60)
        lat, lon = frame.from_local_xy(d, np.zeros_like(d))
        pl = two_ray_pathloss_arrays(params, lat, lon, np.full(d.size, 10.0), iso, iso, gamma=-1.0)
        return float(np.polyfit(np.log10(d), pl, 1)[0])

    def test_far_field_slope_40db_per_decade(self, frame):
        # deep asymptote: the d^4 power law
        assert self.fitted_slope(frame, 2e4, 2e5) == pytest.approx(40.0, abs=1.0)

    def test_breakpoint_transition_slope(self, frame):
        # one decade past the 4 h1 h2 / lambda breakpoint the least-squares
        # slope is still climbing toward 40 (frozen numerical value)
        assert self.fitted_slope(frame, 2e3, 2e4) == pytest.approx(38.748, abs=0.05)

    def test_errors(self, frame):
        iso = isotropic_pattern()
        params = make_params(frame)
        with pytest.raises(DataError):
            two_ray_pathloss(params, GeoPoint(params.bs.lat_deg, params.bs.lon_deg, 10.0), iso, iso)
        with pytest.raises(DataError):
            two_ray_pathloss(params, GeoPoint(10.0, 10.0, 0.0), iso, iso)

    def test_reciprocity_with_isotropic_antennas(self, frame):
        iso = isotropic_pattern()
        lat1, lon1 = frame.from_local_xy(0.0, 0.0)
        lat2, lon2 = frame.from_local_xy(500.0, 200.0)
        a = TwoRayParams(wavelength_m=0.3, tx_power_db=0.0, bs=GeoPoint(float(lat1), float(lon1), 10.0))
        b = TwoRayParams(wavelength_m=0.3, tx_power_db=0.0, bs=GeoPoint(float(lat2), float(lon2), 60.0))
        pl_ab = two_ray_pathloss(a, GeoPoint(float(lat2), float(lon2), 60.0), iso, iso)
        pl_ba = two_ray_pathloss(b, GeoPoint(float(lat1), float(lon1), 10.0), iso, iso)
        assert pl_ab == pytest.approx(pl_ba, abs=1e-9)


class TestReceivedPower:
    def test_cases(self, frame):
        params = make_params(frame)
        p0 = TwoRayParams(wavelength_m=0.3, tx_power_db=0.0, bs=params.bs)
        assert received_power(p0, 0.0, 0.0) == 0.0
        p30 = TwoRayParams(wavelength_m=0.3, tx_power_db=30.0, bs=params.bs)
        assert received_power(p30, 100.0, -3.0) == -73.0

    def test_inverse_recovers_shadow(self, frame):
        params = make_params(frame)
        rng = np.random.default_rng(4)
        pl = rng.uniform(60, 120, 100)
        w = rng.normal(0, 4, 100)
        r = received_power(params, pl, w)
        np.testing.assert_allclose(r - params.tx_power_db + pl, w, atol=1e-12)


class TestShadowFading:
    def test_single_point_variance(self, model, frame):
        draws = np.array([
            generate_shadow_fading([40.0], [-105.0], [100.0], model, seed)[0]
            for seed in range(2000)
        ])
        assert draws.mean() == pytest.approx(0.0, abs=0.3)
        assert draws.var() == pytest.approx(model.sigma_w_sq, rel=0.1)

    def test_single_point_variance_large(self, model):
        # moment check at the spec's 2% tolerance needs many seeds; reuse
        # one sampler so only the gaussian draw varies
        sampler = ShadowFieldSampler([40.0], [-105.0], [100.0], model)
        draws = np.array([sampler.draw(s)[0] for s in range(100_000)])
        assert draws.var() == pytest.approx(model.sigma_w_sq, rel=0.02)

    def test_coincident_points_identical(self, model):
        w = generate_shadow_fading([40.0, 40.0], [-105.0, -105.0], [100.0, 100.0], model, 7)
        assert w[0] == pytest.approx(w[1], abs=1e-3)

    def test_lag_correlation_on_a_line(self, model, frame):
        xs = np.arange(100) * 10.0
        lat, lon = frame.from_local_xy(xs, np.zeros_like(xs))
        sampler = ShadowFieldSampler(lat, lon, np.full(100, 100.0), model)
        prods, var = [], []
        for seed in range(500):
            w = sampler.draw(seed)
            prods.append(np.mean(w[:-1] * w[1:]))
            var.append(np.mean(w * w))
        rho = np.mean(prods) / np.mean(var)
        assert rho == pytest.approx(evaluate(model, 0.0, 10.0), abs=0.05)

    def test_covariance_frobenius_convergence(self, model, frame):
        rng = np.random.default_rng(11)
        xy = rng.uniform(0, 300, size=(20, 2))
        lat, lon = frame.from_local_xy(xy[:, 0], xy[:, 1])
        h = np.full(20, 100.0)
        sampler = ShadowFieldSampler(lat, lon, h, model)
        acc = np.zeros((20, 20))
        for seed in range(2000):
            w = sampler.draw(seed)
            acc += np.outer(w, w)
        emp = acc / 2000
        from radiomap.geo import pairwise_distances
        d_v, d_h = pairwise_distances(lat, lon, h)
        true = model.sigma_w_sq * evaluate(model, d_v, d_h)
        rel = np.linalg.norm(emp - true) / np.linalg.norm(true)
        assert rel < 0.10

    def test_determinism_per_seed(self, model):
        a = generate_shadow_fading([40.0, 40.01], [-105.0, -105.0], [50.0, 50.0], model, 123)
        b = generate_shadow_fading([40.0, 40.01], [-105.0, -105.0], [50.0, 50.0], model, 123)
        np.testing.assert_array_equal(a, b)

    def test_too_many_points(self, model):
        with pytest.raises(DataError):
            ShadowFieldSampler(np.zeros(5001), np.zeros(5001), np.zeros(5001), model)


class TestSkewTransform:
    def test_zero_is_identity(self):
        x = np.random.default_rng(0).normal(0, 4, 500)
        np.testing.assert_array_equal(skew_shadow_fading(x, 0.0), x)

    def test_positive_skew_increases_skewness(self):
        x = np.random.default_rng(1).normal(0, 4, 5000)
        for s in (0.3, 1.0, 2.0):
            y = skew_shadow_fading(x, s)
            assert sample_skewness(y) > sample_skewness(x)

    def test_rank_preservation(self):
        x = np.random.default_rng(2).normal(0, 4, 1000)
        for s in (-1.0, 0.5, 3.0):
            y = skew_shadow_fading(x, s)
            np.testing.assert_array_equal(np.argsort(x), np.argsort(y))


class TestSynthesizeDetrend:
    def make_traj(self, frame):
        return ZigZagSpec(origin=frame.origin, extent_north_m=200.0, extent_east_m=120.0,
                          line_spacing_m=40.0, sample_spacing_m=25.0, heights_m=(50.0, 70.0))

    def test_roundtrip_exact(self, model, channel, frame):
        traj = self.make_traj(frame)
        data = synthesize_dataset(traj, channel, model, seed=5)
        stripped = SampleSet(data.lat_deg, data.lon_deg, data.height_m, data.rsrp_db)
        recovered = detrend(stripped, channel)
        np.testing.assert_allclose(recovered.shadow_db, data.shadow_db, atol=1e-9)
        np.testing.assert_allclose(retrend(recovered, channel), data.rsrp_db, atol=1e-9)

    def test_rsrp_identity_invariant(self, model, channel, frame):
        data = synthesize_dataset(self.make_traj(frame), channel, model, seed=6, skew=0.7, noise_db=1.0)
        pl = channel.pathloss_db(data.lat_deg, data.lon_deg, data.height_m)
        np.testing.assert_allclose(
            data.rsrp_db, channel.params.tx_power_db - pl + data.shadow_db, atol=1e-9)

    def test_zero_shadow_residuals(self, channel, frame):
        tiny = CorrelationModel(a=0.6, p1=0.03, p2=0.004, q=0.03, sigma_w_sq=1e-12)
        data = synthesize_dataset(self.make_traj(frame), channel, tiny, seed=1)
        assert np.max(np.abs(data.shadow_db)) < 1e-4

    def test_reproducible_and_seed_sensitive(self, model, channel, frame):
        traj = self.make_traj(frame)
        a = synthesize_dataset(traj, channel, model, seed=9)
        b = synthesize_dataset(traj, channel, model, seed=9)
        c = synthesize_dataset(traj, channel, model, seed=10)
        np.testing.assert_array_equal(a.rsrp_db, b.rsrp_db)
        assert not np.array_equal(a.rsrp_db, c.rsrp_db)

    def test_jitter_moves_points_deterministically(self, frame):
        base = self.make_traj(frame)
        from dataclasses import replace
        j = replace(base, jitter_m=2.0)
        lat0, lon0, _ = base.points()
        lat1, lon1, _ = j.points()
        lat2, lon2, _ = j.points()
        assert not np.array_equal(lat0, lat1)
        np.testing.assert_array_equal(lat1, lat2)

    def test_empty_trajectory_error(self, frame):
        with pytest.raises(DataError):
            ZigZagSpec(origin=frame.origin, extent_north_m=-1.0, extent_east_m=100.0,
                       line_spacing_m=10.0, sample_spacing_m=10.0, heights_m=(50.0,))
