import json

import numpy as np
import pytest

from offsetcal.bounds import (
    trace_average_ref_homoscedastic,
    trace_single_ref_homoscedastic,
    traces_diagonal_noise,
)
from offsetcal.estimator import EstimatorConfig, estimate_offsets, feasible_projection
from offsetcal.model import GeneralStationary, Homoscedastic, IndependentDiagonal, NetworkShape, average_reference_constraint
from offsetcal.simulator import (
    ClockScenario,
    ExperimentConfig,
    empirical_covariance_trace,
    run_delta_grid,
    run_generator,
    run_variance_sweep,
    sample_measurements,
)


class TestSampling:
    def test_noiseless_limit(self):
        sc = ClockScenario.ramp([0.5, -1.0, 2.0], 4, None, step=0.1)
        y = sample_measurements(sc, 1)
        np.testing.assert_allclose(y, 0.1 * np.arange(4)[None, :] + np.array([0.5, -1.0, 2.0])[:, None])

    def test_deterministic(self):
        sc = ClockScenario.ramp(np.zeros(4), 6, IndependentDiagonal([1e-3, 2e-3, 3e-3, 4e-3]))
        np.testing.assert_array_equal(sample_measurements(sc, 99), sample_measurements(sc, 99))
        assert not np.array_equal(sample_measurements(sc, 99), sample_measurements(sc, 100))

    def test_difference_variance(self):
        # var(eta_2 - eta_1) = 2 sigma^2 for independent sensors
        theta = np.array([0.3, -0.2])
        sc = ClockScenario.ramp(theta, 100_000, Homoscedastic(1e-3))
        y = sample_measurements(sc, 2024)
        d = y[1] - y[0] - (theta[1] - theta[0])
        assert abs(d.var() / 2e-3 - 1) <= 0.03

    def test_general_covariance(self):
        sigma = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 1.5]]) * 1e-3
        sc = ClockScenario.ramp(np.zeros(3), 200_000, GeneralStationary(sigma), step=0.0)
        y = sample_measurements(sc, 5)
        np.testing.assert_allclose(np.cov(y), sigma, atol=4e-5)

    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            ClockScenario([0.0, 1.0], [1.0], None)
        with pytest.raises(ValueError):
            ClockScenario([], [1.0, 2.0], None)

    def test_streams_differ(self):
        a = run_generator(1, 0, 0).standard_normal(4)
        b = run_generator(1, 0, 1).standard_normal(4)
        c = run_generator(1, 1, 0).standard_normal(4)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)
        np.testing.assert_array_equal(a, run_generator(1, 0, 0).standard_normal(4))


class TestEmpiricalTrace:
    def test_zero(self):
        t = np.array([1.0, 2.0])
        assert empirical_covariance_trace([t, t, t], t) == 0.0

    def test_plus_minus(self):
        assert empirical_covariance_trace([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]) == 1.0

    def test_per_run_targets(self):
        est = np.array([[1.0, 1.0], [2.0, 2.0]])
        assert empirical_covariance_trace(est, est) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_covariance_trace(np.empty((0, 3)), np.zeros(3))

    @pytest.mark.slow
    def test_matches_bound(self):
        n, k, s2, runs = 5, 20, 1e-3, 10_000
        shape = NetworkShape(n, k)
        avg = average_reference_constraint(shape)
        cfg = EstimatorConfig(avg)
        noise = Homoscedastic(s2)
        rng = np.random.default_rng(11)
        theta = rng.standard_normal(n)
        sc = ClockScenario.ramp(theta, k, noise)
        est = [estimate_offsets(sample_measurements(sc, rng), noise, cfg).theta_hat for _ in range(runs)]
        emp = empirical_covariance_trace(est, feasible_projection(theta, avg))
        assert abs(emp / trace_average_ref_homoscedastic(n, k, s2) - 1) <= 0.05


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_values=[1]), dict(k_values=[0]), dict(runs_per_cell=0),
                                    dict(noise="laplace"), dict(master_seed=-1), dict(master_seed=2**64),
                                    dict(variances=[1.0]), dict(ref_index=5), dict(n_values=[])])
    def test_rejects(self, kw):
        base = dict(n_values=[3], k_values=[2])
        base.update(kw)
        with pytest.raises(ValueError):
            ExperimentConfig(**base)

    def test_json_roundtrip(self):
        cfg = ExperimentConfig([3, 4], [5], noise="diagonal", variances=[1.0, 2.0, 3.0, 4.0], master_seed=2**63)
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_frozen_variances(self):
        cfg = ExperimentConfig([3, 6], [5], noise="diagonal")
        v = cfg.sensor_variances()
        assert v.shape == (6,)
        assert np.all((v >= 1e-4) & (v <= 1e-2))
        np.testing.assert_array_equal(v, cfg.sensor_variances())
        assert cfg.sensor_variances() is not None
        assert ExperimentConfig([3], [5]).sensor_variances() is None


class TestDeltaGrid:
    def test_bound_column_is_half(self):
        res = run_delta_grid(ExperimentConfig([3, 7], [2, 5], runs_per_cell=20))
        assert all(r.delta_ccrb == 0.5 for r in res.records)
        assert [(r.n, r.k) for r in res.records] == [(3, 2), (3, 5), (7, 2), (7, 5)]

    def test_band_at_ten_by_ten(self):
        (rec,) = run_delta_grid(ExperimentConfig([10], [10], runs_per_cell=500, master_seed=3)).records
        assert 0.4 <= rec.delta_hat <= 0.6
        assert not rec.low_confidence

    def test_single_run_flagged(self):
        (rec,) = run_delta_grid(ExperimentConfig([4], [3], runs_per_cell=1)).records
        assert np.isfinite(rec.delta_hat)
        assert rec.low_confidence
        assert np.isnan(rec.se_single)

    def test_rejects_diagonal_noise(self):
        with pytest.raises(ValueError):
            run_delta_grid(ExperimentConfig([3], [2], noise="diagonal"))

    def test_determinism_across_workers(self):
        cfg1 = ExperimentConfig([3, 5, 8], [2, 6], runs_per_cell=25, workers=1)
        cfg4 = ExperimentConfig([3, 5, 8], [2, 6], runs_per_cell=25, workers=4)
        a = json.dumps(run_delta_grid(cfg1).to_dict()["records"])
        b = json.dumps(run_delta_grid(cfg4).to_dict()["records"])
        assert a == b

    def test_cell_independent_of_grid(self):
        # a cell's numbers depend only on (seed, cell index, run index)
        a = run_delta_grid(ExperimentConfig([4, 6], [3], runs_per_cell=10)).records[0]
        b = run_delta_grid(ExperimentConfig([4], [3], runs_per_cell=10)).records[0]
        assert a == b


class TestVarianceSweep:
    def test_bounds_columns(self):
        cfg = ExperimentConfig([5], [10, 20], runs_per_cell=50, noise="diagonal")
        res = run_variance_sweep(cfg)
        v = np.asarray(res.variances)[:5]
        for rec in res.records:
            tr = traces_diagonal_noise(rec.k, v)
            assert rec.ccrb_single == tr.trace_single
            assert rec.ccrb_average == tr.trace_average
            assert rec.ref_index == int(np.argmin(v))
        a, b = res.records
        assert b.ccrb_single == pytest.approx(a.ccrb_single / 2, rel=1e-12)
        assert b.ccrb_average == pytest.approx(a.ccrb_average / 2, rel=1e-12)

    def test_empirical_not_below_bound(self):
        cfg = ExperimentConfig([5, 8], [10, 40], runs_per_cell=400, noise="diagonal", master_seed=77)
        for rec in run_variance_sweep(cfg).records:
            assert rec.empirical_single >= rec.ccrb_single - 3 * rec.se_single
            assert rec.empirical_average >= rec.ccrb_average - 3 * rec.se_average

    def test_homoscedastic_fallback(self):
        (rec,) = run_variance_sweep(ExperimentConfig([6], [12], runs_per_cell=5, sigma2=2e-3)).records
        assert rec.ccrb_single == pytest.approx(trace_single_ref_homoscedastic(6, 12, 2e-3), rel=1e-10)
        assert rec.ccrb_average == pytest.approx(trace_average_ref_homoscedastic(6, 12, 2e-3), rel=1e-10)
        assert rec.delta_ccrb == 0.5

    def test_nested_networks_share_variances(self):
        res = run_variance_sweep(ExperimentConfig([3, 6], [4], runs_per_cell=3, noise="diagonal"))
        assert len(res.variances) == 6

    def test_explicit_reference(self):
        cfg = ExperimentConfig([4], [5], runs_per_cell=5, noise="diagonal", ref_index=3,
                               variances=[1e-3, 2e-3, 3e-3, 4e-3])
        (rec,) = run_variance_sweep(cfg).records
        assert rec.ref_index == 3
        assert rec.ccrb_single == pytest.approx(traces_diagonal_noise(5, cfg.variances, 3).trace_single)
