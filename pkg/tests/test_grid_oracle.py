"""Grid posterior evaluation, its summary moments, and the comparison report."""

import math

import numpy as np
import pytest

from svbayes.distributions import Dataset, ModelKind, NaturalParams, sample_data
from svbayes.grid_oracle import (
    GridSpec,
    GridUnderflowError,
    compare,
    compare_moments,
    grid_posterior,
    normalize_log_density,
)
from svbayes.posterior import PriorSpec

PRIOR = PriorSpec(m0=[0.0, 0.0], C0=np.diag([100.0, 100.0]))


class TestGridSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(mu_range=(1.0, 1.0))
        with pytest.raises(ValueError):
            GridSpec(logvar_range=(2.0, -2.0))
        with pytest.raises(ValueError):
            GridSpec(resolution=1)
        assert GridSpec(resolution=(51, 21)).axis_counts == (51, 21)


class TestNormalization:
    def test_total_mass_is_one(self):
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=0)
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=101))
        assert grid.mass.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(grid.mass >= 0.0)

    def test_shift_invariance(self):
        """Adding any constant to the log density leaves the mass unchanged."""
        rng = np.random.default_rng(1)
        log_density = rng.uniform(-50, 0, size=(40, 30))
        base = normalize_log_density(log_density)
        for shift in (-700.0, -3.2, 250.0, 690.0):
            shifted = normalize_log_density(log_density + shift)
            np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_underflow_error(self):
        with pytest.raises(GridUnderflowError):
            normalize_log_density(np.full((4, 4), -np.inf))

    def test_extreme_range_raises_with_hint(self):
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams(0.0, 1.0), 10, seed=2)
        spec = GridSpec(logvar_range=(-800.0, -700.0), resolution=11)
        with pytest.raises(GridUnderflowError, match="widen"):
            grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, spec)


class TestMoments:
    def test_single_point_map_symmetry(self):
        """One observation at 0 with a symmetric mu axis puts the MAP at 0."""
        data = Dataset(np.array([0.0]))
        spec = GridSpec(mu_range=(-2.0, 2.0), resolution=(41, 21), include_prior=False)
        grid = grid_posterior(ModelKind.GAUSSIAN, data, None, spec)
        assert grid.map_point[0] == 0.0

    def test_known_variance_conjugate_mean(self):
        """Pinning the variance axis reduces to the normal-known-variance
        conjugate posterior; the grid mean of mu must match its closed form
        to within one cell width.

        The two logvar nodes straddle log(4) at a negligible distance, which
        pins the variance while keeping the two-nodes-per-axis minimum.
        """
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 50, seed=3)
        lv = math.log(4.0)
        spec = GridSpec(
            mu_range=(-1.0, 3.0),
            logvar_range=(lv - 1e-9, lv + 1e-9),
            resolution=(401, 2),
        )
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, spec)
        # conjugate posterior mean with known variance 4 and prior N(0, 100)
        n, ybar = 50, data.values.mean()
        precision = n / 4.0 + 1.0 / 100.0
        conjugate_mean = (n / 4.0) * ybar / precision
        cell = grid.mu_axis[1] - grid.mu_axis[0]
        assert abs(grid.means[0] - conjugate_mean) < cell

    def test_refinement_convergence(self):
        """Doubling the resolution moves the marginal means by less than the
        coarse grid's cell width."""
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=4)
        coarse = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=101))
        fine = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=201))
        cell_mu = coarse.mu_axis[1] - coarse.mu_axis[0]
        cell_lv = coarse.logvar_axis[1] - coarse.logvar_axis[0]
        assert abs(coarse.means[0] - fine.means[0]) < cell_mu
        assert abs(coarse.means[1] - fine.means[1]) < cell_lv

    def test_wide_prior_approaches_likelihood_only(self):
        """An essentially flat prior reproduces the prior-free evaluation."""
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=5)
        flat = PriorSpec(m0=[0.0, 0.0], C0=np.diag([1e12, 1e12]))
        with_prior = grid_posterior(ModelKind.GAUSSIAN, data, flat, GridSpec(resolution=101))
        without = grid_posterior(
            ModelKind.GAUSSIAN, data, None, GridSpec(resolution=101, include_prior=False)
        )
        np.testing.assert_allclose(with_prior.mass, without.mass, atol=1e-9)
        np.testing.assert_allclose(with_prior.means, without.means, atol=1e-9)

    def test_folded_normal_correlation_sign(self):
        """On the canonical mu >= 0 halfplane the folded posterior correlates
        mean and log variance negatively."""
        data = sample_data(ModelKind.FOLDED_NORMAL, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=6)
        spec = GridSpec(mu_range=(0.0, 3.0), resolution=101)
        grid = grid_posterior(ModelKind.FOLDED_NORMAL, data, PRIOR, spec)
        assert grid.rho < 0.0

    def test_mass_rows_cover_grid(self):
        data = Dataset(np.array([0.5, 1.0]))
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=(11, 7)))
        rows = list(grid.mass_rows())
        assert len(rows) == 11 * 7
        assert sum(r[2] for r in rows) == pytest.approx(1.0, abs=1e-12)


class TestCompare:
    def test_reflexive_comparison_is_zero(self):
        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=7)
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=51))
        report = compare_moments(
            grid.means, grid.variances, grid.rho, grid.means, grid.variances, grid.rho
        )
        np.testing.assert_array_equal(report.mean_abs_diff, np.zeros(2))
        np.testing.assert_array_equal(report.variance_ratio, np.ones(2))
        assert report.rho_abs_diff == 0.0
        assert report.correlation_signs_agree

    def test_parameter_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compare_moments([0.0, 0.0], [1.0, 1.0], 0.0, [0.0], [1.0], 0.0)

    def test_compare_against_fit_result(self):
        from svbayes.engine import TrainConfig, fit

        data = sample_data(ModelKind.GAUSSIAN, NaturalParams.from_mean_variance(1.0, 4.0), 100, seed=8)
        res = fit(ModelKind.GAUSSIAN, data, PRIOR, TrainConfig(seed=8, final_fe_samples=2))
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec())
        report = compare(grid, res)
        assert np.all(report.mean_abs_diff < 0.2)
        assert "parameter" in report.table()

    def test_summary_dict_shape(self):
        data = Dataset(np.array([1.0, 2.0, 0.5]))
        grid = grid_posterior(ModelKind.GAUSSIAN, data, PRIOR, GridSpec(resolution=21))
        doc = grid.summary_dict()
        assert set(doc) == {"means", "variances", "map", "rho"}
        assert len(doc["means"]) == 2
