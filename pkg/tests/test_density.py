import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsuq import (
    GaussianKde,
    ParameterDist,
    ParameterSampleSet,
    ValidationError,
    cluster_weights,
    compute_ratios,
    invert,
    kde_fit,
    rejection_sample,
    tv_distance,
    updated_density,
)
from tsuq.kpca import QoiSamples


class TestGaussianKde:
    def test_two_point_mixture_closed_form(self):
        kde = kde_fit(np.array([-1.0, 1.0]))
        # documented rule: sigma with ddof=1, h = sigma * n_eff^(-1/5)
        sigma = np.sqrt(2.0)
        h = sigma * 2 ** (-1.0 / 5.0)
        expected = np.exp(-0.5 * (1.0 / h) ** 2) / (h * np.sqrt(2 * np.pi))
        assert kde.evaluate(np.array([0.0]))[0] == pytest.approx(expected, rel=1e-12)

    def test_symmetry_about_origin(self):
        kde = kde_fit(np.array([-1.0, 1.0]))
        x = np.linspace(-3, 3, 41)
        np.testing.assert_allclose(kde.evaluate(x), kde.evaluate(-x), rtol=1e-12)

    def test_standard_normal_density_at_zero(self):
        rng = np.random.default_rng(0)
        kde = kde_fit(rng.normal(size=10_000))
        assert kde.evaluate(np.array([0.0]))[0] == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.1)

    def test_uniform_weights_equal_unweighted(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(size=(50, 2))
        x = rng.normal(size=(20, 2))
        plain = kde_fit(samples).evaluate(x)
        weighted = kde_fit(samples, weights=np.full(50, 1.0 / 50)).evaluate(x)
        np.testing.assert_allclose(weighted, plain, atol=1e-12)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(2)
        kde = kde_fit(rng.normal(size=300), weights=rng.uniform(0.1, 1.0, 300))
        x = np.linspace(-8, 8, 4001)
        assert np.trapezoid(kde.evaluate(x), x) == pytest.approx(1.0, abs=1e-3)

    def test_zero_variance_dimension_floor(self):
        samples = np.column_stack([np.full(10, 2.0), np.arange(10.0)])
        kde = kde_fit(samples)
        assert kde.bandwidths_[0] == pytest.approx(1e-6)

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            kde_fit(np.array([1.0]))

    def test_rejects_negative_weights(self):
        with pytest.raises(ValidationError):
            kde_fit(np.arange(4.0), weights=np.array([0.5, 0.5, -0.1, 0.1]))


class TestComputeRatios:
    def test_identical_sets_give_unit_ratios(self):
        rng = np.random.default_rng(3)
        qoi = rng.normal(size=(100, 2))
        result = compute_ratios(qoi, qoi)
        np.testing.assert_allclose(result.ratios, 1.0, atol=1e-10)
        assert result.diagnostic == pytest.approx(1.0, abs=1e-10)

    def test_self_consistency_monte_carlo(self):
        rng = np.random.default_rng(4)
        pred = rng.uniform(size=(2000, 1))
        obs = rng.uniform(size=(300, 1))
        result = compute_ratios(pred, obs)
        assert 0.9 <= result.diagnostic <= 1.1

    def test_empty_observed_rejected(self):
        with pytest.raises(ValidationError):
            compute_ratios(np.zeros((5, 1)), np.empty((0, 1)))


class TestClusterWeights:
    def test_even_split(self):
        np.testing.assert_allclose(cluster_weights([0, 0, 1, 1], 2), [0.5, 0.5])

    def test_all_in_first(self):
        np.testing.assert_allclose(cluster_weights([0, 0, 0], 3), [1.0, 0.0, 0.0])

    def test_empty_labels_rejected(self):
        with pytest.raises(ValidationError):
            cluster_weights([], 2)

    def test_out_of_range_labels_rejected(self):
        with pytest.raises(ValidationError):
            cluster_weights([0, 3], 2)


def make_params(samples, lo=0.0, hi=1.0):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    return ParameterSampleSet(("p",), samples, ((lo, hi),))


class TestUpdatedDensity:
    def test_identity_update_single_cluster(self):
        rng = np.random.default_rng(5)
        n = 2000
        init = make_params(rng.uniform(size=n))
        pred_qoi = rng.normal(size=(n, 1))
        obs_qoi = pred_qoi[rng.choice(n, size=400, replace=False)]
        ratio_result = compute_ratios(pred_qoi, obs_qoi)
        result = updated_density(init, np.zeros(n, dtype=int), ratio_result.ratios, [1.0])
        updated = result.updated_marginal_kde(0)
        baseline = kde_fit(init.samples[:, 0])
        pad = 3 * max(updated.bandwidths_[0], baseline.bandwidths_[0])
        tv = tv_distance(updated, baseline, (0.0, 1.0), 2001, extend=pad)
        assert tv < 0.05

    def test_single_cluster_weights_nearly_constant(self):
        rng = np.random.default_rng(6)
        n = 1000
        init = make_params(rng.uniform(size=n))
        pred_qoi = rng.normal(size=(n, 1))
        obs_qoi = pred_qoi[rng.choice(n, size=300, replace=False)]
        ratio_result = compute_ratios(pred_qoi, obs_qoi)
        result = updated_density(init, np.zeros(n, dtype=int), ratio_result.ratios, [1.0])
        u = result.update_weights
        assert u.std() / u.mean() < 0.35

    def test_zeroed_cluster_contributes_nothing(self):
        rng = np.random.default_rng(7)
        n = 100
        init = make_params(rng.uniform(size=n))
        labels = np.array([0] * 50 + [1] * 50)
        ratios = np.ones(n)
        result = updated_density(init, labels, ratios, [1.0, 0.0])
        assert result.update_weights[labels == 1].sum() == 0.0
        assert result.updated_cluster_probability(0) == pytest.approx(1.0)

    def test_all_zero_weights_rejected(self):
        init = make_params(np.linspace(0.1, 0.9, 10))
        with pytest.raises(ValidationError):
            updated_density(init, np.zeros(10, dtype=int), np.zeros(10), [1.0])

    def test_updated_marginal_integrates_to_one(self):
        rng = np.random.default_rng(8)
        n = 500
        init = make_params(rng.uniform(size=n))
        ratios = rng.uniform(0.2, 2.0, size=n)
        result = updated_density(init, np.zeros(n, dtype=int), ratios, [1.0])
        kde = result.updated_marginal_kde(0)
        pad = 3 * kde.bandwidths_[0]
        x = np.linspace(-pad, 1 + pad, 4001)
        assert np.trapezoid(kde.evaluate(x), x) == pytest.approx(1.0, abs=1e-3)


class TestInvert:
    def test_full_inversion_with_empty_observed_cluster(self):
        rng = np.random.default_rng(9)
        init = make_params(rng.uniform(size=60))
        samples = [
            QoiSamples(0, rng.normal(size=(40, 1)), rng.normal(size=(20, 1)),
                       np.arange(40), np.arange(20)),
            QoiSamples(1, rng.normal(size=(20, 1)), np.empty((0, 1)),
                       np.arange(40, 60), np.empty(0, dtype=int)),
        ]
        result = invert(samples, np.zeros(20, dtype=int), init)
        assert result.clusters[1].diagnostic is None
        assert result.clusters[1].weight == 0.0
        assert result.updated_cluster_probability(1) == 0.0
        assert result.clusters[0].diagnostic == pytest.approx(1.0, abs=0.35)


class TestRejectionSample:
    def _result(self, u):
        u = np.asarray(u, dtype=float)
        init = make_params(np.linspace(0.05, 0.95, u.size))
        return updated_density(init, np.zeros(u.size, dtype=int), u, [1.0])

    def test_equal_weights_accept_everything(self):
        result = self._result(np.ones(50))
        accepted = rejection_sample(result, seed=0)
        np.testing.assert_array_equal(accepted, np.arange(50))

    def test_zero_weight_never_accepted(self):
        result = self._result([1.0, 0.0] * 10)
        for seed in range(5):
            accepted = rejection_sample(result, seed=seed)
            assert not np.intersect1d(accepted, np.arange(1, 20, 2)).size

    def test_acceptance_fraction_binomial(self):
        rng = np.random.default_rng(10)
        u = rng.uniform(0.1, 1.0, size=10_000)
        result = self._result(u)
        accepted = rejection_sample(result, seed=3)
        w = result.update_weights
        p = (w / w.max()).mean()
        se = np.sqrt(p * (1 - p) / w.size)
        assert abs(accepted.size / w.size - p) < 3 * se

    def test_deterministic(self):
        result = self._result(np.random.default_rng(11).uniform(size=200))
        a = rejection_sample(result, seed=7)
        b = rejection_sample(result, seed=7)
        np.testing.assert_array_equal(a, b)


class TestTvDistance:
    def test_identical_densities(self):
        kde = kde_fit(np.random.default_rng(12).normal(size=100))
        assert tv_distance(kde, kde, (-3, 3), 1001, extend=1.0) == 0.0

    def test_disjoint_supports(self):
        def boxcar(lo, hi):
            return lambda x: np.where((np.asarray(x) >= lo) & (np.asarray(x) <= hi),
                                      1.0 / (hi - lo), 0.0)

        tv = tv_distance(boxcar(0, 1), boxcar(2, 3), (0, 3), 30001)
        assert tv == pytest.approx(1.0, abs=1e-3)

    def test_beta_kde_vs_exact_matches_reference_value(self):
        # 300 draws from Beta(2,2) on [0.1, 1]: the KDE-vs-exact distance
        # lands near 0.0872
        rng = np.random.default_rng(13)
        draws = 0.1 + 0.9 * rng.beta(2.0, 2.0, size=300)
        kde = kde_fit(draws)
        exact = ParameterDist("c", 0.1, 1.0, "beta", 2.0, 2.0)
        pad = 3 * kde.bandwidths_[0]
        tv = tv_distance(kde, exact.pdf, (0.1, 1.0), 4001, extend=pad)
        assert abs(tv - 0.0872) < 0.05

    def test_degenerate_interval_rejected(self):
        kde = kde_fit(np.arange(5.0))
        with pytest.raises(ValidationError):
            tv_distance(kde, kde, (1.0, 1.0), 100)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_symmetry_and_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        kdes = [kde_fit(rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), size=60))
                for _ in range(3)]
        support = (-6, 6)
        d01 = tv_distance(kdes[0], kdes[1], support, 2001)
        d10 = tv_distance(kdes[1], kdes[0], support, 2001)
        d02 = tv_distance(kdes[0], kdes[2], support, 2001)
        d12 = tv_distance(kdes[1], kdes[2], support, 2001)
        assert d01 == pytest.approx(d10, abs=1e-12)
        assert d02 <= d01 + d12 + 1e-9
