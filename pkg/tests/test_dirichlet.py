import numpy as np
import pytest
from scipy import special, stats

from dip_edl.dirichlet import (
    as_concentration,
    digamma,
    dirichlet_expected_log_prob,
    dirichlet_kl,
    dirichlet_mean,
    dirichlet_sample,
    dirichlet_variance,
    log_gamma,
    log_multivariate_beta,
    special_functions,
    trigamma,
    vacuity,
)
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.models import ConcentrationVector

GRID = np.concatenate([np.geomspace(1e-3, 1e6, 200), [0.5, 1.0, 1.4616321449683623, 2.0, 7.999, 8.0]])


def _scipy_kl(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    a0, b0 = a.sum(), b.sum()
    return (
        special.gammaln(a0) - special.gammaln(a).sum()
        - special.gammaln(b0) + special.gammaln(b).sum()
        + np.sum((a - b) * (special.digamma(a) - special.digamma(a0)))
    )


class TestSpecialFunctions:
    def test_digamma_matches_scipy(self):
        expected = special.digamma(GRID)
        err = np.abs(digamma(GRID) - expected) / np.maximum(1.0, np.abs(expected))
        assert err.max() < 1e-10

    def test_log_gamma_matches_scipy(self):
        expected = special.gammaln(GRID)
        err = np.abs(log_gamma(GRID) - expected) / np.maximum(1.0, np.abs(expected))
        assert err.max() < 1e-10

    def test_trigamma_matches_scipy(self):
        expected = special.polygamma(1, GRID)
        err = np.abs(trigamma(GRID) - expected) / np.maximum(1.0, np.abs(expected))
        assert err.max() < 1e-10

    @pytest.mark.parametrize("x", [1.0, 2.0])
    def test_log_gamma_zero_at_one_and_two(self, x):
        assert abs(log_gamma(x)) < 1e-13

    def test_digamma_one_is_minus_euler(self):
        assert digamma(1.0) == pytest.approx(-np.euler_gamma, abs=1e-13)

    def test_digamma_recurrence(self):
        x = np.array([0.01, 0.3, 2.5, 17.0])
        np.testing.assert_allclose(digamma(x + 1) - digamma(x), 1.0 / x, rtol=1e-11)

    def test_scalar_in_scalar_out(self):
        lg, psi = special_functions(3.0)
        assert isinstance(lg, float) and isinstance(psi, float)
        assert lg == pytest.approx(np.log(2.0), abs=1e-13)
        assert psi == pytest.approx(1.5 - np.euler_gamma, abs=1e-13)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_outside_domain(self, bad):
        with pytest.raises(DomainError):
            digamma(bad)
        with pytest.raises(DomainError):
            log_gamma(bad)


class TestConcentration:
    def test_accepts_model_and_array(self):
        cv = ConcentrationVector.of([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(as_concentration(cv), [1.0, 2.0, 3.0])
        assert as_concentration([[1.0, 2.0], [3.0, 4.0]]).shape == (2, 2)

    @pytest.mark.parametrize("bad", [[1.0], [1.0, 0.0], [1.0, -2.0], [1.0, np.nan]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(DomainError):
            as_concentration(bad)

    def test_model_validation(self):
        with pytest.raises(ValueError):
            ConcentrationVector.of([1.0])
        cv = ConcentrationVector.symmetric(4, 2.5)
        assert cv.k == 4 and cv.total == 10.0


class TestDirichletQuantities:
    def test_log_beta_uniform(self):
        # B(1, ..., 1) = 1 / (K-1)!
        for k in (2, 3, 5, 10):
            assert log_multivariate_beta(np.ones(k)) == pytest.approx(-special.gammaln(k), abs=1e-12)

    def test_log_beta_batched(self):
        batch = np.array([[1.0, 2.0], [0.5, 0.5], [3.0, 7.0]])
        expected = [special.betaln(*row) for row in batch]
        np.testing.assert_allclose(log_multivariate_beta(batch), expected, atol=1e-12)

    @pytest.mark.parametrize("a,b", [
        ([1.0, 1.0, 1.0], [2.0, 3.0, 4.0]),
        ([0.5, 2.0], [1.0, 1.0]),
        ([10.0, 0.1, 3.0, 7.0], [1.0, 2.0, 3.0, 4.0]),
    ])
    def test_kl_matches_reference(self, a, b):
        assert dirichlet_kl(a, b) == pytest.approx(_scipy_kl(a, b), abs=1e-10)

    def test_kl_zero_on_self_and_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.uniform(0.05, 20.0, size=4)
            b = rng.uniform(0.05, 20.0, size=4)
            assert abs(dirichlet_kl(a, a)) < 1e-12
            assert dirichlet_kl(a, b) >= -1e-12

    @pytest.mark.parametrize("k", [2, 10])
    def test_kl_nonnegative_for_large_nearly_equal_pairs(self, k):
        rng = np.random.default_rng(11)
        a = rng.uniform(1.0, 1e4, size=(2000, k))
        b = a * (1.0 + rng.normal(0.0, 1e-7, size=a.shape))
        assert np.min(dirichlet_kl(a, b)) >= -1e-12

    def test_kl_batched(self):
        a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        b = np.ones(3)
        np.testing.assert_allclose(dirichlet_kl(a, b), [_scipy_kl(a[0], b), _scipy_kl(a[1], b)], atol=1e-10)

    def test_kl_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            dirichlet_kl([1.0, 1.0], [1.0, 1.0, 1.0])

    def test_expected_log_prob(self):
        beta = [2.0, 3.0, 5.0]
        for k in range(3):
            expected = special.digamma(beta[k]) - special.digamma(10.0)
            assert dirichlet_expected_log_prob(beta, k) == pytest.approx(expected, abs=1e-12)

    def test_expected_log_prob_batched_labels(self):
        beta = np.array([[2.0, 3.0], [4.0, 1.0]])
        out = dirichlet_expected_log_prob(beta, np.array([1, 0]))
        np.testing.assert_allclose(out, [special.digamma(3.0) - special.digamma(5.0)] * 2, atol=1e-12)

    @pytest.mark.parametrize("k", [-1, 3, 1.5])
    def test_expected_log_prob_bad_index(self, k):
        with pytest.raises(DomainError):
            dirichlet_expected_log_prob([1.0, 2.0, 3.0], k)

    def test_mean_and_variance_match_scipy(self):
        beta = np.array([2.0, 3.0, 5.0])
        np.testing.assert_allclose(dirichlet_mean(beta), stats.dirichlet.mean(beta))
        var = [dirichlet_variance(beta, k) for k in range(3)]
        np.testing.assert_allclose(var, stats.dirichlet.var(beta), rtol=1e-12)

    def test_vacuity(self):
        assert vacuity(np.ones(10)) == pytest.approx(1.0)
        assert vacuity([1.0, 1.0, 98.0]) == pytest.approx(0.03)
        np.testing.assert_allclose(vacuity(np.array([[1.0, 1.0], [2.0, 2.0]])), [1.0, 0.5])


class TestSampling:
    def test_samples_on_simplex(self):
        draws = dirichlet_sample([0.3, 1.0, 4.0], 1000, seed=7)
        assert draws.shape == (1000, 3)
        assert np.all(draws >= 0)
        np.testing.assert_allclose(draws.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic_per_seed(self):
        a = dirichlet_sample([1.0, 2.0], 10, seed=11)
        b = dirichlet_sample([1.0, 2.0], 10, seed=11)
        c = dirichlet_sample([1.0, 2.0], 10, seed=12)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    @pytest.mark.slow
    def test_sample_mean_close_to_exact(self):
        beta = np.array([2.0, 3.0, 5.0])
        draws = dirichlet_sample(beta, 200_000, seed=0)
        np.testing.assert_allclose(draws.mean(axis=0), dirichlet_mean(beta), atol=3e-3)

    def test_rejects_bad_count(self):
        with pytest.raises(DomainError):
            dirichlet_sample([1.0, 1.0], 0, seed=0)
