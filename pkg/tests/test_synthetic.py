import numpy as np
import pytest
from scipy import stats

from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.evaluation import auroc
from dip_edl.synthetic import BlobTruth, circle_centers, make_blobs, make_ood_shift, make_two_moons


class TestCircleCenters:
    def test_two_classes(self):
        np.testing.assert_allclose(circle_centers(2, 3.0), [[3.0, 0.0], [-3.0, 0.0]])

    def test_radius(self):
        centers = circle_centers(10)
        np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 10.0)

    def test_needs_two(self):
        with pytest.raises(DomainError):
            circle_centers(1)


class TestBlobs:
    def test_shape_and_balance(self):
        data = make_blobs(3, 40, circle_centers(3), 1.0, seed=1)
        assert data.n == 120 and data.d == 2
        np.testing.assert_array_equal(np.bincount(data.labels), [40, 40, 40])

    def test_deterministic(self):
        a = make_blobs(2, 10, circle_centers(2), 1.0, seed=3)
        b = make_blobs(2, 10, circle_centers(2), 1.0, seed=3)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_points_near_their_center(self):
        centers = circle_centers(4, 20.0)
        data = make_blobs(4, 50, centers, 0.5, seed=2)
        assert np.all(np.linalg.norm(data.features - centers[data.labels], axis=1) < 4.0)

    def test_rejects_duplicate_centers(self):
        with pytest.raises(DomainError):
            make_blobs(2, 5, [[0.0, 0.0], [0.0, 0.0]], 1.0, seed=0)

    def test_rejects_empty_classes(self):
        with pytest.raises(DomainError):
            make_blobs(2, 0, circle_centers(2), 1.0, seed=0)

    def test_center_count_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            make_blobs(3, 5, circle_centers(2), 1.0, seed=0)


class TestBlobTruth:
    @pytest.fixture()
    def truth(self):
        return make_blobs(2, 5, [[-1.0, 0.0], [1.0, 0.0]], 0.7, seed=0).truth

    def test_log_density_matches_scipy(self, truth):
        x = np.array([0.3, -0.2])
        expected = np.log(
            0.5 * stats.multivariate_normal([-1.0, 0.0], 0.49 * np.eye(2)).pdf(x)
            + 0.5 * stats.multivariate_normal([1.0, 0.0], 0.49 * np.eye(2)).pdf(x)
        )
        assert truth.log_density(x) == pytest.approx(expected, abs=1e-12)

    def test_conditional(self, truth):
        np.testing.assert_allclose(truth.conditional([0.0, 5.0]), [0.5, 0.5])
        p = truth.conditional(np.array([[-3.0, 0.0], [3.0, 0.0]]))
        assert p[0, 0] > 0.99 and p[1, 1] > 0.99

    def test_priors_validated(self):
        with pytest.raises(ValueError):
            BlobTruth(centers=np.zeros((2, 2)), sigma=1.0, priors=np.array([0.5, 0.6]))


class TestTwoMoons:
    def test_class_split(self):
        data = make_two_moons(101, 0.1, seed=0)
        np.testing.assert_array_equal(np.bincount(data.labels), [51, 50])
        assert data.truth is None and data.truth_proxy == "kde"

    def test_noiseless_on_arcs(self):
        data = make_two_moons(40, 0.0, seed=0)
        outer = data.features[data.labels == 0]
        inner = data.features[data.labels == 1]
        np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0)
        np.testing.assert_allclose(np.linalg.norm(inner - [1.0, 0.5], axis=1), 1.0)

    def test_rejects_tiny_n(self):
        with pytest.raises(DomainError):
            make_two_moons(1, 0.1, seed=0)


class TestOODShift:
    def test_fresh_truth_draws_are_shifted(self):
        base = make_blobs(2, 200, circle_centers(2), 1.0, seed=0)
        ood = make_ood_shift(base, [40.0, 0.0], 1.0, seed=1)
        assert ood.labels is None and ood.n == base.n
        assert ood.features[:, 0].mean() == pytest.approx(base.features[:, 0].mean() + 40.0, abs=2.0)

    def test_bootstrap_without_truth(self):
        base = make_two_moons(50, 0.0, seed=0)
        ood = make_ood_shift(base, 0.0, 1.0, seed=2, n=30)
        assert ood.n == 30
        rows = {tuple(r) for r in np.round(base.features, 12)}
        assert all(tuple(r) in rows for r in np.round(ood.features, 12))

    def test_scale_about_mean(self):
        base = make_two_moons(50, 0.0, seed=0)
        ood = make_ood_shift(base, 0.0, 3.0, seed=2, n=500)
        assert ood.features.std() > 2.0 * base.features.std()

    @pytest.fixture()
    def density_auroc(self):
        base = make_blobs(2, 1000, circle_centers(2, 4.0), 1.0, seed=0)
        id_set = make_blobs(2, 1000, circle_centers(2, 4.0), 1.0, seed=1)

        def score(shift, scale):
            ood = make_ood_shift(base, shift, scale, seed=2)
            return auroc(-base.truth.log_density(id_set.features), -base.truth.log_density(ood.features))

        return score

    def test_unshifted_control_is_chance(self, density_auroc):
        assert density_auroc(0.0, 1.0) == pytest.approx(0.5, abs=0.05)

    def test_dilation_is_nearer_than_far_shift(self, density_auroc):
        near = density_auroc(0.0, 3.0)
        far = density_auroc([40.0, 0.0], 1.0)
        assert 0.5 < near < far

    def test_rejects_bad_scale(self):
        base = make_two_moons(10, 0.0, seed=0)
        with pytest.raises(DomainError):
            make_ood_shift(base, 0.0, 0.0, seed=0)

    def test_shift_dimension(self):
        base = make_two_moons(10, 0.0, seed=0)
        with pytest.raises(DimensionMismatchError):
            make_ood_shift(base, [1.0, 2.0, 3.0], 1.0, seed=0)
