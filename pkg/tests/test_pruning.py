import math

import numpy as np
import pytest

from twostream.pruning import (
    GaussianModel,
    fit_gaussian,
    log_densities,
    log_density,
    prune,
    retained_count,
)


def naive_log_density(mean, cov, x):
    # Deliberately independent: dense inverse + slogdet, no triangular solves.
    k = len(mean)
    diff = np.asarray(x, float) - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    maha = diff @ np.linalg.inv(cov) @ diff
    return -0.5 * (k * math.log(2 * math.pi) + logdet + maha)


# ---------------------------------------------------------------------------
# Fitting

def test_fit_mean_is_sample_mean():
    model = fit_gaussian([[0.0, 0.0], [2.0, 2.0]])
    assert np.allclose(model.mean, [1.0, 1.0])


def test_full_shrinkage_gives_diagonal_covariance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4)) @ rng.normal(size=(4, 4))
    model = fit_gaussian(X, shrinkage=1.0)
    off = model.covariance - np.diag(np.diag(model.covariance))
    assert np.allclose(off, 0.0)


def test_shrinkage_blends_toward_diagonal():
    X = np.array([[0.0, 0.0], [2.0, 2.0]])
    model = fit_gaussian(X, shrinkage=0.1)
    # ML covariance of this pair is [[1, 1], [1, 1]].
    assert np.allclose(model.covariance, [[1.0, 0.9], [0.9, 1.0]])


def test_fit_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit_gaussian([[1.0, 2.0]])
    with pytest.raises(ValueError):
        fit_gaussian(np.ones((4, 2)), shrinkage=1.5)
    with pytest.raises(ValueError):
        fit_gaussian([[np.nan, 0.0], [0.0, 0.0]])


def test_fit_rejects_zero_variance_data():
    with pytest.raises(ValueError):
        fit_gaussian(np.zeros((5, 3)))


def test_factor_diagonal_positive_and_model_frozen():
    model = fit_gaussian(np.random.default_rng(1).normal(size=(20, 3)))
    assert np.all(np.diag(model.factor) > 0)
    with pytest.raises(ValueError):
        model.covariance[0, 0] = 99.0


# ---------------------------------------------------------------------------
# Log density

def test_density_at_mean_equals_log_normalizer():
    model = fit_gaussian(np.random.default_rng(2).normal(size=(25, 5)))
    assert log_density(model, model.mean) == pytest.approx(model.log_normalizer)


def test_identity_covariance_2d_value():
    model = GaussianModel.from_moments([0.0, 0.0], np.eye(2))
    assert log_density(model, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi))


def test_scalar_formula_unit_variance():
    # data {-1, 1}: ML variance 1 for any shrinkage (diagonal target is S itself)
    model = fit_gaussian([[-1.0], [1.0]])
    assert model.covariance[0, 0] == pytest.approx(1.0)
    assert log_density(model, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_scalar_formula_variance_four():
    model = fit_gaussian([[-2.0], [2.0]])
    expected = -0.5 * math.log(2 * math.pi * 4.0) - 0.5
    assert log_density(model, [2.0]) == pytest.approx(expected)


def test_matches_naive_dense_implementation():
    rng = np.random.default_rng(3)
    for k in (1, 2, 5, 8):
        X = rng.normal(size=(50, k)) @ rng.normal(size=(k, k)) + rng.normal(size=k)
        model = fit_gaussian(X, shrinkage=0.1)
        for _ in range(5):
            x = rng.normal(size=k) * 3.0
            got = log_density(model, x)
            want = naive_log_density(model.mean, model.covariance, x)
            assert abs(got - want) <= 1e-8 * max(1.0, abs(want))


def test_batch_agrees_with_single():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    model = fit_gaussian(X)
    batch = log_densities(model, X)
    singles = np.array([log_density(model, row) for row in X])
    assert np.allclose(batch, singles, atol=1e-12)


def test_farther_points_score_lower():
    model = fit_gaussian(np.random.default_rng(5).normal(size=(40, 3)))
    direction = np.array([1.0, -2.0, 0.5])
    vals = [log_density(model, model.mean + t * direction) for t in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_density_dimension_mismatch():
    model = fit_gaussian(np.random.default_rng(6).normal(size=(10, 3)))
    with pytest.raises(ValueError):
        log_density(model, [1.0, 2.0])


def test_training_samples_score_finite():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(15, 6)) * 100.0
    model = fit_gaussian(X)
    assert np.all(np.isfinite(log_densities(model, X)))


# ---------------------------------------------------------------------------
# Pruning

def test_kept_count_exact():
    for n in (5, 10, 1000):
        for retention in (0.8, 0.9, 0.5, 1.0 / 3.0):
            # integer oracle via fractions of the float retention
            expected = min(n, max(1, math.ceil(round(retention * n, 6) - 1e-9)))
            assert retained_count(n, retention) == expected
    rng = np.random.default_rng(8)
    for n in (5, 10, 47):
        X = rng.normal(size=(n, 2))
        _, result = prune(X, retention=0.8)
        assert len(result.kept) == retained_count(n, 0.8)


def test_retention_point_eight_on_round_numbers():
    assert retained_count(1000, 0.8) == 800
    assert retained_count(5, 0.8) == 4
    assert retained_count(10, 0.8) == 8


def test_full_retention_removes_nothing():
    X = np.random.default_rng(9).normal(size=(12, 2))
    _, result = prune(X, retention=1.0)
    assert result.removed == ()
    assert result.kept == tuple(range(12))


def test_partition_and_threshold_invariants():
    X = np.random.default_rng(10).normal(size=(25, 3))
    _, result = prune(X, retention=0.6)
    assert sorted(result.kept + result.removed) == list(range(25))
    kept_ld = result.log_densities[list(result.kept)]
    assert kept_ld.min() == result.threshold
    assert np.all(kept_ld >= result.threshold)
    removed_ld = result.log_densities[list(result.removed)]
    assert np.all(removed_ld <= result.threshold)


def test_planted_outliers_all_removed():
    # Oracle: rank by exact Mahalanobis distance to the planted distribution;
    # points at radius 10 from the origin of a standard normal are beyond any
    # plausible inlier, so retention 0.9 on 100 points must drop exactly them.
    for seed in range(5):
        rng = np.random.default_rng(seed)
        inliers = rng.normal(size=(90, 2))
        angles = rng.uniform(0, 2 * np.pi, size=10)
        outliers = 10.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        X = np.vstack([inliers, outliers])
        _, result = prune(X, retention=0.9)
        assert result.removed == tuple(range(90, 100))


def test_rotation_invariance_without_shrinkage():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(40, 2)) @ np.array([[3.0, 0.0], [1.0, 0.3]])
    theta = 0.7
    R = np.array([[math.cos(theta), -math.sin(theta)],
                  [math.sin(theta), math.cos(theta)]])
    _, plain = prune(X, shrinkage=0.0, retention=0.7)
    _, rotated = prune(X @ R.T, shrinkage=0.0, retention=0.7)
    assert plain.kept == rotated.kept


def test_boundary_ties_keep_lower_index():
    # three identical points tie in log-density; with room for two, the two
    # lowest indices stay
    X = np.array([[0.0], [0.0], [0.0], [5.0]])
    _, result = prune(X, retention=0.5)
    assert result.kept == (0, 1)
    assert result.removed == (2, 3)


def test_prune_rejects_bad_retention():
    X = np.random.default_rng(12).normal(size=(6, 2))
    with pytest.raises(ValueError):
        prune(X, retention=0.0)
    with pytest.raises(ValueError):
        prune(X, retention=1.2)
