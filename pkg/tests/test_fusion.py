import numpy as np
import pytest

from twostream.fusion import fuse_average, fuse_max, predict


def random_posteriors(rng, n, length):
    raw = rng.uniform(size=(n, length))
    return raw / raw.sum(axis=1, keepdims=True)


def test_average_of_identical_is_identity():
    p = np.array([0.3, 0.5, 0.2])
    assert np.allclose(fuse_average(p, p), p)


def test_average_hand_value():
    assert np.allclose(fuse_average([0.6, 0.4], [0.2, 0.8]), [0.4, 0.6])


def test_average_is_valid_posterior():
    rng = np.random.default_rng(0)
    a = random_posteriors(rng, 50, 5)
    b = random_posteriors(rng, 50, 5)
    for pa, pb in zip(a, b):
        fused = fuse_average(pa, pb)
        assert fused.min() >= 0.0
        assert abs(fused.sum() - 1.0) < 1e-12


def test_fusion_is_commutative():
    rng = np.random.default_rng(1)
    a = random_posteriors(rng, 20, 4)
    b = random_posteriors(rng, 20, 4)
    for pa, pb in zip(a, b):
        assert np.array_equal(fuse_average(pa, pb), fuse_average(pb, pa))
        assert np.array_equal(fuse_max(pa, pb), fuse_max(pb, pa))


def test_max_of_identical_is_identity():
    p = np.array([0.25, 0.25, 0.5])
    assert np.allclose(fuse_max(p, p), p)


def test_max_symmetric_one_hots():
    assert np.allclose(fuse_max([1.0, 0.0], [0.0, 1.0]), [0.5, 0.5])


def test_max_majorizes_average_before_renormalization():
    rng = np.random.default_rng(2)
    a = random_posteriors(rng, 50, 6)
    b = random_posteriors(rng, 50, 6)
    for pa, pb in zip(a, b):
        assert np.all(np.maximum(pa, pb) >= fuse_average(pa, pb) - 1e-15)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        fuse_average([0.5, 0.5], [1.0 / 3] * 3)
    with pytest.raises(ValueError):
        fuse_max([0.5, 0.5], [1.0 / 3] * 3)


def test_invalid_posteriors_rejected():
    with pytest.raises(ValueError):
        fuse_average([0.9, 0.2], [0.5, 0.5])
    with pytest.raises(ValueError):
        fuse_average([-0.1, 1.1], [0.5, 0.5])
    with pytest.raises(ValueError):
        predict([[0.5, 0.5]])


def test_predict_one_hot_and_ties():
    assert predict([0.0, 0.0, 1.0]) == 2
    assert predict([0.25, 0.25, 0.25, 0.25]) == 0
    p = np.array([0.2, 0.5, 0.3])
    assert predict(fuse_average(p, p)) == predict(p)


def test_shared_top_class_survives_average():
    # when both streams rank class j first, the mean does too
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = random_posteriors(rng, 1, 5)[0]
        b = random_posteriors(rng, 1, 5)[0]
        j = rng.integers(5)
        # force j on top in both by swapping the max into position j
        a[[j, np.argmax(a)]] = a[[np.argmax(a), j]]
        b[[j, np.argmax(b)]] = b[[np.argmax(b), j]]
        if a[j] == np.max(np.delete(a, j)) or b[j] == np.max(np.delete(b, j)):
            continue
        assert predict(fuse_average(a, b)) == j
