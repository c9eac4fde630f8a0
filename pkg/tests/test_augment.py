import numpy as np
import pytest
from scipy import stats

from oracles import cutout_expected_fraction
from resprune.augment import (CutoutConfig, MixupConfig, augment_rng, crop_flip, cutout,
                              cutout_batch, cutout_box, mixup_batch, standard_augment,
                              standard_augment_batch)
from resprune.data import one_hot
from resprune.errors import ConfigError, ContractViolation


@pytest.fixture
def batch(rng):
    x = rng.standard_normal((8, 3, 32, 32)).astype(np.float32)
    y = one_hot(rng.integers(10, size=8), 10)
    return x, y


def test_mixup_lambda_one_is_identity(batch, rng):
    x, y = batch
    mx, my, lam = mixup_batch(x, y, MixupConfig(), rng, lam=1.0)
    assert lam == 1.0
    np.testing.assert_array_equal(mx, x)
    np.testing.assert_array_equal(my, y)


def test_mixup_midpoint(rng):
    x = np.array([[0.0, 2.0], [2.0, 0.0]])
    y = np.eye(10)[[0, 1]]
    mx, my, _ = mixup_batch(x, y, MixupConfig(), rng, lam=0.5, perm=np.array([1, 0]))
    np.testing.assert_array_equal(mx, [[1, 1], [1, 1]])
    np.testing.assert_array_equal(my[0], [0.5, 0.5] + [0] * 8)


def test_mixup_symmetry(batch, rng):
    x, y = batch
    perm = rng.permutation(8)
    inv = np.argsort(perm)
    a, ya, _ = mixup_batch(x, y, MixupConfig(), rng, lam=0.3, perm=perm)
    # pairing (i, perm[i]) with lam equals pairing (perm[i], i) with 1 - lam, reindexed
    b, yb, _ = mixup_batch(x[perm], y[perm], MixupConfig(), rng, lam=0.7, perm=inv)
    np.testing.assert_allclose(a, b, atol=1e-6)
    np.testing.assert_allclose(ya, yb, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mixup_preserves_simplex(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((16, 3, 4, 4))
    y = one_hot(rng.integers(10, size=16), 10)
    _, my, lam = mixup_batch(x, y, MixupConfig(alpha=0.4), rng)
    assert 0 <= lam <= 1
    assert (my >= 0).all()
    np.testing.assert_allclose(my.sum(axis=1), 1, atol=1e-6)


def test_mixup_small_batch_noop(rng):
    x, y = np.ones((1, 3, 2, 2)), np.eye(10)[[4]]
    mx, my, lam = mixup_batch(x, y, MixupConfig(), rng)
    assert lam == 1.0 and mx is x and my is y


def test_mixup_disabled_noop(batch, rng):
    x, y = batch
    assert mixup_batch(x, y, MixupConfig(enabled=False), rng)[2] == 1.0


def test_mixup_beta_one_is_uniform():
    rng = np.random.default_rng(0)
    x, y = np.zeros((2, 1)), np.eye(2)
    lams = np.array([mixup_batch(x, y, MixupConfig(alpha=1.0), rng)[2] for _ in range(100_000)])
    assert stats.kstest(lams, "uniform").statistic < 0.01


def test_mixup_validation(rng):
    with pytest.raises(ConfigError):
        MixupConfig(alpha=0)
    with pytest.raises(ContractViolation):
        mixup_batch(np.zeros((3, 2)), np.eye(2), MixupConfig(), rng)


def test_cutout_size_zero_identity(rng):
    img = rng.standard_normal((3, 32, 32))
    assert cutout(img, CutoutConfig(size=0), rng) is img


def test_cutout_huge_mask_zeroes_everything(rng):
    img = rng.standard_normal((3, 32, 32)) + 5
    for _ in range(20):
        assert not cutout(img, CutoutConfig(size=64), rng).any()


@pytest.mark.parametrize("seed", range(20))
def test_cutout_complement_unchanged(seed):
    img = np.random.default_rng([seed, 1]).standard_normal((3, 32, 32)) + 10
    rng, probe = np.random.default_rng(seed), np.random.default_rng(seed)
    cy, cx = int(probe.integers(32)), int(probe.integers(32))
    out = cutout(img, CutoutConfig(size=16), rng)
    y1, y2, x1, x2 = cutout_box(32, 32, 16, cy, cx)
    inside = np.zeros((32, 32), bool)
    inside[y1:y2, x1:x2] = True
    assert not out[:, inside].any()
    assert out[:, ~inside].tobytes() == img[:, ~inside].tobytes()


def test_cutout_box_clipping():
    assert cutout_box(32, 32, 16, 0, 0) == (0, 8, 0, 8)
    assert cutout_box(32, 32, 16, 16, 16) == (8, 24, 8, 24)
    assert cutout_box(32, 32, 16, 31, 31) == (23, 32, 23, 32)


def test_cutout_monte_carlo_matches_exact_expectation():
    rng = np.random.default_rng(0)
    img = np.ones((1, 32, 32))
    frac = np.mean([1 - cutout(img, CutoutConfig(16), rng).mean() for _ in range(10_000)])
    exact = cutout_expected_fraction(16)
    assert 0.13 <= frac <= 0.26
    assert frac == pytest.approx(exact, abs=0.005)


def test_cutout_batch_shape(rng):
    x = rng.standard_normal((4, 3, 32, 32))
    assert cutout_batch(x, CutoutConfig(), rng).shape == x.shape


def test_crop_center_recovers_original(rng):
    img = rng.standard_normal((3, 32, 32))
    np.testing.assert_array_equal(crop_flip(img, 4, 4, False), img)


def test_double_flip_identity(rng):
    img = rng.standard_normal((3, 32, 32))
    np.testing.assert_array_equal(crop_flip(crop_flip(img, 4, 4, True), 4, 4, True), img)


def test_crop_shift_fills_zeros(rng):
    img = rng.standard_normal((3, 32, 32)) + 10
    out = crop_flip(img, 0, 0, False)
    assert not out[:, :4].any() and not out[:, :, :4].any()
    np.testing.assert_array_equal(out[:, 4:, 4:], img[:, :28, :28])


def test_standard_augment_deterministic(rng):
    imgs = rng.standard_normal((5, 3, 32, 32))
    a = standard_augment_batch(imgs, augment_rng(3, 1))
    b = standard_augment_batch(imgs, augment_rng(3, 1))
    c = standard_augment_batch(imgs, augment_rng(3, 2))
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()
    assert standard_augment(imgs[0], np.random.default_rng(0)).shape == (3, 32, 32)


def test_augment_streams_independent():
    a = augment_rng(1, 0).random(4)
    assert not np.array_equal(a, augment_rng(1, 1).random(4))
    assert not np.array_equal(a, augment_rng(1, 0, worker=1).random(4))
    assert not np.array_equal(a, np.random.default_rng([1, 0]).random(4))
