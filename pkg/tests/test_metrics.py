import numpy as np
import numpy.testing as npt
import pytest

from nudgeloc.metrics import (
    DimensionMismatchError,
    SSIM_STRIDE,
    SSIM_WINDOW,
    downsample_area,
    luma,
    ssim,
    ssim_batch,
)

C1 = 0.01**2
C2 = 0.03**2


def naive_ssim(a, b):
    """Reference: explicit loop over 8x8 windows at stride 4."""
    vals = []
    for r in range(0, a.shape[0] - SSIM_WINDOW + 1, SSIM_STRIDE):
        for c in range(0, a.shape[1] - SSIM_WINDOW + 1, SSIM_STRIDE):
            wa = a[r : r + SSIM_WINDOW, c : c + SSIM_WINDOW]
            wb = b[r : r + SSIM_WINDOW, c : c + SSIM_WINDOW]
            mu_a, mu_b = wa.mean(), wb.mean()
            va, vb = wa.var(), wb.var()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            vals.append(
                ((2 * mu_a * mu_b + C1) * (2 * cov + C2))
                / ((mu_a**2 + mu_b**2 + C1) * (va + vb + C2))
            )
    return float(np.mean(vals))


def test_ssim_identity_is_one():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (32, 40))
    assert ssim(x, x) == 1.0


def test_ssim_symmetric():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (24, 24))
    b = rng.uniform(0, 1, (24, 24))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_matches_naive_oracle():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (40, 48))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-10


def test_ssim_inverted_checkerboard_negative():
    tile = np.kron(np.indices((4, 4)).sum(0) % 2, np.ones((8, 8)))
    x = tile.astype(np.float64)
    val = ssim(x, 1.0 - x)
    assert val < 0
    assert abs(val - naive_ssim(x, 1.0 - x)) < 1e-10


def test_ssim_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((16, 16)), np.zeros((16, 20)))
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))  # smaller than window


def test_ssim_batch_matches_singles():
    rng = np.random.default_rng(3)
    ref = rng.uniform(0, 1, (24, 32, 3)).astype(np.float32)
    imgs = rng.uniform(0, 1, (5, 24, 32, 3)).astype(np.float32)
    batch = ssim_batch(ref, imgs)
    singles = [ssim(ref, imgs[i]) for i in range(5)]
    npt.assert_allclose(batch, singles, atol=1e-12)


def test_ssim_range():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a = rng.uniform(0, 1, (16, 16))
        b = rng.uniform(0, 1, (16, 16))
        assert -1.0 <= ssim(a, b) <= 1.0


def test_downsample_area_block_mean():
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 1, (32, 40)).astype(np.float32)
    ds = downsample_area(img, (8, 10))
    oracle = img.reshape(8, 4, 10, 4).mean(axis=(1, 3))
    npt.assert_allclose(ds, oracle, atol=1e-6)


def test_downsample_identity():
    img = np.zeros((16, 20, 3), dtype=np.float32)
    assert downsample_area(img, (16, 20)) is img


def test_luma_shapes():
    rgb = np.ones((4, 6, 3))
    assert luma(rgb).shape == (4, 6)
    gray = np.ones((4, 6))
    assert luma(gray).shape == (4, 6)
    batch = np.ones((2, 4, 6, 3))
    assert luma(batch).shape == (2, 4, 6)
    assert abs(luma(np.ones((4, 6, 3)))[0, 0] - 1.0) < 1e-12
