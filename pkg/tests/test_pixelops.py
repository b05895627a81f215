import math

import numpy as np
import pytest

from contrastiq.imgio import GrayImage
from contrastiq.pixelops import (
    DegenerateOutputError,
    complement,
    downsample,
    downsample_factor,
    fast_pow,
    power_law,
    round_half_away,
)

from oracles import naive_block_mean


def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(1.5) == 2
    assert round_half_away(2.5) == 3
    assert round_half_away(-0.5) == -1
    assert round_half_away(-1.5) == -2
    assert round_half_away(0.49) == 0
    assert round_half_away(3.0) == 3


def test_downsample_factor_values():
    assert downsample_factor(384, 512) == 2
    assert downsample_factor(1080, 1920) == 2
    assert downsample_factor(2160, 3840) == 4
    assert downsample_factor(1, 1) == 2
    # 768/512 = 1.5 rounds away from zero
    assert downsample_factor(768, 1024) == 2
    assert downsample_factor(1280, 5000) == 3  # round(2.5) = 3
    with pytest.raises(ValueError):
        downsample_factor(0, 10)


def test_downsample_2x2_block_mean():
    img = GrayImage(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = downsample(img, 2)
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 0.5


def test_downsample_constant_stays_constant():
    img = GrayImage(np.full((4, 4), 0.3))
    out = downsample(img, 2)
    assert out.data.shape == (2, 2)
    assert np.allclose(out.data, 0.3, atol=1e-15)


def test_downsample_matches_nested_loop_oracle():
    rng = np.random.default_rng(10)
    for _ in range(20):
        h, w = rng.integers(2, 30, size=2)
        m = int(rng.integers(2, 5))
        if h // m == 0 or w // m == 0:
            continue
        img = GrayImage(rng.random((h, w)))
        got = downsample(img, m).data
        want = naive_block_mean(img.data, m)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-14


def test_downsample_truncates_ragged_edges():
    img = GrayImage(np.arange(25).reshape(5, 5) / 24.0)
    out = downsample(img, 2)
    assert out.data.shape == (2, 2)
    assert np.allclose(out.data, naive_block_mean(img.data, 2), atol=1e-15)


def test_downsample_degenerate_output():
    img = GrayImage(np.full((3, 3), 0.5))
    with pytest.raises(DegenerateOutputError):
        downsample(img, 4)
    with pytest.raises(ValueError):
        downsample(img, 1)


def test_complement_basics():
    img = GrayImage(np.array([[0.0, 0.25], [1.0, 0.6]]))
    out = complement(img)
    assert out.data[0, 0] == 1.0
    assert out.data[1, 0] == 0.0
    back = complement(out)
    assert np.array_equal(back.data, img.data)


def test_complement_mean_linearity():
    rng = np.random.default_rng(11)
    img = GrayImage(rng.random((15, 9)))
    assert abs(complement(img).data.mean() - (1.0 - img.data.mean())) < 1e-12


def test_downsample_commutes_with_complement():
    rng = np.random.default_rng(12)
    img = GrayImage(rng.random((11, 14)))
    a = downsample(complement(img), 2).data
    b = complement(downsample(img, 2)).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_fast_pow_values():
    assert fast_pow(2, 10) == 1024
    assert fast_pow(3.0, 1) == 3.0
    assert fast_pow(7, 2) == 49
    with pytest.raises(ValueError):
        fast_pow(2.0, 0)


def test_fast_pow_matches_naive_loop():
    rng = np.random.default_rng(13)
    for _ in range(300):
        x = float(rng.random())
        k = int(rng.integers(2, 129))
        want = 1.0
        for _ in range(k):
            want *= x
        got = fast_pow(x, k)
        # the k-1 sequential multiplies themselves accrue up to ~k/2 ulps,
        # so the two routes may diverge in proportion to k
        assert abs(got - want) <= (k + 16) * math.ulp(want)


def test_fast_pow_works_on_arrays():
    rng = np.random.default_rng(14)
    arr = rng.random((6, 6))
    assert np.allclose(fast_pow(arr, 8), arr**8, rtol=1e-15)


class Counted:
    """Multiplication wrapper that tells squarings from cross-multiplies."""

    def __init__(self, value, stats):
        self.value = value
        self.stats = stats

    def __mul__(self, other):
        if self is other:
            self.stats["square"] += 1
        else:
            self.stats["multiply"] += 1
        return Counted(self.value * other.value, self.stats)


def test_fast_pow_operation_counts():
    for k in range(1, 130):
        stats = {"square": 0, "multiply": 0}
        out = fast_pow(Counted(2.0, stats), k)
        assert out.value == 2.0**k
        assert stats["square"] == math.floor(math.log2(k))
        assert stats["multiply"] == bin(k).count("1") - 1
    # for powers of two the squaring count is exactly ceil(log2 k)
    for k in (2, 4, 8, 16, 32, 64, 128):
        stats = {"square": 0, "multiply": 0}
        fast_pow(Counted(1.5, stats), k)
        assert stats["square"] == math.ceil(math.log2(k))
        assert stats["multiply"] == 0


def test_power_law_basics():
    rng = np.random.default_rng(15)
    img = GrayImage(rng.random((8, 8)))
    assert power_law(img, 1) is img
    assert power_law(GrayImage(np.full((2, 2), 1.0)), 13).data[0, 0] == 1.0
    assert power_law(GrayImage(np.full((2, 2), 0.5)), 8).data[0, 0] == 0.00390625
    with pytest.raises(ValueError):
        power_law(img, 0)


def test_power_law_monotone():
    rng = np.random.default_rng(16)
    img = GrayImage(np.sort(rng.random(64)).reshape(8, 8))
    for q in (2, 4, 8):
        flat = power_law(img, q).data.ravel()
        assert np.all(np.diff(flat) >= -1e-15)
        assert flat.min() >= 0.0 and flat.max() <= 1.0
