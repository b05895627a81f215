import math
import os

import numpy as np
import pytest

from contrastiq.features import (
    FeatureVector,
    MdmParams,
    entropy,
    extract,
    extract_batch,
    mdm_feature,
    minkowski_deviation,
    read_feature_csv,
    write_feature_csv,
)
from contrastiq.imgio import GrayImage, load_gray, write_pgm
from contrastiq.pixelops import complement

from oracles import naive_deviation, naive_entropy, naive_mdm

# frozen from a 60-digit high-precision evaluation of the 2x2 fixture below
MDM_2X2_RHO64_Q8 = 0.92527643577206119


def ramp_image(n: int = 64) -> GrayImage:
    return GrayImage(np.linspace(0.0, 1.0, n * n).reshape(n, n))


def test_deviation_constant_is_zero():
    img = GrayImage(np.full((7, 5), 0.42))
    for rho in (1, 2, 8, 64):
        assert minkowski_deviation(img, rho) == 0.0


def test_deviation_two_level_closed_forms():
    img = GrayImage(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert abs(minkowski_deviation(img, 1) - 0.5) < 1e-15
    assert abs(minkowski_deviation(img, 2) - 0.5) < 1e-15


def test_deviation_rho1_rho2_reduce_to_mad_and_std():
    rng = np.random.default_rng(20)
    for _ in range(50):
        img = GrayImage(rng.random((int(rng.integers(2, 32)), int(rng.integers(2, 32)))))
        mad = float(np.abs(img.data - img.data.mean()).mean())
        std = float(img.data.std())
        assert abs(minkowski_deviation(img, 1) - mad) < 1e-12
        assert abs(minkowski_deviation(img, 2) - std) < 1e-12


def test_deviation_matches_extended_precision_oracle():
    rng = np.random.default_rng(21)
    for _ in range(10):
        img = GrayImage(rng.random((16, 16)))
        for rho in (4, 16, 64):
            got = minkowski_deviation(img, rho)
            want = naive_deviation(img.data, rho)
            assert abs(got - want) <= 1e-10 * want


def test_deviation_monotone_in_rho():
    rng = np.random.default_rng(22)
    img = GrayImage(rng.random((20, 20)))
    values = [minkowski_deviation(img, rho) for rho in (1, 2, 4, 8, 16, 32, 64, 128)]
    assert np.all(np.diff(values) >= -1e-12)


def test_deviation_approaches_max_deviation():
    rng = np.random.default_rng(23)
    img = GrayImage(rng.random((16, 16)))
    d_max = float(np.max(np.abs(img.data - img.data.mean())))
    v = minkowski_deviation(img, 128)
    assert v <= d_max + 1e-9
    # lower bound from the power-mean inequality at N=256 pixels
    assert v >= d_max * (1.0 / img.pixel_count) ** (1.0 / 128.0) - 1e-12


def test_mdm_feature_analytic_cases():
    assert mdm_feature(GrayImage(np.full((4, 4), 0.7)), MdmParams()) == 0.0
    img = GrayImage(np.array([[0.0, 1.0], [1.0, 0.0]]))
    got = mdm_feature(img, MdmParams(rho=2, q=1))
    assert abs(got - 0.5**0.25) < 1e-15


def test_mdm_feature_matches_high_precision_fixture():
    img = GrayImage(np.array([[0.0, 0.25], [0.5, 1.0]]))
    got = mdm_feature(img, MdmParams(rho=64, q=8))
    assert abs(got - MDM_2X2_RHO64_Q8) <= 1e-12 * MDM_2X2_RHO64_Q8
    # and the in-test extended-precision oracle agrees with both
    want = naive_mdm(img.data, 64, 8)
    assert abs(got - want) <= 1e-12 * want


def test_entropy_anchors():
    assert entropy(GrayImage(np.full((5, 5), 0.37))) == 0.0
    all_levels = GrayImage(np.arange(256).repeat(4).reshape(32, 32) / 255.0)
    assert abs(entropy(all_levels) - 8.0) < 1e-12
    coin = GrayImage(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert abs(entropy(coin) - 1.0) < 1e-12


def test_entropy_matches_direct_oracle():
    rng = np.random.default_rng(24)
    img = GrayImage(rng.integers(0, 256, size=(24, 24)) / 255.0)
    assert abs(entropy(img) - naive_entropy(img.data)) < 1e-12


def test_extract_constant_image():
    fv = extract(GrayImage(np.full((32, 32), 0.5)), MdmParams(), use_downsample=True)
    assert (fv.mdm_d, fv.mdm_dc, fv.entropy_bits) == (0.0, 0.0, 0.0)


def test_extract_q1_complement_symmetry():
    rng = np.random.default_rng(25)
    for _ in range(10):
        img = GrayImage(rng.random((16, 16)))
        fv = extract(img, MdmParams(rho=64, q=1), use_downsample=False)
        assert abs(fv.mdm_d - fv.mdm_dc) < 1e-9


def test_extract_ramp_matches_oracle():
    img = ramp_image(64)
    fv = extract(img, MdmParams(), use_downsample=False)
    for got, pixels in ((fv.mdm_d, img.data), (fv.mdm_dc, 1.0 - img.data)):
        want = naive_mdm(pixels, 64, 8)
        assert abs(got - want) <= 1e-9 * want
    assert abs(fv.entropy_bits - naive_entropy(img.data)) < 1e-12


def test_extract_applies_downsampling():
    rng = np.random.default_rng(26)
    img = GrayImage(rng.random((64, 64)))
    with_ds = extract(img, MdmParams(), use_downsample=True)
    without = extract(img, MdmParams(), use_downsample=False)
    assert with_ds != without  # 2x2 block means change a random image


def test_extract_permutation_invariance():
    rng = np.random.default_rng(27)
    data = rng.random((12, 12))
    shuffled = rng.permutation(data.ravel()).reshape(12, 12)
    a = extract(GrayImage(data), MdmParams(), use_downsample=False)
    b = extract(GrayImage(shuffled), MdmParams(), use_downsample=False)
    assert abs(a.mdm_d - b.mdm_d) < 1e-12
    assert abs(a.mdm_dc - b.mdm_dc) < 1e-12
    assert abs(a.entropy_bits - b.entropy_bits) < 1e-12


def test_extract_finite_on_extreme_images():
    for value in (0.0, 1.0):
        fv = extract(GrayImage(np.full((16, 16), value)), MdmParams(), use_downsample=True)
        assert all(map(math.isfinite, (fv.mdm_d, fv.mdm_dc, fv.entropy_bits)))


def test_fixture_image_is_asymmetric():
    img = load_gray(os.path.join(os.path.dirname(__file__), "data", "fixture.pgm"))
    fv = extract(img, MdmParams(), use_downsample=True)
    assert abs(fv.mdm_d - fv.mdm_dc) > 1e-6


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(1.5, 0.2, 3.0)
    with pytest.raises(ValueError):
        FeatureVector(0.5, 0.2, 9.0)
    with pytest.raises(ValueError):
        FeatureVector(float("nan"), 0.2, 3.0)
    fv = FeatureVector(0.25, 0.5, 4.0)
    assert fv.as_array().tolist() == [0.25, 0.5, 4.0]


def test_mdm_params_validation():
    with pytest.raises(ValueError):
        MdmParams(rho=0)
    with pytest.raises(ValueError):
        MdmParams(q=0)
    p = MdmParams()
    assert (p.rho, p.q) == (64, 8)


def test_extract_batch_matches_single(tmp_path):
    rng = np.random.default_rng(28)
    paths = []
    imgs = []
    for i in range(4):
        img = GrayImage(rng.integers(0, 256, size=(20, 20)) / 255.0)
        path = str(tmp_path / f"i{i}.pgm")
        write_pgm(img, path)
        paths.append(path)
        imgs.append(img)
    table = extract_batch(paths, MdmParams(), use_downsample=True, jobs=1)
    assert table.shape == (4, 3)
    for row, img in zip(table, imgs):
        fv = extract(img, MdmParams(), use_downsample=True)
        assert np.array_equal(row, fv.as_array())


def test_extract_batch_parallel_identical(tmp_path):
    rng = np.random.default_rng(29)
    paths = []
    for i in range(6):
        img = GrayImage(rng.random((24, 24)))
        path = str(tmp_path / f"p{i}.pgm")
        write_pgm(img, path)
        paths.append(path)
    serial = extract_batch(paths, MdmParams(), jobs=1)
    parallel = extract_batch(paths, MdmParams(), jobs=3)
    assert np.array_equal(serial, parallel)


def test_feature_csv_round_trip(tmp_path):
    rows = [
        {"path": "a.pgm", "mdm_d": 0.123456789012345678, "mdm_dc": 0.5,
         "entropy": 6.25, "mos": 4.5, "distortion": "gamma", "content_id": "c00"},
        {"path": "b.pgm", "mdm_d": 0.25, "mdm_dc": 0.75,
         "entropy": 1.0, "mos": 2.0, "distortion": "meanshift", "content_id": "c01"},
    ]
    path = str(tmp_path / "f.csv")
    write_feature_csv(path, rows)
    back = read_feature_csv(path)
    assert len(back) == 2
    for orig, loaded in zip(rows, back):
        for key in ("mdm_d", "mdm_dc", "entropy", "mos"):
            assert loaded[key] == orig[key]  # 17 significant digits round-trip
        assert loaded["distortion"] == orig["distortion"]


def test_feature_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("path,metric\nx,1\n")
    with pytest.raises(ValueError):
        read_feature_csv(str(path))
