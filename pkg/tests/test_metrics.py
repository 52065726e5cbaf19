import numpy as np
import pytest
import torch

from symface.errors import NumericError, OrganNotFoundError, ParameterError, ShapeError
from symface.metrics import (
    FeatureExtractor,
    frechet_distance,
    perceptual_distance,
    pixel_error,
    read_feature_csv,
    symmetry_error,
    write_feature_csv,
    write_report,
)
from symface.toyfaces import generate_face, reflect


def test_frechet_identical_sets():
    a = np.random.default_rng(0).normal(size=(500, 8))
    assert abs(frechet_distance(a, a)) <= 1e-6


def test_frechet_gaussian_shift():
    rng = np.random.default_rng(1)
    delta = np.full(8, 0.7)
    a = rng.normal(size=(10_000, 8))
    b = rng.normal(size=(10_000, 8)) + delta
    expected = float(delta @ delta)
    assert abs(frechet_distance(a, b) - expected) <= 0.05 * expected


def test_frechet_closed_form_covariances():
    # N(0, diag(s1)) vs N(0, diag(s2)): sum (sqrt(s1) - sqrt(s2))^2 for commuting covariances
    rng = np.random.default_rng(2)
    s1, s2 = np.array([1.0, 4.0, 0.25]), np.array([9.0, 1.0, 1.0])
    a = rng.normal(size=(200_000, 3)) * np.sqrt(s1)
    b = rng.normal(size=(200_000, 3)) * np.sqrt(s2)
    expected = float(((np.sqrt(s1) - np.sqrt(s2)) ** 2).sum())
    assert frechet_distance(a, b) == pytest.approx(expected, rel=0.03)


def test_frechet_symmetric_and_nonnegative():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(300, 5)), rng.normal(size=(400, 5)) * 2 + 1
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab == pytest.approx(ba, rel=1e-10)
    assert ab >= -1e-6


def test_frechet_errors():
    with pytest.raises(ShapeError):
        frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))
    bad = np.ones((5, 3))
    bad[0, 0] = np.nan
    with pytest.raises(NumericError):
        frechet_distance(bad, np.ones((5, 3)))


def test_feature_csv_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(6, 4))
    write_feature_csv(m, tmp_path / "f.csv")
    assert np.allclose(read_feature_csv(tmp_path / "f.csv"), m)
    ext = FeatureExtractor("external", path=str(tmp_path / "f.csv"))
    assert ext.features().shape == (6, 4)
    with pytest.raises(ParameterError):
        FeatureExtractor("external")


def test_extractors_deterministic():
    x = np.random.default_rng(0).random((4, 32, 32, 3))
    a = FeatureExtractor("random_conv", seed=3).features(x)
    b = FeatureExtractor("random_conv", seed=3).features(x)
    assert a.shape == (4, 64) and np.array_equal(a, b)
    assert FeatureExtractor("flatten_pixels").features(x).shape == (4, 32 * 32 * 3)
    with pytest.raises(ParameterError):
        FeatureExtractor("inception")


@pytest.mark.parametrize("kind", ["flatten_pixels", "random_conv"])
def test_perceptual_distance_pseudometric(kind):
    rng = np.random.default_rng(4)
    x, y = rng.random((2, 32, 32, 3)), rng.random((2, 32, 32, 3))
    ext = FeatureExtractor(kind, seed=0)
    assert perceptual_distance(ext, x, x) == 0
    assert perceptual_distance(ext, x, y) == pytest.approx(perceptual_distance(ext, y, x), rel=1e-12)
    assert perceptual_distance(ext, x, y) > 0


def test_flatten_pixels_monotone_in_mse():
    rng = np.random.default_rng(5)
    ext = FeatureExtractor("flatten_pixels")
    x = rng.random((1, 16, 16, 3))
    pairs = [x + rng.normal(scale=s, size=x.shape) for s in rng.uniform(0.01, 0.5, size=20)]
    mse = [pixel_error(x, p, "L2") for p in pairs]
    dist = [perceptual_distance(ext, x, p) for p in pairs]
    order = np.argsort(mse)
    assert np.all(np.diff(np.asarray(dist)[order]) > 0)


def test_random_conv_not_permutation_invariant():
    rng = np.random.default_rng(6)
    ext = FeatureExtractor("random_conv", seed=0)
    x, y = rng.random((1, 32, 32, 3)), rng.random((1, 32, 32, 3))
    perm = rng.permutation(32 * 32)

    def shuffle(img):
        return img.reshape(1, -1, 3)[:, perm].reshape(img.shape)

    assert perceptual_distance(ext, x, y) != pytest.approx(perceptual_distance(ext, shuffle(x), shuffle(y)), rel=1e-6)


def test_pixel_error():
    assert pixel_error(np.ones(4), np.zeros(4)) == 1.0
    assert pixel_error(np.full(4, 2.0), np.zeros(4), "L2") == 4.0


def test_symmetry_error_values():
    sample = generate_face(7, size=64)
    assert symmetry_error(sample, sample.image, "eye") == 0.0
    eye = sample.parts.mask("eye").astype(bool)
    right = eye & (np.arange(64) > sample.midline_x)[None, :]
    shifted = sample.image.copy()
    shifted[right] += 0.5
    assert symmetry_error(sample, shifted, "eye") == pytest.approx(0.5, abs=1e-12)
    background = shifted.copy()
    background[sample.parts.mask("background").astype(bool)] = 0.9
    assert symmetry_error(sample, background, "eye") == symmetry_error(sample, shifted, "eye")


def test_symmetry_error_missing_organ():
    sample = generate_face(7, size=64, with_ears=False)
    with pytest.raises(OrganNotFoundError):
        symmetry_error(sample, sample.image, "ear")


def test_write_report(tmp_path):
    write_report({"fid": 1.5, "pixel": 0.25}, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == ["metric,value", "fid,1.5", "pixel,0.25"]


def test_stages_accept_tensors():
    ext = FeatureExtractor("random_conv", seed=0)
    stages = ext.stages(torch.rand(2, 3, 32, 32))
    assert [s.shape[1] for s in stages] == [16, 32, 64]
