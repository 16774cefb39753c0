import numpy as np
import pytest
import scipy.linalg

from gclab.errors import NumericError
from gclab.metrics import (
    FeatureMatrix,
    ToyFeatureExtractor,
    extract_features,
    fid,
    ids,
    metrics_report,
)

# Frozen solver self-oracle: LinearSVC(C=1, hinge, seed 0) on duplicated
# points misclassifies exactly half of them.
DUPLICATED_U_IDS = 0.5


def fid_oracle(fr, ff):
    """Independent dense reference via scipy's matrix square root."""
    mu_r, mu_f = fr.mean(0), ff.mean(0)
    sr = np.cov(fr, rowvar=False, ddof=1)
    sf = np.cov(ff, rowvar=False, ddof=1)
    covmean = scipy.linalg.sqrtm(sr @ sf)
    return float(((mu_r - mu_f) ** 2).sum() + np.trace(sr + sf - 2 * np.real(covmean)))


def test_extract_features_rows_and_determinism():
    extractor = ToyFeatureExtractor()
    rng = np.random.default_rng(0)
    images = rng.uniform(-1, 1, (5, 3, 64, 64)).astype(np.float32)
    fm = extract_features(images, extractor)
    assert fm.features.shape == (5, 64)
    assert fm.tag == extractor.tag
    again = extract_features(images, extractor)
    assert np.array_equal(fm.features, again.features)


def test_extract_features_empty_batch():
    with pytest.raises(ValueError):
        extract_features([], ToyFeatureExtractor())


def test_toy_extractor_matches_hand_computation():
    class TinyProjector:
        """Flatten + fixed matrix; hand-checkable on a 2x2 image."""

        tag = "tiny"

        def __init__(self):
            self.projection = np.arange(12.0).reshape(12, 1)

        def __call__(self, images):
            flat = images.reshape(images.shape[0], -1).astype(np.float64)
            return flat @ self.projection

    image = np.arange(12.0, dtype=np.float32).reshape(1, 3, 2, 2)
    fm = extract_features(image, TinyProjector())
    expected = float(sum(i * i for i in range(12)))
    assert fm.features[0, 0] == pytest.approx(expected)


def test_fid_identical_sets_near_zero():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((64, 8))
    assert fid(a, a.copy()) <= 1e-6


def test_fid_equal_covariance_gives_mean_distance():
    rng = np.random.default_rng(2)
    residuals = rng.standard_normal((128, 6))
    residuals -= residuals.mean(axis=0, keepdims=True)
    delta = np.array([0.3, -1.2, 0.0, 0.5, 2.0, -0.1])
    real = residuals + 1.0
    fake = residuals + 1.0 + delta
    assert fid(real, fake) == pytest.approx(float((delta**2).sum()), abs=1e-6)


def test_fid_matches_independent_oracle():
    rng = np.random.default_rng(3)
    fr = rng.standard_normal((256, 8))
    ff = rng.standard_normal((256, 8)) * 1.4 + 0.3
    mine = fid(fr, ff)
    ref = fid_oracle(fr, ff)
    assert mine == pytest.approx(ref, rel=1e-5)


def test_fid_symmetric():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((64, 5))
    b = rng.standard_normal((64, 5)) * 0.7 - 0.2
    assert abs(fid(a, b) - fid(b, a)) < 1e-6


def test_fid_rotation_invariance():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((128, 6))
    b = rng.standard_normal((128, 6)) * 1.2 + 0.4
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    assert fid(a @ q, b @ q) == pytest.approx(fid(a, b), abs=1e-5)


def test_fid_near_singular_covariance_stable():
    rng = np.random.default_rng(6)
    base = rng.standard_normal((32, 1))
    a = np.hstack([base, base * 2.0, base - 1.0])       # rank-1 covariance
    b = np.hstack([base * 0.5, base, base * 3.0]) + 0.1
    value = fid(a, b)
    assert np.isfinite(value) and value >= 0.0


def test_fid_input_validation():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        fid(rng.standard_normal((4, 3)), rng.standard_normal((4, 2)))
    with pytest.raises(ValueError):
        fid(rng.standard_normal((1, 3)), rng.standard_normal((4, 3)))
    with pytest.raises(NumericError):
        FeatureMatrix(np.array([[np.nan, 1.0]]))


def test_fid_small_sample_warns():
    rng = np.random.default_rng(8)
    with pytest.warns(UserWarning, match="rank-deficient"):
        fid(rng.standard_normal((4, 8)), rng.standard_normal((4, 8)))


def test_ids_separable_case():
    real = np.ones((8, 1))
    fake = -np.ones((8, 1))
    result = ids(real, fake)
    assert result.u_ids == 0.0
    assert result.p_ids == 0.0
    assert result.svm_c == 1.0


def test_ids_identical_sets_strict_tie_convention():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((64, 4))
    result = ids(a, a.copy())
    assert result.p_ids == 0.0
    assert result.u_ids == pytest.approx(DUPLICATED_U_IDS, abs=0.02)


def test_ids_constructed_30_percent_exceedance():
    reals = np.linspace(0, 9, 10).reshape(-1, 1)
    fakes = reals.copy()
    fakes[:3] += 1.0
    fakes[3:] -= 1.0
    assert float(np.mean(fakes > reals)) == 0.3  # direct counting oracle
    result = ids(reals, fakes)
    assert result.p_ids == 0.30


def test_ids_bounds_and_paired_flag():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((32, 3))
    b = rng.standard_normal((32, 3)) + 0.5
    result = ids(a, b)
    assert 0.0 <= result.u_ids <= 1.0
    assert 0.0 <= result.p_ids <= 1.0
    unpaired = ids(a, b, paired=False)
    assert unpaired.p_ids is None
    assert unpaired.u_ids == result.u_ids


def test_ids_permutation_properties():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((64, 4))
    b = a + rng.standard_normal((64, 4)) * 0.5
    base = ids(a, b)
    perm = rng.permutation(64)
    joint = ids(a[perm], b[perm])
    assert joint.u_ids == base.u_ids
    assert joint.p_ids == base.p_ids
    fake_only = ids(a, b[rng.permutation(64)])
    assert fake_only.u_ids == base.u_ids


def test_ids_input_validation():
    with pytest.raises(ValueError):
        ids(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        ids(np.ones((4, 2)), np.ones((5, 2)))


def test_metrics_report_fields():
    rng = np.random.default_rng(12)
    extractor = ToyFeatureExtractor()
    images = rng.uniform(-1, 1, (8, 3, 32, 32)).astype(np.float32)
    feats = extract_features(images, extractor)
    report = metrics_report(feats, feats, mask_scheme="stroke")
    assert report["fid"] <= 1e-6
    assert report["p_ids"] == 0.0
    assert report["n"] == 8
    assert report["extractor_tag"] == extractor.tag
    assert report["mask_scheme"] == "stroke"
