"""Evaluation metrics: FID and the paired/unpaired Inception
Discriminative Scores over a pluggable feature extractor.

FID computes the Frechet distance between Gaussian fits; the covariance
square root uses an eigendecomposition of the symmetrized product with
eigenvalues clamped at zero, plus a small diagonal jitter when the
covariances are near-singular. U-IDS is the training-set
misclassification rate of a linear soft-margin SVM on real-vs-fake
features; P-IDS is the fraction of pairs where the fake scores strictly
more real than its paired real.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .errors import NumericError

SVM_C = 1.0
SVM_MAX_ITER = 200_000
SVM_SEED = 0


@dataclass
class FeatureMatrix:
    features: np.ndarray  # (N, d) float64
    tag: str = "unknown"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be (N, d), got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("feature matrix contains non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class IDSResult:
    u_ids: float
    p_ids: float | None
    svm_c: float = SVM_C


class ToyFeatureExtractor:
    """Hermetic extractor: area-downsample to 16x16, flatten, fixed random
    projection. Validates the metric math without any pretrained weights."""

    def __init__(self, seed: int = 99, out_dim: int = 64, pool_size: int = 16):
        self.tag = f"toy-proj-{pool_size}x{pool_size}-d{out_dim}-s{seed}"
        self.pool_size = pool_size
        rng = np.random.default_rng(seed)
        in_dim = 3 * pool_size * pool_size
        self.projection = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        batch = torch.from_numpy(np.asarray(images, dtype=np.float32))
        pooled = torch.nn.functional.adaptive_avg_pool2d(batch, self.pool_size)
        flat = pooled.reshape(batch.shape[0], -1).numpy().astype(np.float64)
        return flat @ self.projection


class InceptionFeatureExtractor:
    """Standard 2048-d Inception pool features from a local checkpoint.

    Absolute FID values are only comparable when computed with the same
    extractor; tests use the toy extractor instead.
    """

    def __init__(self, checkpoint_path: str):
        from torchvision.models import inception_v3

        self.tag = "inception-v3-pool3"
        model = inception_v3(weights=None, aux_logits=True, init_weights=False)
        state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
        model.fc = torch.nn.Identity()
        model.eval()
        model.requires_grad_(False)
        self.model = model

    def __call__(self, images: np.ndarray) -> np.ndarray:
        batch = torch.from_numpy(np.asarray(images, dtype=np.float32))
        batch = torch.nn.functional.interpolate(
            batch, size=(299, 299), mode="bilinear", align_corners=False
        )
        with torch.no_grad():
            feats = self.model(batch)
        return feats.numpy().astype(np.float64)


def extract_features(images, extractor) -> FeatureMatrix:
    """One feature row per image; deterministic given the extractor."""
    if isinstance(images, (list, tuple)):
        if len(images) == 0:
            raise ValueError("empty image batch")
        images = np.stack([np.asarray(im) for im in images])
    else:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
    if images.shape[0] == 0:
        raise ValueError("empty image batch")
    feats = extractor(images)
    return FeatureMatrix(features=feats, tag=getattr(extractor, "tag", "unknown"))


def _as_features(x) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.features
    return FeatureMatrix(np.asarray(x)).features


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(real, fake) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    fr, ff = _as_features(real), _as_features(fake)
    if fr.shape[1] != ff.shape[1]:
        raise ValueError(f"feature dims differ: {fr.shape[1]} vs {ff.shape[1]}")
    if fr.shape[0] < 2 or ff.shape[0] < 2:
        raise ValueError("FID needs at least 2 samples per side")
    d = fr.shape[1]
    if min(fr.shape[0], ff.shape[0]) < d + 1:
        warnings.warn(
            f"fewer than d+1={d + 1} samples; covariance estimate is rank-deficient",
            stacklevel=2,
        )
    mu_r, mu_f = fr.mean(axis=0), ff.mean(axis=0)
    sigma_r = np.cov(fr, rowvar=False, ddof=1)
    sigma_f = np.cov(ff, rowvar=False, ddof=1)
    sigma_r = np.atleast_2d(sigma_r)
    sigma_f = np.atleast_2d(sigma_f)

    # Jitter near-singular covariances; applied to both sides so the
    # identical-input case stays exactly zero.
    scale = (np.trace(sigma_r) + np.trace(sigma_f)) / (2.0 * d)
    tol = 1e-9 * max(scale, 1e-30)
    min_eig = min(np.linalg.eigvalsh(sigma_r).min(), np.linalg.eigvalsh(sigma_f).min())
    if min_eig < tol:
        jitter = 1e-6 * scale * np.eye(d)
        sigma_r = sigma_r + jitter
        sigma_f = sigma_f + jitter

    sr = _psd_sqrt(sigma_r)
    mid = sr @ sigma_f @ sr
    eigs = np.clip(np.linalg.eigvalsh((mid + mid.T) / 2.0), 0.0, None)
    tr_sqrt = float(np.sqrt(eigs).sum())
    value = float(np.sum((mu_r - mu_f) ** 2) + np.trace(sigma_r) + np.trace(sigma_f)
                  - 2.0 * tr_sqrt)
    if not np.isfinite(value):
        raise NumericError("FID is non-finite after stabilization")
    return max(value, 0.0)


def ids(real, fake, paired: bool = True) -> IDSResult:
    """Fit the fixed linear SVM on real(+1) vs fake(-1) features.

    u_ids: misclassification rate on the fitting data. p_ids: strict
    paired win rate of fakes (ties count as 0); None when paired=False.
    """
    fr, ff = _as_features(real), _as_features(fake)
    if fr.shape != ff.shape:
        raise ValueError("real and fake feature matrices must have equal shape")
    n = fr.shape[0]
    if n < 2:
        raise ValueError("IDS needs at least 2 samples per side")
    x = np.vstack([fr, ff])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    clf = LinearSVC(
        C=SVM_C, loss="hinge", random_state=SVM_SEED, max_iter=SVM_MAX_ITER, tol=1e-6
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x, y)
    u_ids = float(np.mean(clf.predict(x) != y))
    p_ids = None
    if paired:
        scores = clf.decision_function(x)
        p_ids = float(np.mean(scores[n:] > scores[:n]))
    return IDSResult(u_ids=u_ids, p_ids=p_ids, svm_c=SVM_C)


def metrics_report(real, fake, paired: bool = True, mask_scheme: str = "unknown") -> dict:
    """JSON-ready bundle: {fid, u_ids, p_ids, n, extractor_tag, mask_scheme}."""
    fr = real if isinstance(real, FeatureMatrix) else FeatureMatrix(real)
    ff = fake if isinstance(fake, FeatureMatrix) else FeatureMatrix(fake)
    result = ids(fr, ff, paired=paired)
    return {
        "fid": fid(fr, ff),
        "u_ids": result.u_ids,
        "p_ids": result.p_ids,
        "n": fr.n,
        "extractor_tag": fr.tag,
        "mask_scheme": mask_scheme,
    }
