"""Per-class Gaussian mixture models over (bandpassed intensity, radial distance).

Features are z-scored with statistics stored in the model, and all mixture
parameters live in that standardised space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateComponent, DimensionMismatch, InsufficientSamples
from .imgio import DiskGeometry, FrameBuffer

log = logging.getLogger(__name__)

NLL_MAX = 50.0
COV_FLOOR = 1e-6
OFF_DISK_RADIAL = 1.02
MODEL_FORMAT = "halpha-gmm"
MODEL_VERSION = 1


class Label(IntEnum):
    SUNSPOT = 0
    FILAMENT = 1
    FLARE = 2
    BACKGROUND = 3


NUM_CLASSES = len(Label)
UNLABELED = 255


class FeatureSample(NamedTuple):
    intensity: float
    radial: float
    label: int


@dataclass
class GmmModel:
    """K class mixtures with M components each.

    ``weights`` (K, M), ``means`` (K, M, 2), ``covs`` (K, M, 2, 2) are in
    standardised feature space; ``feat_mean``/``feat_scale`` map raw features there.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    loglik: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list[list[float]] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        self.feat_mean = np.asarray(self.feat_mean, dtype=np.float64)
        self.feat_scale = np.asarray(self.feat_scale, dtype=np.float64)
        self.loglik = np.asarray(self.loglik, dtype=np.float64)
        k, m = self.weights.shape
        if self.means.shape != (k, m, 2) or self.covs.shape != (k, m, 2, 2):
            raise ValueError("inconsistent mixture parameter shapes")
        if np.any(self.weights < 0) or np.max(np.abs(self.weights.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1 per class")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def components(self) -> int:
        return self.weights.shape[1]

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        return (np.asarray(feats, dtype=np.float64) - self.feat_mean) / self.feat_scale

    def raw_means(self) -> np.ndarray:
        return self.means * self.feat_scale + self.feat_mean

    def raw_covs(self) -> np.ndarray:
        s = np.outer(self.feat_scale, self.feat_scale)
        return self.covs * s

    # -- persistence ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "classes": self.num_classes,
            "components": self.components,
            "feat_mean": self.feat_mean.tolist(),
            "feat_scale": self.feat_scale.tolist(),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "loglik": self.loglik.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model file")
        return cls(
            weights=doc["weights"],
            means=doc["means"],
            covs=doc["covs"],
            feat_mean=doc["feat_mean"],
            feat_scale=doc["feat_scale"],
            loglik=doc.get("loglik", []),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# EM


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of a 2D normal at rows of ``x``."""
    a, b, d = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * d - b * b
    dx = x[..., 0] - mean[0]
    dy = x[..., 1] - mean[1]
    maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -0.5 * maha - 0.5 * math.log(det) - math.log(2.0 * math.pi)


def _floor_cov(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    hit = bool(vals.min() < COV_FLOOR)
    if hit:
        vals = np.maximum(vals, COV_FLOOR)
        cov = (vecs * vals) @ vecs.T
    return cov, hit


def _kmeanspp(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


@dataclass
class EmFit:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float
    history: list[float]
    iterations: int


def fit_mixture(x: np.ndarray, m: int, rng: np.random.Generator, max_iter: int = 500, rtol: float = 1e-6) -> EmFit:
    """EM for one 2D Gaussian mixture, initialised from k-means++ seeds."""
    n = x.shape[0]
    centers = _kmeanspp(x, m, rng)
    assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, m))
    resp[np.arange(n), assign] = 1.0
    global_cov = np.cov(x.T, bias=True) + COV_FLOOR * np.eye(2)

    weights = np.empty(m)
    means = np.empty((m, 2))
    covs = np.empty((m, 2, 2))

    def m_step(resp):
        floored = False
        nk = resp.sum(axis=0)
        for j in range(m):
            if nk[j] <= 1e-12:
                weights[j] = 0.0
                means[j] = centers[j]
                covs[j] = global_cov
                continue
            weights[j] = nk[j] / n
            means[j] = resp[:, j] @ x / nk[j]
            dx = x - means[j]
            cov = (resp[:, j, None] * dx).T @ dx / nk[j]
            covs[j], hit = _floor_cov(cov)
            floored |= hit
        weights[:] = weights / weights.sum()
        return floored

    floor_run = 0
    if m_step(resp):
        floor_run = 1
    history: list[float] = []
    for it in range(max_iter):
        logp = np.column_stack([np.log(max(weights[j], 1e-300)) + _log_gauss(x, means[j], covs[j]) for j in range(m)])
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise RuntimeError(f"EM log-likelihood decreased: {history[-1]!r} -> {ll!r}")
        history.append(ll)
        # a fit resting on the covariance floor is not accepted as converged; it either
        # leaves the floor or runs into the degenerate-component limit below
        if floor_run == 0 and len(history) > 1 and abs(ll - history[-2]) <= rtol * max(abs(history[-2]), 1e-300):
            break
        resp = np.exp(logp - norm[:, None])
        if m_step(resp):
            floor_run += 1
            if floor_run >= 10:
                raise DegenerateComponent("a component covariance stayed at the floor for 10 iterations")
        else:
            floor_run = 0
    return EmFit(weights.copy(), means.copy(), covs.copy(), history[-1], history, len(history))


def fit_gmm_em(
    features: np.ndarray,
    labels: np.ndarray,
    components: int = 3,
    seed: int = 0,
    num_classes: int = NUM_CLASSES,
    max_iter: int = 500,
) -> GmmModel:
    """Fit one mixture per class on (intensity, radial) features.

    Each class needs at least ``10 * components`` samples. Initialisation is
    deterministic given ``seed`` and the sample order.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != 2 or labels.shape != (features.shape[0],):
        raise DimensionMismatch("features must be (N, 2) with N labels")
    for c in range(num_classes):
        count = int(np.sum(labels == c))
        if count < 10 * components:
            raise InsufficientSamples(f"class {c} has {count} samples, need {10 * components}")
    keep = labels < num_classes
    feat_mean = features[keep].mean(axis=0)
    feat_scale = features[keep].std(axis=0)
    feat_scale[feat_scale == 0] = 1.0
    z = (features - feat_mean) / feat_scale

    weights = np.empty((num_classes, components))
    means = np.empty((num_classes, components, 2))
    covs = np.empty((num_classes, components, 2, 2))
    loglik = np.empty(num_classes)
    history = []
    for c in range(num_classes):
        rng = np.random.default_rng([seed, c])
        fit = fit_mixture(z[labels == c], components, rng, max_iter=max_iter)
        weights[c], means[c], covs[c] = fit.weights, fit.means, fit.covs
        loglik[c] = fit.loglik
        history.append(fit.history)
        log.debug("class %d: %d EM iterations, loglik %.6g", c, fit.iterations, fit.loglik)
    return GmmModel(weights, means, covs, feat_mean, feat_scale, loglik, history)


# ---------------------------------------------------------------------------
# evaluation


def class_nll(model: GmmModel, cls: int, feats: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Negative log mixture density of class ``cls`` at raw features (..., 2)."""
    z = model.standardize(feats)
    logp = np.stack(
        [
            np.log(max(model.weights[cls, j], 1e-300)) + _log_gauss(z, model.means[cls, j], model.covs[cls, j])
            for j in range(model.components)
        ],
        axis=-1,
    )
    nll = -logsumexp(logp, axis=-1)
    if clamp:
        nll = np.clip(nll, 0.0, NLL_MAX)
    return nll


def gmm_nll(model: GmmModel, cls: int, feature: tuple[float, float]) -> float:
    return float(class_nll(model, cls, np.asarray(feature, dtype=np.float64)))


@dataclass
class ProbVolume:
    """Per-class negative log-probability planes, shape (K, H, W)."""

    planes: np.ndarray
    timestamp: object = None
    frame_index: int = 0

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3:
            raise ValueError("planes must be (K, H, W)")
        if not np.all(np.isfinite(self.planes)) or self.planes.min() < 0:
            raise ValueError("planes must be finite and non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1:]


def pixel_features(frame: FrameBuffer, geom: DiskGeometry) -> np.ndarray:
    """(H, W, 2) array of [bandpassed intensity, radial distance in disk radii]."""
    return np.stack([frame.data, geom.radial_map(frame.shape)], axis=-1)


def class_prob_volume(frame: FrameBuffer, geom: DiskGeometry, model: GmmModel) -> ProbVolume:
    if model.num_classes != NUM_CLASSES:
        raise ValueError(f"model covers {model.num_classes} classes, expected {NUM_CLASSES}")
    feats = pixel_features(frame, geom)
    planes = np.stack([class_nll(model, c, feats) for c in range(NUM_CLASSES)])
    off = feats[..., 1] > OFF_DISK_RADIAL
    planes[:, off] = NLL_MAX
    planes[Label.BACKGROUND, off] = 0.0
    return ProbVolume(planes, frame.timestamp, frame.frame_index)


def temporal_average(previous: ProbVolume | None, current: ProbVolume, alpha: float) -> ProbVolume:
    """Exponentially weighted average ``alpha * current + (1 - alpha) * previous``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if previous is None:
        return current
    if previous.planes.shape != current.planes.shape:
        raise DimensionMismatch(f"volume shapes differ: {previous.planes.shape} vs {current.planes.shape}")
    planes = alpha * current.planes + (1.0 - alpha) * previous.planes
    return ProbVolume(planes, current.timestamp, current.frame_index)


def training_samples(
    bandpassed: FrameBuffer,
    geom: DiskGeometry,
    mask: np.ndarray,
    max_per_class: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Labelled pixel features from an annotation mask (255 = unlabelled)."""
    if mask.shape != bandpassed.shape:
        raise DimensionMismatch("annotation mask and frame differ in size")
    feats = pixel_features(bandpassed, geom).reshape(-1, 2)
    labels = np.asarray(mask).reshape(-1).astype(np.int64)
    on_disk = feats[:, 1] <= OFF_DISK_RADIAL
    xs, ys = [], []
    for c in range(NUM_CLASSES):
        idx = np.nonzero((labels == c) & on_disk)[0]
        if max_per_class is not None and idx.size > max_per_class:
            rng = rng or np.random.default_rng(0)
            idx = np.sort(rng.choice(idx, size=max_per_class, replace=False))
        xs.append(feats[idx])
        ys.append(np.full(idx.size, c))
    return np.concatenate(xs), np.concatenate(ys)
