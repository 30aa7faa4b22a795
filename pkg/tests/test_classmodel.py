from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import frame
from halpha.classmodel import (
    NLL_MAX,
    UNLABELED,
    GmmModel,
    Label,
    ProbVolume,
    class_nll,
    class_prob_volume,
    fit_gmm_em,
    fit_mixture,
    gmm_nll,
    temporal_average,
    training_samples,
)
from halpha.errors import DegenerateComponent, DimensionMismatch, InsufficientSamples
from halpha.imgio import DiskGeometry


def unit_model(means, covs=None, weights=None):
    means = np.asarray(means, dtype=float)
    k, m = means.shape[:2]
    covs = np.broadcast_to(np.eye(2), (k, m, 2, 2)).copy() if covs is None else np.asarray(covs, float)
    weights = np.full((k, m), 1.0 / m) if weights is None else np.asarray(weights, float)
    return GmmModel(weights, means, covs, np.zeros(2), np.ones(2))


def random_model(rng, k=4, m=3):
    a = rng.normal(size=(k, m, 2, 2)) * 0.7
    covs = a @ np.swapaxes(a, -1, -2) + 0.1 * np.eye(2)
    w = rng.uniform(0.1, 1, (k, m))
    return GmmModel(w / w.sum(axis=1, keepdims=True), rng.normal(0, 2, (k, m, 2)), covs, rng.normal(size=2), rng.uniform(0.5, 2, 2))


def direct_nll(model, c, x):
    """Mixture NLL summed in linear space with scipy densities, in standardised coordinates."""
    z = (np.asarray(x, float) - model.feat_mean) / model.feat_scale
    p = sum(model.weights[c, j] * multivariate_normal(model.means[c, j], model.covs[c, j]).pdf(z) for j in range(model.components))
    return -np.log(p)


# -- NLL ------------------------------------------------------------------------


def test_nll_at_mean_of_unit_gaussian():
    model = unit_model([[[0.3, -0.2]]])
    assert gmm_nll(model, 0, (0.3, -0.2)) == pytest.approx(math.log(2 * math.pi), abs=1e-12)


def test_nll_far_away_is_clamped():
    model = unit_model([[[0.0, 0.0]]])
    assert gmm_nll(model, 0, (100.0, 0.0)) == NLL_MAX
    assert class_nll(model, 0, np.array([100.0, 0.0]), clamp=False) > NLL_MAX


def test_nll_symmetric_mixture():
    model = unit_model([[[1.0, 2.0], [-1.0, -2.0]]])
    x = np.array([0.4, -1.3])
    assert gmm_nll(model, 0, tuple(x)) == pytest.approx(gmm_nll(model, 0, tuple(-x)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 3))
def test_nll_matches_direct_density(seed, m):
    rng = np.random.default_rng(seed)
    model = random_model(rng, k=2, m=m)
    x = model.raw_means()[1, 0] + rng.normal(0, 0.5, 2)
    assert class_nll(model, 1, x, clamp=False) == pytest.approx(direct_nll(model, 1, x), abs=1e-9)


# -- EM -------------------------------------------------------------------------


def test_single_component_is_closed_form():
    rng = np.random.default_rng(0)
    x = rng.multivariate_normal([1.0, 5.0], [[2.0, 0.3], [0.3, 0.5]], size=400)
    model = fit_gmm_em(x, np.zeros(400, int), components=1, num_classes=1)
    np.testing.assert_allclose(model.raw_means()[0, 0], x.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(model.raw_covs()[0, 0], np.cov(x.T, bias=True), atol=1e-9)


def test_single_gaussian_recovery():
    rng = np.random.default_rng(1)
    mean, cov = np.array([-0.4, 0.6]), np.array([[0.09, 0.02], [0.02, 0.04]])
    n = 5000
    x = rng.multivariate_normal(mean, cov, size=n)
    model = fit_gmm_em(x, np.zeros(n, int), components=1, num_classes=1)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(model.raw_means()[0, 0] - mean) <= 3 * sd / math.sqrt(n))
    np.testing.assert_allclose(model.raw_covs()[0, 0], cov, rtol=0.2)


def test_em_history_never_decreases():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(0, 1, (300, 2)), rng.normal(3, 0.5, (200, 2))])
    model = fit_gmm_em(x, np.zeros(500, int), components=3, num_classes=1)
    h = np.array(model.history[0])
    assert np.all(np.diff(h) >= -1e-9 * np.maximum(1, np.abs(h[:-1])))


def test_em_is_deterministic():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(600, 2))
    y = rng.integers(0, 4, 600)
    a = fit_gmm_em(x, y, 2, seed=9)
    b = fit_gmm_em(x, y, 2, seed=9)
    assert a.to_json() == b.to_json()


def test_insufficient_samples():
    x = np.random.default_rng(0).normal(size=(100, 2))
    y = np.zeros(100, int)
    y[:5] = 1
    with pytest.raises(InsufficientSamples):
        fit_gmm_em(x, y, components=1, num_classes=2)


def test_collapsed_component_is_degenerate():
    rng = np.random.default_rng(0)
    x = np.concatenate([np.zeros((200, 2)), rng.normal(5, 1, (200, 2))])
    # rtol=0 keeps EM running, so the floored component is seen for 10 iterations in a row
    with pytest.raises(DegenerateComponent):
        fit_mixture(x, 2, np.random.default_rng(0), rtol=0.0)


def test_model_covariances_respect_floor_and_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(800, 2))
    y = rng.integers(0, 4, 800)
    model = fit_gmm_em(x, y, 3)
    assert np.all(np.linalg.eigvalsh(model.covs) >= 1e-6 - 1e-15)
    model.save(tmp_path / "m.json")
    again = GmmModel.load(tmp_path / "m.json")
    for name in ("weights", "means", "covs", "feat_mean", "feat_scale"):
        np.testing.assert_allclose(getattr(again, name), getattr(model, name), rtol=0, atol=1e-12)


# -- probability volumes ---------------------------------------------------------------


def test_prob_volume_bayes_argmin_and_off_disk():
    rng = np.random.default_rng(5)
    model = random_model(rng)
    geom = DiskGeometry(16.0, 16.0, 12.0)
    img = rng.normal(0, 2, (32, 32))
    vol = class_prob_volume(frame(img), geom, model)
    assert vol.planes.shape == (4, 32, 32)
    assert np.all(np.isfinite(vol.planes)) and vol.planes.min() >= 0
    radial = geom.radial_map((32, 32))
    off = radial > 1.02
    assert np.all(vol.planes[Label.BACKGROUND][off] == 0)
    assert np.all(vol.planes[: Label.BACKGROUND][:, off] == NLL_MAX)
    # pointwise Bayes decision from direct densities, on-disk pixels whose NLLs are not clamped
    for r, c in zip(*np.nonzero(~off)):
        x = (img[r, c], radial[r, c])
        ref = np.array([direct_nll(model, k, x) for k in range(4)])
        if ref.min() < NLL_MAX and ref.min() > 0:
            assert int(np.argmin(vol.planes[:, r, c])) == int(np.argmin(ref))


def test_dominant_mode_wins():
    model = unit_model([[[-2.0, 0.5]], [[-0.5, 0.5]], [[2.0, 0.5]], [[0.0, 0.5]]])
    geom = DiskGeometry(2.0, 2.0, 4.0)  # pixel (4, 2) sits at radial 0.5
    img = np.zeros((5, 5))
    img[2, 4] = 2.0
    vol = class_prob_volume(frame(img), geom, model)
    assert int(np.argmin(vol.planes[:, 2, 4])) == Label.FLARE


def test_temporal_average():
    ones = ProbVolume(np.ones((4, 3, 3)))
    zeros = ProbVolume(np.zeros((4, 3, 3)))
    assert temporal_average(None, ones, 0.5) is ones
    np.testing.assert_array_equal(temporal_average(zeros, ones, 1.0).planes, ones.planes)
    np.testing.assert_array_equal(temporal_average(ones, ones, 0.3).planes, ones.planes)
    np.testing.assert_allclose(temporal_average(zeros, ones, 0.25).planes, 0.25)
    with pytest.raises(DimensionMismatch):
        temporal_average(ProbVolume(np.ones((4, 2, 2))), ones, 0.5)
    with pytest.raises(ValueError):
        temporal_average(zeros, ones, 0.0)


def test_training_samples_skip_unlabelled_and_off_disk():
    geom = DiskGeometry(5.0, 5.0, 3.0)
    mask = np.full((11, 11), UNLABELED, dtype=np.uint8)
    mask[5, 5] = Label.FLARE
    mask[5, 6] = Label.FILAMENT
    mask[0, 0] = Label.SUNSPOT  # off disk
    x, y = training_samples(frame(np.arange(121.0).reshape(11, 11)), geom, mask)
    assert sorted(y.tolist()) == [Label.FILAMENT, Label.FLARE]
    assert x[y == Label.FLARE][0].tolist() == [60.0, 0.0]
