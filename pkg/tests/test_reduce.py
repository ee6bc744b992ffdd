import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mirtissue.errors import DimensionMismatchError, InsufficientDataError, InvariantError
from mirtissue.reduce import pca_fit, pca_transform


def test_collinear_pair():
    model = pca_fit(np.array([[-1.0, -1.0], [1.0, 1.0]]), 2)
    assert np.allclose(model.components[0], np.array([1.0, 1.0]) / np.sqrt(2))
    assert np.allclose(model.explained_variance_ratio, [1.0, 0.0], atol=1e-12)


def test_isotropic_cloud():
    rng = np.random.default_rng(0)
    model = pca_fit(rng.standard_normal((10_000, 5)), 5)
    assert np.all(np.abs(model.explained_variance_ratio - 0.2) <= 0.02)


def test_full_basis_reconstructs():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    model = pca_fit(X, 6)
    scores = pca_transform(model, X)
    assert np.max(np.abs(scores @ model.components - (X - model.mean))) < 1e-8
    assert model.explained_variance.sum() == pytest.approx(model.total_variance, rel=1e-6)


def test_score_variance_and_mean():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 8)) * np.arange(1, 9)
    model = pca_fit(X, 3)
    scores = pca_transform(model, X)
    assert np.allclose(scores.var(axis=0, ddof=1), model.explained_variance, atol=1e-6)
    assert np.allclose(pca_transform(model, model.mean[None, :]), 0.0, atol=1e-12)


def test_translation_leaves_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 4)) * [5, 3, 2, 1]
    shift = rng.normal(size=4) * 100
    a = pca_transform(pca_fit(X, 2), X)
    b = pca_transform(pca_fit(X + shift, 2), X + shift)
    assert np.allclose(a - a[0], b - b[0], atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 5), elements=st.floats(-100, 100)), st.integers(1, 5))
def test_orthonormal_and_sorted(X, d):
    model = pca_fit(X, d)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(d), atol=1e-8)
    assert np.all(np.diff(model.explained_variance) <= 1e-9 * max(1.0, model.total_variance))
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_errors():
    with pytest.raises(InsufficientDataError):
        pca_fit(np.ones((1, 3)), 1)
    with pytest.raises(InvariantError):
        pca_fit(np.ones((5, 3)), 4)
    with pytest.raises(InvariantError):
        pca_fit(np.ones((5, 3)), 0)
    model = pca_fit(np.random.default_rng(0).normal(size=(5, 3)), 2)
    with pytest.raises(DimensionMismatchError):
        pca_transform(model, np.ones((2, 4)))
