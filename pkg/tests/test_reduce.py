import warnings

import numpy as np
import pytest

from pliunfold.reduce import (
    ConstantConfoundWarning,
    PcaModel,
    confound_regress,
    pca_fit,
    pca_inverse,
    pca_transform,
    reduce_features,
)


def _lstsq_residual(X, c):
    A = np.stack([np.ones_like(c), c], 1)
    beta, *_ = np.linalg.lstsq(A, X, rcond=None)
    return X - A @ beta


def test_exact_linear_column_vanishes(rng):
    c = rng.uniform(0, 90, 50)
    r = confound_regress((2 * c + 5)[:, None], c)
    assert np.abs(r).max() < 1e-8


def test_hand_oracle():
    assert np.allclose(confound_regress([[1.0], [2], [3]], [0, 1, 2]).ravel(), 0, atol=1e-12)
    # slope 1/2 and intercept 3/2 by the normal equations
    assert np.allclose(confound_regress([[1.0], [3], [2]], [0, 1, 2]).ravel(), [-0.5, 1.0, -0.5], atol=1e-12)


def test_orthogonal_column_unchanged():
    c = np.array([0.0, 1, 2, 3])
    x = np.array([1.0, -1, -1, 1])  # zero mean, orthogonal to c - mean(c)
    assert np.allclose(confound_regress(x[:, None], c).ravel(), x, atol=1e-12)


def test_matches_lstsq_and_is_orthogonal(rng):
    X = rng.normal(size=(200, 6)) + rng.uniform(0, 90, 200)[:, None] * rng.normal(size=6)
    c = rng.uniform(0, 90, 200)
    r = confound_regress(X, c)
    assert np.allclose(r, _lstsq_residual(X, c), atol=1e-9)
    assert np.abs(r.mean(0)).max() < 1e-10
    corr = [abs(np.corrcoef(col, c)[0, 1]) for col in r.T]
    assert max(corr) < 1e-8
    assert np.allclose(confound_regress(r, c), r, atol=1e-10)


def test_constant_confound_warns(rng):
    X = rng.normal(size=(10, 2))
    with pytest.warns(ConstantConfoundWarning):
        r = confound_regress(X, np.full(10, 7.0))
    assert np.allclose(r, X - X.mean(0))


def test_regress_errors():
    with pytest.raises(ValueError):
        confound_regress(np.zeros((3, 1)), [1, 2])
    with pytest.raises(ValueError):
        confound_regress(np.zeros((2, 1)), [1, np.nan])


def test_line_has_one_component(rng):
    t = rng.normal(size=100)
    m = pca_fit(np.stack([t, 3 * t - 1], 1), threshold=0.8)
    assert m.k == 1 and m.explained_ratio[0] > 1 - 1e-10


def test_isotropic_spectrum():
    X = np.random.default_rng(7).normal(size=(10_000, 5))
    m = pca_fit(X)
    assert m.explained_ratio.max() / m.explained_ratio.min() < 1.2


@pytest.mark.parametrize("shape", [(300, 8), (12, 40)])
def test_orthonormal_and_reconstruct(shape, rng):
    X = rng.normal(size=shape) @ rng.normal(size=(shape[1], shape[1]))
    m = pca_fit(X)
    assert m.k == shape[1]
    gram = m.components @ m.components.T
    assert np.abs(gram - np.eye(m.k)).max() < 1e-8
    back = pca_inverse(m, pca_transform(m, X))
    assert np.linalg.norm(back - X) / np.linalg.norm(X) < 1e-6
    assert np.all(np.diff(m.eigenvalues) <= 1e-12)


def test_scores_uncorrelated_and_match_svd(rng):
    X = rng.normal(size=(400, 6)) * [5, 4, 3, 2, 1, 0.5]
    m = pca_fit(X, k=4)
    S = pca_transform(m, X)
    cov = np.cov(S.T)
    off = cov - np.diag(np.diag(cov))
    assert np.abs(off).max() < 1e-6 * np.abs(np.diag(cov)).max()
    _, s, vt = np.linalg.svd(X - X.mean(0), full_matrices=False)
    assert np.allclose(m.eigenvalues, s**2 / (len(X) - 1))
    assert np.allclose(np.abs(m.components), np.abs(vt[:4]), atol=1e-8)


def test_threshold_selects_smallest_k():
    X = np.diag([3.0, 2.0, 1.0])  # covariance ratios 9:4:1 after centering
    X = np.concatenate([X, -X])
    m = pca_fit(X, threshold=9 / 14)
    assert m.k == 1
    assert pca_fit(X, threshold=9 / 14 + 1e-6).k == 2
    assert pca_fit(X, threshold=1.0).k == 3


def test_sign_convention(rng):
    X = rng.normal(size=(50, 4))
    for comp in pca_fit(X).components:
        assert comp[np.argmax(np.abs(comp))] > 0
    a, b = pca_fit(X), pca_fit(-X)
    assert np.allclose(a.components, b.components)


def test_pca_errors(rng):
    with pytest.raises(ValueError):
        pca_fit(rng.normal(size=(5, 3)), k=4)
    with pytest.raises(ValueError):
        pca_fit(np.zeros((1, 3)))


def test_model_roundtrip(tmp_path, rng):
    m = pca_fit(rng.normal(size=(30, 5)), k=3)
    m.save(tmp_path / "p")
    back = PcaModel.load(tmp_path / "p")
    for name in ("mean", "components", "eigenvalues", "explained_ratio"):
        assert np.array_equal(getattr(back, name), getattr(m, name))


def test_reduce_regresses_first(rng):
    c = rng.uniform(0, 90, 500)
    X = np.stack([10 * c, rng.normal(size=500), 0.1 * rng.normal(size=500)], 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        scores, m = reduce_features(X, c, 0.8)
    # the confound would dominate the first component without regression
    assert m.k == 1
    assert abs(np.corrcoef(scores[:, 0], c)[0, 1]) < 1e-8
