import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from pliunfold.baseline import (
    baseline_feature_maps,
    fractional_anisotropy,
    orientation_vectors,
    scatter_matrix,
)
from pliunfold.phantom import BACKGROUND, PhantomSpec, generate_phantom
from pliunfold.signal import ParameterMaps


def fa_oracle(v):
    """Pairwise-difference form of FA from an explicit loop-built scatter matrix."""
    S = np.zeros((3, 3))
    for x in v:
        S += np.outer(x, x)
    S /= len(v)
    l1, l2, l3 = np.linalg.eigvalsh(S)
    return np.sqrt(0.5) * np.sqrt((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2) / np.sqrt(l1**2 + l2**2 + l3**2)


def unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_identical_samples_fa_one():
    v = np.tile([0.3, -0.4, np.sqrt(1 - 0.25)], (10, 1))
    assert fractional_anisotropy(v) == pytest.approx(1.0, abs=1e-12)


def test_axes_fa_zero():
    assert fractional_anisotropy(np.eye(3)) == pytest.approx(0.0, abs=1e-12)


def test_uniform_sphere_fa_small(rng):
    assert fractional_anisotropy(unit(rng, 10_000)) < 0.05


def test_matches_oracle(rng):
    for n in (3, 7, 50):
        v = unit(rng, n) * np.array([1, 1, 3])
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        assert fractional_anisotropy(v) == pytest.approx(fa_oracle(v), abs=1e-12)


def test_needs_three_samples():
    with pytest.raises(ValueError):
        fractional_anisotropy(np.eye(3)[:2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariances(seed):
    rng = np.random.default_rng(seed)
    v = unit(rng, 20) * np.array([2, 1, 0.5])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    fa = fractional_anisotropy(v)
    R = Rotation.random(random_state=seed).as_matrix()
    assert abs(fractional_anisotropy(v @ R.T) - fa) < 1e-9
    flips = rng.choice([-1.0, 1.0], size=(20, 1))
    assert abs(fractional_anisotropy(v * flips) - fa) < 1e-12
    assert np.trace(scatter_matrix(v)) == pytest.approx(1.0, abs=1e-12)
    assert 0 <= fa <= 1


def test_orientation_vectors_unit(rng):
    v = orientation_vectors(rng.uniform(0, 180, 100), rng.uniform(0, 90, 100))
    assert np.allclose(np.linalg.norm(v, axis=1), 1, atol=1e-6)
    assert np.allclose(orientation_vectors(0.0, 0.0), [1, 0, 0])


def const_maps(h, w, it=42.0, phi=20.0, r=0.5, alpha=30.0):
    f = lambda x: np.full((h, w), x)  # noqa: E731
    return ParameterMaps(f(it), f(phi), f(r), f(alpha))


def test_constant_raster():
    out = baseline_feature_maps(const_maps(128, 128), 64)
    assert out.shape == (2, 2, 2) and out.dtype == np.float32
    assert np.allclose(out[0], 1.0, atol=1e-6)
    assert np.allclose(out[1], 42.0)


def test_patch_values_match_direct_computation(rng):
    h, w = 24, 16
    m = ParameterMaps(rng.uniform(20, 80, (h, w)), rng.uniform(0, 180, (h, w)), rng.uniform(0, 1, (h, w)),
                      rng.uniform(0, 90, (h, w)))
    out = baseline_feature_maps(m, 8, stride=4)
    assert out.shape == (2, 5, 3)
    i, j = 3, 1
    sl = np.s_[i * 4 : i * 4 + 8, j * 4 : j * 4 + 8]
    v = orientation_vectors(m.direction[sl], m.inclination[sl]).reshape(-1, 3)
    assert out[0, i, j] == pytest.approx(fa_oracle(v), abs=1e-6)
    assert out[1, i, j] == pytest.approx(m.transmittance[sl].mean(), rel=1e-6)


def test_raster_smaller_than_patch():
    with pytest.raises(ValueError):
        baseline_feature_maps(const_maps(32, 80), 64)


def test_low_kappa_band_has_lower_fa(small_spec):
    from dataclasses import replace

    from pliunfold.phantom import BandAppearance

    bands = (BandAppearance(0, 20, 2.0, 50, 1), BandAppearance(0, 20, 200.0, 50, 1))
    spec = replace(small_spec, bands=bands)
    truth = generate_phantom(spec)
    fa_by_band = {0: [], 1: []}
    P = 4
    for y in range(spec.shape[1]):
        m = truth.maps.section(y)
        fa = baseline_feature_maps(m, P)[0]
        lab = truth.labels[y][: fa.shape[0] * P, : fa.shape[1] * P]
        blocks = lab.reshape(fa.shape[0], P, fa.shape[1], P).transpose(0, 2, 1, 3).reshape(*fa.shape, -1)
        for b in (0, 1):
            pure = np.all(blocks == b, axis=-1)
            fa_by_band[b] += list(fa[pure])
    assert np.median(fa_by_band[0]) < np.median(fa_by_band[1])
    assert BACKGROUND not in fa_by_band
