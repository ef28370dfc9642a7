import numpy as np
import pytest

from pliunfold.featmap import FeatureVolume
from pliunfold.mesh import SurfacePair, grid_faces
from pliunfold.surface import (
    GRAY,
    VertexFeatures,
    build_vertex_features,
    concat_depths,
    cutting_angle,
    graph_smooth,
    interpolate_depths,
    label_palette,
    raster_index,
    rasterize_unfolded,
    sample_at_vertices,
)


def _pair(rng, n_u=4, n_v=5):
    V = n_u * n_v
    inner = rng.uniform(0, 10, size=(V, 3))
    u, v = np.meshgrid(np.linspace(0, 1, n_u), np.linspace(0, 1, n_v), indexing="ij")
    return SurfacePair(inner, inner + rng.uniform(1, 2, size=(V, 3)), grid_faces(n_u, n_v),
                       np.stack([u.ravel(), v.ravel()], 1), np.zeros(V, int))


def test_depth_endpoints_and_midpoint(rng):
    s = _pair(rng)
    two = interpolate_depths(s, 2)
    assert np.array_equal(two[0], s.inner) and np.array_equal(two[1], s.outer)
    three = interpolate_depths(s, 3)
    assert np.allclose(three[1], 0.5 * (s.inner + s.outer), atol=1e-12)
    d17 = interpolate_depths(s, 17)
    assert len(d17) == 17 and np.array_equal(d17[-1], s.outer)
    with pytest.raises(ValueError):
        interpolate_depths(s, 1)


def _vol(values, patch=1, stride=1):
    return FeatureVolume(np.asarray(values, np.float32), patch, stride)


def test_sample_at_node_and_midpoint(rng):
    v = rng.normal(size=(3, 4, 5, 2)).astype(np.float32)
    vol = _vol(v)
    got, miss = sample_at_vertices(vol, np.array([[1.0, 2.0, 3.0], [1.5, 2.0, 3.0], [2.0, 3.0, 4.0]]))
    assert not miss.any()
    assert np.allclose(got[0], v[1, 2, 3])
    assert np.allclose(got[1], 0.5 * (v[1, 2, 3] + v[2, 2, 3]), atol=1e-7)
    assert np.allclose(got[2], v[2, 3, 4])


def test_out_of_bounds_is_missing():
    vol = _vol(np.ones((3, 3, 3, 1)))
    _, miss = sample_at_vertices(vol, np.array([[-0.5, 1, 1], [1, 1, 2.01], [1, 1, 1], [np.nan, 1, 1]]))
    assert list(miss) == [True, True, False, True]


def test_trilinear_reproduces_affine_fields(rng):
    i, y, j = np.meshgrid(np.arange(5), np.arange(4), np.arange(6), indexing="ij")
    a = np.array([0.3, -1.2, 0.7])
    field = np.stack([a[0] * i + a[1] * y + a[2] * j + 2.0, i - j], -1)
    vol = FeatureVolume(field.astype(np.float64), 16, 8)
    pts = rng.uniform([7.5, 0, 7.5], [7.5 + 32, 3, 7.5 + 40], size=(200, 3))
    got, miss = sample_at_vertices(vol, pts)
    g = vol.grid_coordinates(pts)
    assert not miss.any()
    assert np.allclose(got[:, 0], g @ a + 2.0, atol=1e-10)
    assert np.allclose(got[:, 1], g[:, 0] - g[:, 2], atol=1e-10)


def test_concat_depths():
    a = (np.array([[1.0, 2, 3], [4, 5, 6]]), np.array([False, False]))
    b = (np.array([[7.0, 8, 9], [0, 0, 0]]), np.array([False, True]))
    vals, miss = concat_depths([a, b])
    assert vals.shape == (2, 6) and list(vals[0]) == [1, 2, 3, 7, 8, 9]
    assert list(miss) == [False, True]
    with pytest.raises(ValueError):
        concat_depths([a, (np.zeros((2, 2)), b[1])])


def test_full_scale_width():
    vol = _vol(np.zeros((4, 4, 4, 256)))
    s = SurfacePair(np.full((3, 3), 1.0), np.full((3, 3), 2.0), np.array([[0, 1, 2]]),
                    np.zeros((3, 2)), np.zeros(3, int))
    assert build_vertex_features(vol, s, 17).values.shape == (3, 4352)


PATH = np.array([[0, 1], [1, 2]])


def test_smooth_path_graph():
    out = graph_smooth(np.array([[0.0], [3.0], [6.0]]), PATH, iters=1)
    assert np.allclose(out.ravel(), [1.5, 3.0, 4.5])
    out = graph_smooth(np.array([[0.0], [3.0], [6.0]]), PATH, iters=1, include_self=False)
    assert np.allclose(out.ravel(), [3.0, 3.0, 3.0])


def test_smooth_identity_and_constant(rng):
    x = rng.normal(size=(3, 2))
    assert np.array_equal(graph_smooth(x, PATH, iters=0), x)
    c = np.full((3, 2), 4.2)
    assert np.allclose(graph_smooth(c, PATH, iters=5), c)


def test_smooth_missing_rows_excluded():
    x = np.array([[0.0], [3.0], [600.0]])
    out = graph_smooth(x, PATH, iters=1, missing=np.array([False, False, True]))
    assert np.allclose(out.ravel(), [1.5, 1.5, 600.0])


def _cycle(n):
    return np.stack([np.arange(n), (np.arange(n) + 1) % n], 1)


def test_smooth_regular_graph_keeps_mean_and_contracts(rng):
    x = rng.normal(size=(50, 4))
    prev = x.var(axis=0)
    for it in range(1, 6):
        out = graph_smooth(x, _cycle(50), iters=it)
        assert np.allclose(out.mean(axis=0), x.mean(axis=0), atol=1e-6)
        var = out.var(axis=0)
        assert np.all(var <= prev + 1e-12)
        prev = var


def test_cutting_angle_of_planes():
    faces = grid_faces(3, 3)
    u, v = np.meshgrid(np.arange(3.0), np.arange(3.0), indexing="ij")
    uv = np.stack([u.ravel() / 2, v.ravel() / 2], 1)
    flat = np.stack([u.ravel(), np.zeros(9), v.ravel()], 1)  # lies in a section plane
    s = SurfacePair(flat, flat, faces, uv, np.zeros(9, int))
    assert np.allclose(cutting_angle(s), 0.0)
    upright = np.stack([u.ravel(), v.ravel(), np.zeros(9)], 1)  # contains the section axis
    s = SurfacePair(upright, upright, faces, uv, np.zeros(9, int))
    assert np.allclose(cutting_angle(s), 90.0)
    tilted = np.stack([u.ravel(), u.ravel(), v.ravel()], 1)
    s = SurfacePair(tilted, tilted, faces, uv, np.zeros(9, int))
    assert np.allclose(cutting_angle(s), 45.0)
    # anisotropic voxels tilt the physical plane
    assert np.allclose(cutting_angle(s, pixel_um=1.0, section_um=np.sqrt(3)), 60.0)


def test_raster_single_vertex():
    r = rasterize_unfolded(np.array([[10, 20, 30]]), np.array([[0.5, 0.5]]), 5, 5)
    lit = np.argwhere(r.any(axis=2))
    assert lit.tolist() == [[2, 2]]
    assert r[2, 2].tolist() == [10, 20, 30]


def test_raster_empty_and_missing():
    r = rasterize_unfolded(np.zeros((0, 3)), np.zeros((0, 2)), 4, 3, background=(1, 2, 3))
    assert r.shape == (3, 4, 3) and np.all(r == [1, 2, 3])
    r = rasterize_unfolded(np.array([2]), np.array([[0.5, 0.5]]), 3, 3, missing=np.array([True]))
    assert r[1, 1].tolist() == list(GRAY)
    assert np.array_equal(raster_index(np.array([[0.5, 0.5]]), 3, 3)[1], [-1, 0, -1])


def test_phantom_labels_give_horizontal_bands(default_truth):
    s = default_truth.surfaces
    r = rasterize_unfolded(s.labels, s.uv, 64, 128)
    idx = raster_index(s.uv, 64, 128)
    assert np.all(idx >= 0)  # the mesh covers the raster without holes
    lab = s.labels[idx]
    # rows are constant: boundaries run along v = const
    assert np.all(lab == lab[:, :1])
    assert len(np.unique(lab)) == len(default_truth.spec.bands)
    assert np.array_equal(r, label_palette(lab))


def test_vertex_features_roundtrip(tmp_path, rng):
    vf = VertexFeatures(rng.normal(size=(4, 3)), np.array([0, 1, 0, 0], bool), rng.uniform(size=(4, 2)),
                        np.array([0, 1, 2, 3]), rng.uniform(0, 90, 4))
    vf.save(tmp_path / "vf.plt")
    back = VertexFeatures.load(tmp_path / "vf.plt")
    assert np.array_equal(back.values, vf.values)
    assert np.array_equal(back.missing, vf.missing) and np.array_equal(back.labels, vf.labels)
    assert np.allclose(back.uv, vf.uv, atol=0) and np.allclose(back.confound, vf.confound, atol=0)
    assert np.array_equal(vf.present, vf.values[[0, 2, 3]])
