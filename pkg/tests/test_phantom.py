from dataclasses import replace

import numpy as np
import pytest

from pliunfold.mesh import MeshFormatError, read_surface, write_surface
from pliunfold.phantom import (
    BACKGROUND,
    BandAppearance,
    PhantomSpec,
    Spiral,
    band_of,
    disperse,
    generate_phantom,
    render_stack,
    section_center,
)
from pliunfold.signal import derive_maps, fit_profile, rotation_angles


def test_deterministic(small_spec, small_truth):
    again = generate_phantom(small_spec)
    for c in ("transmittance", "direction", "retardation", "inclination"):
        assert np.array_equal(getattr(again.maps, c), getattr(small_truth.maps, c))
    assert np.array_equal(again.labels, small_truth.labels)
    assert np.array_equal(again.surfaces.inner, small_truth.surfaces.inner)


def test_other_seed_differs(small_spec, small_truth):
    other = generate_phantom(small_spec.with_seed(4))
    assert not np.array_equal(other.maps.transmittance, small_truth.maps.transmittance)


def test_vertex_label_proportions(default_truth):
    counts = np.bincount(default_truth.vertex_labels, minlength=6) / default_truth.surfaces.n_vertices
    assert np.all(np.abs(counts - 1 / 6) < 0.02)


def test_vertex_label_is_band_of_v(default_truth):
    s = default_truth.surfaces
    assert np.array_equal(s.labels, band_of(s.uv[:, 1], default_truth.spec.edges()))


def test_uv_unique_and_in_unit_square(default_truth):
    uv = default_truth.surfaces.uv
    assert len(np.unique(uv, axis=0)) == len(uv)
    assert uv.min() >= 0 and uv.max() <= 1


def test_surfaces_bracket_layer(default_truth):
    s = default_truth.surfaces
    assert s.inner.shape == s.outer.shape
    lab = default_truth.labels
    # interior points of the inner-to-outer segments fall inside the layer
    for t in (0.25, 0.5, 0.75):
        p = np.rint(s.inner + t * (s.outer - s.inner)).astype(int)
        hit = lab[p[:, 1], p[:, 0], p[:, 2]]
        assert np.mean(hit != BACKGROUND) > 0.97


def test_delta_dispersion_gives_band_mean(small_spec):
    bands = tuple(replace(b, kappa=np.inf) for b in small_spec.bands)
    spec = replace(small_spec, bands=bands)
    truth = generate_phantom(spec)
    spiral = Spiral(*spec.radius_range, spec.turns)
    y = 2
    lab = truth.labels[y]
    xs, zs = np.nonzero(lab != BACKGROUND)
    rel = np.stack([xs, zs], 1) - section_center(spec, float(y))
    # nearest dense spiral point gives the local tangent
    d = np.linalg.norm(rel[:, None, :] - spiral.point(spiral._theta[::5])[None], axis=2)
    theta = spiral._theta[::5][np.argmin(d, axis=1)]
    t = spiral.tangent(theta)
    tangent = np.rad2deg(np.arctan2(t[:, 1], t[:, 0]))
    b = lab[xs, zs]
    offs = np.array([bb.direction_offset for bb in bands])[b]
    incl = np.array([bb.inclination for bb in bands])[b]
    assert np.allclose(truth.maps.inclination[y, xs, zs], incl, atol=1e-9)
    diff = (truth.maps.direction[y, xs, zs] - (tangent + offs)) % 180
    diff = np.minimum(diff, 180 - diff)
    assert np.max(diff) < 1.0  # dense-sampling resolution of the tangent


def test_disperse_statistics(rng):
    v = np.tile([0.0, 0.0, 1.0], (20000, 1))
    out = disperse(v, 25.0, rng)
    assert np.allclose(np.linalg.norm(out, axis=1), 1)
    ang = np.arccos(np.clip(out[:, 2], -1, 1))
    # rotation angle magnitude ~ |N(0, 1/sqrt(kappa))|
    assert np.sqrt(np.mean(ang**2)) == pytest.approx(0.2, rel=0.03)
    assert np.array_equal(disperse(v, np.inf, rng), v)


def test_background_values(small_truth):
    bg = small_truth.labels == BACKGROUND
    assert np.all(small_truth.maps.retardation[bg] == 0)
    assert np.all(small_truth.maps.inclination[bg] == 90)
    assert small_truth.maps.transmittance[bg].mean() > small_truth.maps.transmittance[~bg].mean() + 30


def rel_err(a, b, floor):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


def test_noise_free_round_trip(small_truth):
    Y = small_truth.maps.shape[0]
    for y in range(Y):
        m = derive_maps(render_stack(small_truth, y, 18, 0.0))
        t = small_truth.maps.section(y)
        assert rel_err(m.transmittance, t.transmittance, 1e-12) < 1e-6
        assert rel_err(m.retardation, t.retardation, 1e-3) < 1e-6
        dphi = np.abs(m.direction - t.direction) % 180
        dphi = np.minimum(dphi, 180 - dphi)
        assert np.max(dphi / np.maximum(t.direction, 1.0)) < 1e-6
        assert rel_err(m.inclination, t.inclination, 1.0) < 1e-6


def test_out_of_plane_region_has_flat_profiles(small_truth):
    stack = render_stack(small_truth, 1, 18, 0.0)
    flat = small_truth.maps.inclination[1] == 90
    assert flat.any()
    assert np.allclose(stack[:, flat], stack[0, flat][None], rtol=1e-12, atol=1e-12)


def test_direction_error_shrinks_with_noise(default_truth):
    y = 30
    layer = np.argwhere(default_truth.labels[y] != BACKGROUND)
    rng = np.random.default_rng(0)
    pick = layer[rng.choice(len(layer), 1000, replace=False)]
    true_phi = default_truth.maps.direction[y][pick[:, 0], pick[:, 1]]
    ang = rotation_angles(18)
    rms = []
    for sd in (4, 2, 1, 0.5):
        st = render_stack(default_truth, y, 18, sd, np.random.default_rng(1))
        f = fit_profile(st[:, pick[:, 0], pick[:, 1]], ang)
        d = np.abs(f.direction - true_phi) % 180
        rms.append(np.sqrt(np.mean(np.minimum(d, 180 - d) ** 2)))
    assert all(a > b for a, b in zip(rms, rms[1:]))


def test_render_errors(small_truth):
    with pytest.raises(IndexError):
        render_stack(small_truth, 99)
    with pytest.raises(ValueError):
        render_stack(small_truth, 0, n_angles=2)


def test_render_clamps_at_zero(small_truth):
    st = render_stack(small_truth, 0, 18, 200.0)
    assert st.min() >= 0


def test_spec_validation():
    with pytest.raises(ValueError, match="fit"):
        PhantomSpec(radius_range=(25, 95)).validate()
    with pytest.raises(ValueError):
        PhantomSpec(bands=(BandAppearance(0, 0, 1, 50, 1),)).validate()
    with pytest.raises(ValueError):
        PhantomSpec(band_edges=(0, 0.5, 0.4, 0.6, 0.8, 0.9, 1.0)).validate()


def test_surface_file_round_trip(tmp_path, small_truth):
    p = tmp_path / "s.plsurf"
    write_surface(small_truth.surfaces, p)
    lines = p.read_text().splitlines()
    n = small_truth.surfaces.n_vertices
    assert lines[0] == "PLISURF 1" and lines[1] == str(n)
    assert lines[2].startswith("v ") and lines[2 + 2 * n].startswith("f ")
    back = read_surface(p)
    s = small_truth.surfaces
    for a in ("inner", "outer", "faces", "uv", "labels"):
        assert np.array_equal(getattr(back, a), getattr(s, a))


def test_surface_file_errors(tmp_path):
    p = tmp_path / "bad.plsurf"
    p.write_text("PLISURF 2\n0\n")
    with pytest.raises(MeshFormatError):
        read_surface(p)
    p.write_text("PLISURF 1\n2\nv 0 0 0 0 0 0\n")
    with pytest.raises(MeshFormatError):
        read_surface(p)
