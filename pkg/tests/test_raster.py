import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relitanim import raster
from relitanim.face import Mesh, PoseParams, build_model, forward, icosphere, vertex_normals
from relitanim.io import read_depth, read_ppm, write_depth, write_mask_png, write_png, write_ppm
from relitanim.raster import Camera, project, rasterize_mesh, render_shading_hints
from relitanim.sh import SHCoefficients, estimate_sh, relative_error, sh_basis_batch

compiled = pytest.mark.skipif(raster._raster_ext is None, reason="compiled kernel not built")


def sphere_mesh(m):
    v, f = icosphere(m)
    n, _ = vertex_normals(v, f)
    return Mesh(v, f, n, [])


def dc_light(level=1.5):
    c = np.zeros((9, 3))
    c[0] = level
    return SHCoefficients(c)


def test_project_examples():
    pixel, depth = project(Camera(1.0), [3, 4, 5])
    assert np.array_equal(pixel, [3, 4]) and depth == -5
    p2, _ = project(Camera(2.0), [3, 4, 5])
    assert np.array_equal(p2, 2 * pixel)
    pa, da = project(Camera(3.0, (1, 2)), [0.5, -1, 0])
    pb, db = project(Camera(3.0, (1, 2)), [0.5, -1, 1])
    assert np.array_equal(pa, pb) and da - db == 1


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0)


def two_triangles(depth_a, depth_b):
    # triangle A covers the top-left, B the full square; both front facing
    v = np.array([
        [2, 2, -depth_a], [14, 2, -depth_a], [2, 14, -depth_a],
        [1, 1, -depth_b], [15, 1, -depth_b], [1, 15, -depth_b],
    ], float)
    f = np.array([[0, 1, 2], [3, 4, 5]])
    return v, f


@pytest.mark.parametrize("near_first", [True, False])
def test_overlap_takes_nearer_triangle(near_first):
    v, f = two_triangles(1.0, 2.0) if near_first else two_triangles(2.0, 1.0)
    n = np.zeros_like(v)
    n[:3] = [0, 0, 1]
    n[3:] = [1, 0, 0]
    c = np.zeros((9, 3))
    c[0], c[3] = 1.0, 0.8  # x-light: normal (1,0,0) is brighter than (0,0,1)
    frame = render_shading_hints(Mesh(v, f, n, []), Camera(1.0), SHCoefficients(c), (16, 16))
    _, tri, _ = rasterize_mesh(Mesh(v, f, n, []), Camera(1.0), (16, 16))
    both = tri >= 0
    a_cells = np.zeros((16, 16), bool)
    # pixel centers strictly inside triangle A
    for y in range(16):
        for x in range(16):
            px, py = x + 0.5, y + 0.5
            a_cells[y, x] = px > 2 and py > 2 and px + py < 16
    expected_tri = 0 if near_first else 1
    assert np.all(tri[a_cells] == expected_tri)
    expected_color = c[0] * 0.2820948 + (c[3] * 0.4886025 if not near_first else 0)
    assert np.allclose(frame.image[a_cells], np.clip(expected_color, 0, 1), atol=1e-6)
    assert both.sum() > a_cells.sum()


def test_equal_depth_ties_take_lower_index():
    v, f = two_triangles(1.0, 1.0)
    mesh = Mesh(v, f, np.tile([0, 0, 1.0], (6, 1)), [])
    _, tri, _ = rasterize_mesh(mesh, Camera(1.0), (16, 16))
    _, tri_swapped, _ = rasterize_mesh(Mesh(v, f[::-1], mesh.normals, []), Camera(1.0), (16, 16))
    assert tri[6, 6] == 0 and tri_swapped[6, 6] == 0


def test_back_faces_culled():
    v, f = two_triangles(1.0, 2.0)
    mesh = Mesh(v, f[:, ::-1].copy(), np.tile([0, 0, 1.0], (6, 1)), [])
    frame = render_shading_hints(mesh, Camera(1.0), dc_light(), (16, 16))
    assert not frame.mask.any()


def test_dc_lighting_is_constant():
    frame = render_shading_hints(sphere_mesh(642), Camera.framing(64), dc_light(2.0), (64, 64))
    colors = frame.image[frame.mask]
    assert len(colors) > 500
    assert np.ptp(colors, axis=0).max() <= 1 / 255


def test_render_estimate_roundtrip_band1():
    c = np.zeros((9, 3))
    c[0] = [1.6, 1.7, 1.5]
    c[2] = [0.5, 0.3, 0.4]  # band-1 z term
    light = SHCoefficients(c)
    frame = render_shading_hints(sphere_mesh(642), Camera.framing(96), light, (96, 96))
    n, obs = frame.normals[frame.mask], frame.image[frame.mask]
    assert obs.max() < 1 and obs.min() > 0
    est = estimate_sh(n, obs)
    assert relative_error(est.light, light) <= 1e-2


def test_mask_is_finite_depth_and_support():
    mesh = forward(build_model(162, 3, 2, seed=1), np.full(3, 0.5), PoseParams([0.3, -0.2, 0.1], [0.1, 0, 0]), np.ones(2))
    frame = render_shading_hints(mesh, Camera.framing(64), dc_light(), (64, 64))
    assert np.array_equal(frame.mask, np.isfinite(frame.depth))
    assert np.all(frame.image[~frame.mask] == 0)
    assert frame.image.min() >= 0 and frame.image.max() <= 1


def test_empty_mesh():
    mesh = Mesh(np.zeros((0, 3)), np.zeros((0, 3), int), np.zeros((0, 3)), [])
    frame = render_shading_hints(mesh, Camera(1.0), dc_light(), (16, 16))
    assert not frame.mask.any() and np.all(frame.image == 0)


def test_resolution_too_small():
    with pytest.raises(ValueError):
        render_shading_hints(sphere_mesh(12), Camera(4.0, (8, 8)), dc_light(), (8, 8))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_face_permutation_invariance(seed):
    mesh = sphere_mesh(162)
    perm = np.random.default_rng(seed).permutation(len(mesh.faces))
    c = np.random.default_rng(seed).uniform(0, 0.3, (9, 3))
    c[0] = 1.5
    cam = Camera.framing(48)
    a = render_shading_hints(mesh, cam, SHCoefficients(c), (48, 48))
    b = render_shading_hints(Mesh(mesh.vertices, mesh.faces[perm], mesh.normals, []), cam, SHCoefficients(c), (48, 48))
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.depth, b.depth)


@settings(max_examples=15, deadline=None)
@given(dx=st.integers(-8, 8), dy=st.integers(-8, 8))
def test_integer_center_shift(dx, dy):
    mesh = sphere_mesh(162)
    c = np.zeros((9, 3))
    c[0], c[1] = 1.5, 0.3
    light = SHCoefficients(c)
    a = render_shading_hints(mesh, Camera(14.3, (32.2, 31.7)), light, (64, 64))
    b = render_shading_hints(mesh, Camera(14.3, (32.2 + dx, 31.7 + dy)), light, (64, 64))
    shifted = np.roll(a.image, (dy, dx), axis=(0, 1))
    assert np.array_equal(shifted, b.image)
    assert np.array_equal(np.roll(a.mask, (dy, dx), axis=(0, 1)), b.mask)


def test_deterministic():
    mesh = sphere_mesh(642)
    a = render_shading_hints(mesh, Camera.framing(64), dc_light(), (64, 64))
    b = render_shading_hints(mesh, Camera.framing(64), dc_light(), (64, 64))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.depth, b.depth)


@compiled
@pytest.mark.parametrize("m,res", [(162, 64), (2562, 128)])
def test_backends_bit_identical(m, res):
    mesh = forward(build_model(m, 3, 2, seed=2), np.full(3, 1.0), PoseParams([0.2, 0.4, -0.1], [0.05, -0.1, 0]), -np.ones(2))
    cam = Camera.framing(res)
    for a, b in zip(rasterize_mesh(mesh, cam, (res, res), "compiled"), rasterize_mesh(mesh, cam, (res, res), "python")):
        assert a.dtype == b.dtype and np.array_equal(a, b)


def test_unknown_backend():
    with pytest.raises(ValueError):
        raster.get_kernel("gpu")


def test_image_io(tmp_path):
    from PIL import Image

    frame = render_shading_hints(sphere_mesh(162), Camera.framing(32), dc_light(3.0), (32, 32))
    write_ppm(tmp_path / "a.ppm", frame.image)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == (32, 32, 3) and back.dtype == np.uint8
    assert np.array_equal(back, np.round(frame.image * 255).astype(np.uint8))
    write_png(tmp_path / "a.png", frame.image)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), back)
    write_mask_png(tmp_path / "m.png", frame.mask)
    m = np.asarray(Image.open(tmp_path / "m.png"))
    assert m.ndim == 2 and set(np.unique(m)) <= {0, 255}
    assert np.array_equal(m == 255, frame.mask)
    write_depth(tmp_path / "d.f32", frame.depth)
    d = read_depth(tmp_path / "d.f32")
    assert np.array_equal(d, frame.depth.astype(np.float32))
