import numpy as np
import pytest

from mvtex.geometry import Camera, TriMesh, default_cameras, segment_parts
from mvtex.render import (
    condition_image,
    default_palette,
    part_color_image,
    rasterize,
    render_textured,
)
from mvtex.texturing import TextureAtlas, build_charts

from conftest import full_quad


def brute_force_coverage(tri_pix: np.ndarray, res: int) -> np.ndarray:
    """Oracle: point-in-triangle at every pixel center via barycentric solve."""
    covered = np.zeros((res, res), dtype=bool)
    a, b, c = tri_pix
    m = np.column_stack([b - a, c - a])
    det = np.linalg.det(m)
    if det == 0:
        return covered
    inv = np.linalg.inv(m)
    for row in range(res):
        for col in range(res):
            p = np.array([col + 0.5, row + 0.5])
            uv = inv @ (p - a)
            if uv[0] >= 0 and uv[1] >= 0 and uv.sum() <= 1:
                covered[row, col] = True
    return covered


class TestRasterize:
    def test_empty_mesh_all_background(self):
        mesh = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        gb = rasterize(mesh, default_cameras(16)[0])
        assert not gb.foreground.any()
        assert (gb.depth == np.inf).all()
        assert (gb.face_id == -1).all()

    def test_background_coherence(self, cube_segmented, cameras64):
        gb = rasterize(cube_segmented, cameras64[2])
        bg = ~gb.foreground
        assert (gb.part_id[bg] == 0).all()
        assert (gb.depth[bg] == np.inf).all()
        assert (gb.face_id[bg] == -1).all()
        fg = gb.foreground
        assert (gb.part_id[fg] > 0).all()
        assert np.isfinite(gb.depth[fg]).all()

    def test_cube_front_face_ccm(self, cube, cameras64):
        gb = rasterize(cube, cameras64[4])  # +Z view sees the z=0.95 face
        center = gb.ccm[32, 32]
        assert center[2] == pytest.approx(0.95)
        assert abs(center[0] - 0.5) < 0.02
        assert abs(center[1] - 0.5) < 0.02
        norm = np.linalg.norm(gb.normal[gb.foreground], axis=1)
        assert np.abs(norm - 1.0).max() < 1e-4

    def test_coverage_matches_bruteforce(self):
        res = 64
        cam = default_cameras(res)[4]
        rng = np.random.default_rng(0)
        for _ in range(25):
            v = rng.uniform(0.05, 0.95, size=(3, 3))
            mesh = TriMesh(v, np.array([[0, 1, 2]]))
            gb = rasterize(mesh, cam)
            tri_pix, _ = cam.project(v)
            expected = brute_force_coverage(tri_pix, res)
            assert np.array_equal(gb.foreground, expected)

    def test_depth_keeps_nearest(self, cameras64):
        near = full_quad(z=0.8)
        far = full_quad(z=0.2)
        mesh = TriMesh(
            np.vstack([near.vertices, far.vertices]),
            np.vstack([near.faces, far.faces + 4]),
        )
        gb = rasterize(mesh, cameras64[4])  # +Z camera: z=0.8 is nearer
        assert np.allclose(gb.ccm[gb.foreground][:, 2], 0.8)
        assert gb.face_id[gb.foreground].max() <= 1

    def test_depth_tie_lower_face_index(self, cameras64):
        quad = full_quad(z=0.5)
        mesh = TriMesh(
            np.vstack([quad.vertices, quad.vertices]),
            np.vstack([quad.faces, quad.faces + 4]),
        )
        gb = rasterize(mesh, cameras64[4])
        assert gb.face_id[gb.foreground].max() <= 1

    def test_mirror_symmetry(self, cube, cameras64):
        # symmetric segmentation: label by dominant |normal| axis
        normals = cube.face_normals()
        labels = np.argmax(np.abs(normals), axis=1) + 1
        mesh = TriMesh(cube.vertices, cube.faces, labels)
        gb_px = rasterize(mesh, cameras64[0])
        gb_nx = rasterize(mesh, cameras64[1])
        assert np.array_equal(gb_px.part_id, gb_nx.part_id[:, ::-1])


class TestConditionImage:
    def test_background_black(self, cube, cameras64):
        gb = rasterize(cube, cameras64[0])
        img = condition_image(gb)
        assert (img[~gb.foreground] == 0).all()

    def test_formula_front_normal(self):
        mesh = full_quad(z=1.0)
        cam = default_cameras(8)[4]
        gb = rasterize(mesh, cam)
        img = condition_image(gb)
        fg = gb.foreground
        # normal (0,0,1) encodes to (0.5,0.5,1.0); average with ccm
        expected = 0.5 * (np.array([0.5, 0.5, 1.0]) + gb.ccm[fg])
        assert np.allclose(img[fg], expected)

    def test_formula_negative_normal(self):
        # plug-in check: normal (0,0,-1), ccm (0,0,0) -> (0.25, 0.25, 0)
        normal = np.array([0.0, 0.0, -1.0])
        ccm = np.zeros(3)
        value = 0.5 * ((0.5 * normal + 0.5) + ccm)
        assert np.allclose(value, [0.25, 0.25, 0.0])

    def test_range(self, sphere, cameras64):
        seg = segment_parts(sphere, 4, seed=0)
        for cam in cameras64:
            img = condition_image(rasterize(seg, cam))
            assert img.min() >= 0.0
            assert img.max() <= 1.0


class TestPartColorImage:
    def test_all_background_black(self):
        mesh = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        gb = rasterize(mesh, default_cameras(8)[0])
        img = part_color_image(gb, default_palette(3))
        assert (img == 0).all()

    def test_two_parts_three_colors(self, cameras64):
        v = np.array([[0.25, 0.25, 0.5], [0.75, 0.25, 0.5], [0.75, 0.75, 0.5], [0.25, 0.75, 0.5]])
        mesh = TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), np.array([1, 2]))
        gb = rasterize(mesh, cameras64[4])
        img = part_color_image(gb, default_palette(2))
        colors = {tuple(c) for c in img.reshape(-1, 3)}
        assert len(colors) == 3
        assert (0.0, 0.0, 0.0) in colors

    def test_same_part_same_color_across_views(self, cube_segmented, cameras64):
        palette = default_palette(6)
        imgs = [
            part_color_image(rasterize(cube_segmented, cam), palette)
            for cam in cameras64[:2]
        ]
        gbs = [rasterize(cube_segmented, cam) for cam in cameras64[:2]]
        for k in range(1, 7):
            for img, gb in zip(imgs, gbs):
                sel = gb.part_id == k
                if sel.any():
                    assert np.allclose(img[sel], palette[k - 1])

    def test_palette_too_small(self, cameras64):
        quad = full_quad(z=0.5)
        mesh = TriMesh(quad.vertices, quad.faces, np.array([1, 5]))
        gb = rasterize(mesh, cameras64[4])
        with pytest.raises(ValueError, match="palette"):
            part_color_image(gb, default_palette(2))

    def test_duplicate_palette_rejected(self, cameras64):
        quad = full_quad(0.5)
        mesh = TriMesh(quad.vertices, quad.faces, np.array([1, 2]))
        gb = rasterize(mesh, cameras64[4])
        with pytest.raises(ValueError, match="distinct"):
            part_color_image(gb, np.array([[1.0, 0, 0], [1.0, 0, 0]]))


class TestRenderTextured:
    def test_uniform_red_atlas(self, sphere, cameras64):
        atlas = build_charts(sphere, 128)
        atlas.color[:] = [1.0, 0.0, 0.0]
        atlas.valid[:] = True
        img = render_textured(sphere, atlas, cameras64[0])
        gb = rasterize(sphere, cameras64[0])
        assert np.allclose(img[gb.foreground], [1.0, 0.0, 0.0])
        assert (img[~gb.foreground] == 0).all()

    def test_empty_mesh_black(self):
        mesh = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        atlas = TextureAtlas(16, mesh, [])
        img = render_textured(mesh, atlas, default_cameras(8)[0])
        assert (img == 0).all()

    def test_chart_mismatch(self, sphere, cube, cameras64):
        atlas = build_charts(cube, 64)
        with pytest.raises(ValueError, match="charts"):
            render_textured(sphere, atlas, cameras64[0])

    def test_checkerboard_quad(self, cameras64):
        # paint the atlas from canonical positions, re-render, compare with
        # the analytic checker at each pixel's surface point
        quad = full_quad(z=0.5)
        atlas = build_charts(quad, 256)

        def checker(points):
            cells = np.floor(np.asarray(points) * 4).astype(int)
            return np.where(
                (cells.sum(axis=-1) % 2)[..., None] == 0, [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]
            )

        corners = quad.face_corners()
        for chart in atlas.charts:
            for u, v in chart.texels():
                point = chart.barycentric(u, v) @ corners[chart.face]
                atlas.color[v, u] = checker(point)
                atlas.valid[v, u] = True
        cam = cameras64[4]
        img = render_textured(quad, atlas, cam)
        gb = rasterize(quad, cam)
        expected = checker(gb.ccm[gb.foreground])
        got = img[gb.foreground]
        match = (np.abs(got - expected).max(axis=1) < 1e-9).mean()
        # nearest-texel sampling only disagrees within a texel of cell borders
        assert match > 0.9
