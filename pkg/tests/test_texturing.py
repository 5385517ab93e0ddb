import numpy as np
import pytest

from mvtex.geometry import default_cameras, normalize_to_canonical, segment_parts
from mvtex.meshes import box, uv_sphere
from mvtex.render import rasterize, render_textured
from mvtex.texturing import (
    Chart,
    PackingError,
    backproject,
    build_charts,
    depth_tolerance,
    inpaint,
    mv_mse,
)


@pytest.fixture(scope="module")
def sphere():
    return normalize_to_canonical(uv_sphere(10, 14))


@pytest.fixture(scope="module")
def sphere_views(sphere):
    cams = default_cameras(64)
    return cams, [rasterize(sphere, c) for c in cams]


class TestChart:
    def test_texel_membership(self):
        chart = Chart(face=0, u0=2, v0=3, side=4)
        texels = set(chart.texels())
        assert len(texels) == 4 * 5 // 2  # triangular number
        for u, v in texels:
            du, dv = u - 2, v - 3
            assert du >= 0 and dv >= 0 and du + dv <= 3
        assert (2 + 4, 3) not in texels  # du+dv == side excluded

    def test_barycentric_centers(self):
        chart = Chart(0, 0, 0, 2)
        b = chart.barycentric(0, 0)
        assert np.allclose(b, [0.5, 0.25, 0.25])
        assert np.allclose(b.sum(), 1.0)
        for u, v in chart.texels():
            b = chart.barycentric(u, v)
            # diagonal texels touch the hypotenuse, where b0 is exactly 0
            assert (b >= 0).all() and b[1] > 0 and b[2] > 0

    def test_texel_of_inverts_barycentric(self):
        chart = Chart(0, 5, 1, 6)
        for u, v in chart.texels():
            assert chart.texel_of(chart.barycentric(u, v)) == (u, v)

    def test_texel_of_clamps(self):
        chart = Chart(0, 0, 0, 3)
        u, v = chart.texel_of(np.array([-0.5, 1.0, 0.5]))
        assert (u, v) in set(chart.texels())


class TestBuildCharts:
    def test_single_triangle(self):
        mesh = box()
        atlas = build_charts(mesh, 64)
        assert atlas.n_faces == 12
        assert all(c.side >= 1 for c in atlas.charts)

    def test_disjoint_texel_ownership(self):
        """Exhaustive scan: no texel belongs to two charts, gutters respected."""
        atlas = build_charts(box(), 32)
        owner = -np.ones((32, 32), dtype=int)
        for chart in atlas.charts:
            for u, v in chart.texels():
                assert 0 <= u < 32 and 0 <= v < 32
                assert owner[v, u] == -1, f"texel ({u},{v}) double-owned"
                owner[v, u] = chart.face
        # gutter: texels of different charts are never 4-adjacent
        for v in range(32):
            for u in range(31):
                a, b = owner[v, u], owner[v, u + 1]
                if a != -1 and b != -1:
                    assert a == b
        for v in range(31):
            for u in range(32):
                a, b = owner[v, u], owner[v + 1, u]
                if a != -1 and b != -1:
                    assert a == b

    def test_equal_faces_equal_sides(self):
        atlas = build_charts(box(), 64)
        sides = {c.side for c in atlas.charts}
        assert len(sides) == 1  # all cube faces have the same area

    def test_too_small_raises(self):
        mesh = uv_sphere(12, 16)
        with pytest.raises(PackingError):
            build_charts(mesh, 4)

    def test_chart_table_json(self):
        atlas = build_charts(box(), 32)
        table = atlas.chart_table_json()
        assert [row["face"] for row in table] == list(range(12))
        assert all(set(row) == {"face", "u0", "v0", "side"} for row in table)


class TestBackproject:
    def test_uniform_color_single_view(self, sphere, sphere_views):
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        img = np.zeros((64, 64, 3))
        img[:] = [0.1, 0.8, 0.3]
        out = backproject([img], [gbs[0]], [cams[0]], atlas)
        assert out.valid.any()
        assert np.allclose(out.color[out.valid], [0.1, 0.8, 0.3])
        # untouched texels keep zero weight
        assert (out.weight[~out.valid] == 0).all()

    def test_two_views_blend_to_mean_with_p0(self, sphere, sphere_views):
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        red = np.zeros((64, 64, 3)); red[:, :, 0] = 1.0
        blue = np.zeros((64, 64, 3)); blue[:, :, 2] = 1.0
        out = backproject(
            [red, blue], [gbs[0], gbs[1]], [cams[0], cams[1]],
            atlas, weight_exponent=0.0,
        )
        # texels hit by both +X and -X views average to 0.5/0/0.5
        both = out.valid & (out.weight > 1.5)
        if both.any():
            assert np.allclose(out.color[both], [0.5, 0.0, 0.5])
        single = out.valid & (out.weight < 1.5)
        colors = out.color[single]
        assert ((np.allclose(c, [1, 0, 0]) or np.allclose(c, [0, 0, 1])) for c in colors)

    def test_weight_exponent_zero_means_unit_weights(self, sphere, sphere_views):
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        img = np.ones((64, 64, 3)) * 0.5
        out = backproject([img], [gbs[0]], [cams[0]], atlas, weight_exponent=0.0)
        assert np.allclose(out.weight[out.valid], 1.0)

    def test_cosine_weighting_exponent(self, sphere, sphere_views):
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        img = np.ones((64, 64, 3))
        p1 = backproject([img], [gbs[0]], [cams[0]], atlas, weight_exponent=1.0)
        p2 = backproject([img], [gbs[0]], [cams[0]], atlas, weight_exponent=2.0)
        sel = p1.valid & (p1.weight < 0.999) & p2.valid
        assert sel.any()
        # squaring a cosine < 1 strictly lowers the weight
        assert (p2.weight[sel] < p1.weight[sel] + 1e-12).all()
        assert np.allclose(p2.weight[sel], p1.weight[sel] ** 2)

    def test_occluded_texels_stay_invalid(self, sphere):
        cams = default_cameras(64)
        gb = rasterize(sphere, cams[0])
        atlas = build_charts(sphere, 128)
        img = np.ones((64, 64, 3))
        out = backproject([img], [gb], [cams[0]], atlas)
        # back-facing hemisphere cannot be seen from a single view
        assert out.valid.sum() < sum(c.side * (c.side + 1) // 2 for c in atlas.charts)

    def test_mismatched_lists_rejected(self, sphere, sphere_views):
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        with pytest.raises(ValueError):
            backproject([np.ones((64, 64, 3))], gbs[:2], cams[:2], atlas)

    def test_roundtrip_constant_texture(self, sphere, sphere_views):
        """bake -> render_textured -> images match the baked constant."""
        cams, gbs = sphere_views
        atlas = build_charts(sphere, 128)
        img = np.full((64, 64, 3), 0.25)
        out = inpaint(backproject([img] * 6, gbs, cams, atlas))
        rendered = render_textured(sphere, out, cams[2])
        fg = gbs[2].foreground
        assert np.allclose(rendered[fg], 0.25)


class TestInpaint:
    def make_atlas(self, side=6):
        mesh = box()
        atlas = build_charts(mesh, 64)
        return atlas

    def test_fixpoint_when_fully_valid(self):
        atlas = self.make_atlas()
        for chart in atlas.charts:
            for u, v in chart.texels():
                atlas.color[v, u] = [0.3, 0.4, 0.5]
                atlas.valid[v, u] = True
        out = inpaint(atlas)
        assert np.array_equal(out.color, atlas.color)
        assert np.array_equal(out.valid, atlas.valid)

    def test_single_seed_floods_chart_constant(self):
        atlas = self.make_atlas()
        chart = atlas.charts[0]
        u0, v0 = next(iter(chart.texels()))
        atlas.color[v0, u0] = [0.9, 0.1, 0.2]
        atlas.valid[v0, u0] = True
        out = inpaint(atlas)
        for u, v in chart.texels():
            assert out.valid[v, u]
            assert np.allclose(out.color[v, u], [0.9, 0.1, 0.2])
        # other charts stay untouched (no valid seed)
        for u, v in atlas.charts[1].texels():
            assert not out.valid[v, u]

    def test_never_modifies_valid_texels(self):
        rng = np.random.default_rng(0)
        atlas = self.make_atlas()
        seeded = []
        for chart in atlas.charts:
            for u, v in chart.texels():
                if rng.uniform() < 0.4:
                    atlas.color[v, u] = rng.uniform(size=3)
                    atlas.valid[v, u] = True
                    seeded.append((u, v))
        before = atlas.color.copy()
        out = inpaint(atlas)
        for u, v in seeded:
            assert np.array_equal(out.color[v, u], before[v, u])

    def test_does_not_cross_chart_boundaries(self):
        atlas = self.make_atlas()
        chart = atlas.charts[3]
        for u, v in chart.texels():
            atlas.color[v, u] = [1.0, 1.0, 0.0]
            atlas.valid[v, u] = True
        out = inpaint(atlas)
        for other in atlas.charts:
            if other.face == chart.face:
                continue
            for u, v in other.texels():
                assert not out.valid[v, u]

    def test_iteration_cap(self):
        atlas = self.make_atlas()
        chart = max(atlas.charts, key=lambda c: c.side)
        u0, v0 = chart.u0, chart.v0
        atlas.color[v0, u0] = [1.0, 0.0, 0.0]
        atlas.valid[v0, u0] = True
        out = inpaint(atlas, max_iterations=1)
        filled = sum(out.valid[v, u] for u, v in chart.texels())
        assert 1 < filled < chart.side * (chart.side + 1) // 2


class TestMvMse:
    def test_requires_two_views(self, sphere_views):
        cams, gbs = sphere_views
        with pytest.raises(ValueError):
            mv_mse([np.zeros((64, 64, 3))], gbs[:1], cams[:1])

    def test_identical_constant_images_score_zero(self, sphere_views):
        cams, gbs = sphere_views
        imgs = [np.full((64, 64, 3), 0.5) for _ in range(6)]
        assert mv_mse(imgs, gbs, cams) == pytest.approx(0.0, abs=1e-15)

    def test_constant_offset_pair_exact(self, sphere_views):
        """Views colored c and c+delta give pair MSE exactly 3*delta^2."""
        cams, gbs = sphere_views
        delta = 0.2
        a = np.full((64, 64, 3), 0.3)
        b = np.full((64, 64, 3), 0.3 + delta)
        import warnings as _w
        with _w.catch_warnings():
            _w.simplefilter("ignore")
            value, report = mv_mse([a, b, a, a, a, a], gbs, cams, return_report=True)
        for pair in report["pairs"]:
            i, j = pair["views"]
            if sum(pair["overlap"]) == 0:
                continue
            expect = 3 * delta**2 if (i == 1) != (j == 1) else 0.0
            assert pair["mse"] == pytest.approx(expect, abs=1e-12)

    def test_order_invariance(self, sphere_views):
        cams, gbs = sphere_views
        rng = np.random.default_rng(1)
        imgs = [rng.uniform(size=(64, 64, 3)) for _ in range(6)]
        a = mv_mse(imgs, gbs, cams)
        perm = [3, 1, 4, 0, 5, 2]
        b = mv_mse([imgs[p] for p in perm], [gbs[p] for p in perm], [cams[p] for p in perm])
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_overlap_warns_and_excludes(self):
        mesh = normalize_to_canonical(box())
        cams = default_cameras(64)
        gbs = [rasterize(mesh, c) for c in cams]
        imgs = [np.zeros((64, 64, 3)) for _ in range(6)]
        # perpendicular/back-facing cube faces never share surface points
        with pytest.warns(UserWarning, match="no overlap"):
            value, report = mv_mse(imgs, gbs, cams, return_report=True)
        assert report["counted_pairs"] < len(report["pairs"])

    def test_report_totals(self, sphere_views):
        cams, gbs = sphere_views
        rng = np.random.default_rng(2)
        imgs = [rng.uniform(size=(64, 64, 3)) for _ in range(6)]
        value, report = mv_mse(imgs, gbs, cams, return_report=True)
        assert report["total"] == value
        counted = [p["mse"] for p in report["pairs"] if sum(p["overlap"]) > 0]
        assert value == pytest.approx(np.mean(counted))

    def test_depth_tolerance(self):
        assert depth_tolerance(64) == pytest.approx(2 / 64)
        assert depth_tolerance(128) == pytest.approx(1 / 64)
