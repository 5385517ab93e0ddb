"""Texture atlas baking, inpainting, and the cross-view consistency metric.

Charts are trivial per-triangle right triangles packed on shelves with a
one-texel gutter, so no external UV unwrapping is needed. Baking projects
each texel's surface point into every view, keeps depth-agreeing hits, and
averages colors with a view-angle weight. The consistency metric (MV-MSE)
averages squared color differences over pixel pairs in different views that
observe the same canonical-space surface point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, TriMesh
from .render import GBuffer

__all__ = [
    "Chart",
    "TextureAtlas",
    "PackingError",
    "build_charts",
    "backproject",
    "inpaint",
    "mv_mse",
]

# depth agreement tolerance in canonical units, scaled by image resolution
def depth_tolerance(resolution: int) -> float:
    return 2.0 / resolution


class PackingError(ValueError):
    """Raised when charts do not fit into the requested atlas resolution."""


@dataclass(frozen=True)
class Chart:
    """Axis-aligned right-triangle chart for one face.

    Texel (u0+du, v0+dv) belongs to the chart iff du,dv >= 0 and
    du+dv <= side-1; its barycentric coords are
    b1=(du+0.5)/side, b2=(dv+0.5)/side, b0=1-b1-b2 w.r.t. the face corners.
    """

    face: int
    u0: int
    v0: int
    side: int

    def texels(self):
        for dv in range(self.side):
            for du in range(self.side - dv):
                yield self.u0 + du, self.v0 + dv

    def barycentric(self, u: int, v: int) -> np.ndarray:
        b1 = (u - self.u0 + 0.5) / self.side
        b2 = (v - self.v0 + 0.5) / self.side
        return np.array([1.0 - b1 - b2, b1, b2])

    def texel_of(self, bary: np.ndarray) -> tuple[int, int]:
        """Nearest texel for barycentric coords (clamped into the chart)."""
        du = int(bary[1] * self.side)
        dv = int(bary[2] * self.side)
        du = min(max(du, 0), self.side - 1)
        dv = min(max(dv, 0), self.side - 1 - du)
        return self.u0 + du, self.v0 + dv


class TextureAtlas:
    """Per-texel color/weight/validity plus the face -> chart table."""

    def __init__(self, resolution: int, mesh: TriMesh, charts: list[Chart]):
        self.resolution = resolution
        self.mesh = mesh
        self.charts = charts
        self.color = np.zeros((resolution, resolution, 3))
        self.weight = np.zeros((resolution, resolution))
        self.valid = np.zeros((resolution, resolution), dtype=bool)

    @property
    def n_faces(self) -> int:
        return len(self.charts)

    def texel_of(self, face: int, bary: np.ndarray) -> tuple[int, int]:
        return self.charts[face].texel_of(bary)

    def chart_table_json(self) -> list[dict]:
        return [
            {"face": c.face, "u0": c.u0, "v0": c.v0, "side": c.side}
            for c in self.charts
        ]

    def copy(self) -> "TextureAtlas":
        out = TextureAtlas(self.resolution, self.mesh, self.charts)
        out.color = self.color.copy()
        out.weight = self.weight.copy()
        out.valid = self.valid.copy()
        return out


def build_charts(mesh: TriMesh, resolution: int) -> TextureAtlas:
    """Pack one right-triangle chart per face, shelf order by face index.

    Chart side scales with sqrt(face area) (minimum 1 texel); a one-texel
    gutter separates charts. Raises PackingError when the atlas is too small.
    """
    if mesh.n_faces == 0:
        raise ValueError("cannot build charts for an empty mesh")
    areas = mesh.face_areas()
    # total packed area ~ sum(cell^2)/2; aim to fill about half the atlas
    budget = 0.55 * resolution * resolution / max(len(areas), 1)
    ref = np.sqrt(np.maximum(areas, 1e-12) / np.maximum(areas.mean(), 1e-12))
    sides = np.maximum(1, np.floor(np.sqrt(budget) * ref * 0.7).astype(int))
    sides = np.minimum(sides, max(resolution - 2, 1))

    while True:
        charts = _try_pack(sides, resolution)
        if charts is not None:
            break
        if sides.max() == 1:
            raise PackingError(
                f"cannot pack {mesh.n_faces} charts into a {resolution}^2 atlas"
            )
        sides = np.maximum(1, sides - np.maximum(sides // 4, 1))
    return TextureAtlas(resolution, mesh, charts)


def _try_pack(sides: np.ndarray, resolution: int) -> list[Chart] | None:
    charts = []
    x = y = shelf_h = 0
    for face, s in enumerate(sides):
        cell = int(s) + 1  # +1 texel gutter
        if x + cell > resolution:
            x = 0
            y += shelf_h
            shelf_h = 0
        if y + cell > resolution or cell > resolution:
            return None
        charts.append(Chart(face, x, y, int(s)))
        shelf_h = max(shelf_h, cell)
        x += cell
    return charts


def backproject(
    images: list[np.ndarray],
    gbuffers: list[GBuffer],
    cameras: list[Camera],
    atlas: TextureAtlas,
    weight_exponent: float = 2.0,
) -> TextureAtlas:
    """Bake view images into the atlas with visibility-tested blending.

    For each chart texel, its canonical surface point is projected into every
    view; hits whose rasterized depth agrees within the tolerance accumulate
    the image color with weight max(0, cos theta)^p (theta between the face
    normal and the direction toward the camera). Accumulation runs in view
    order; fully occluded texels stay invalid.
    """
    if not (len(images) == len(gbuffers) == len(cameras)):
        raise ValueError("images, gbuffers, cameras must align")
    out = atlas.copy()
    mesh = atlas.mesh
    corners = mesh.face_corners()
    normals = mesh.face_normals()
    res_img = gbuffers[0].resolution
    tol = depth_tolerance(res_img)

    for chart in out.charts:
        tri = corners[chart.face]
        n = normals[chart.face]
        for u, v in chart.texels():
            bary = chart.barycentric(u, v)
            point = bary @ tri
            accum = np.zeros(3)
            total_w = 0.0
            for img, gb, cam in zip(images, gbuffers, cameras):
                pix, depth = cam.project(point)
                col = int(np.floor(pix[0]))
                row = int(np.floor(pix[1]))
                if not (0 <= row < res_img and 0 <= col < res_img):
                    continue
                if not gb.foreground[row, col]:
                    continue
                if abs(gb.depth[row, col] - depth) > tol:
                    continue
                cos = float(n @ -cam.forward)
                if weight_exponent == 0.0:
                    w = 1.0
                else:
                    w = max(0.0, cos) ** weight_exponent
                if w <= 0.0:
                    continue
                accum += w * img[row, col]
                total_w += w
            if total_w > 0.0:
                out.color[v, u] = accum / total_w
                out.weight[v, u] = total_w
                out.valid[v, u] = True
    return out


def inpaint(atlas: TextureAtlas, max_iterations: int | None = None) -> TextureAtlas:
    """Fill invalid chart texels by iterative within-chart dilation.

    Each invalid texel with at least one valid 8-neighbor inside its own
    chart takes the mean of those neighbors; sweeps are synchronous (all
    updates read the previous iteration), repeated until the chart is fully
    valid or the iteration cap (atlas resolution) is hit. Valid texels are
    never modified.
    """
    out = atlas.copy()
    cap = max_iterations if max_iterations is not None else atlas.resolution
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    for chart in out.charts:
        texels = list(chart.texels())
        members = set(texels)
        for _ in range(cap):
            invalid = [t for t in texels if not out.valid[t[1], t[0]]]
            if not invalid:
                break
            updates = []
            for u, v in invalid:
                acc = np.zeros(3)
                cnt = 0
                for du, dv in offsets:
                    nu, nv = u + du, v + dv
                    if (nu, nv) in members and out.valid[nv, nu]:
                        acc += out.color[nv, nu]
                        cnt += 1
                if cnt:
                    updates.append((u, v, acc / cnt))
            if not updates:
                break
            for u, v, color in updates:
                out.color[v, u] = color
                out.valid[v, u] = True
    return out


def _directional_mse(
    img_i: np.ndarray,
    img_j: np.ndarray,
    gb_i: GBuffer,
    gb_j: GBuffer,
    cam_j: Camera,
    tol: float,
) -> tuple[float, int]:
    """Mean squared color error over view i pixels visible in view j."""
    res = gb_j.resolution
    rows, cols = np.nonzero(gb_i.foreground)
    if len(rows) == 0:
        return 0.0, 0
    points = gb_i.ccm[rows, cols]
    pix, depth = cam_j.project(points)
    cj = np.floor(pix[:, 0]).astype(int)
    rj = np.floor(pix[:, 1]).astype(int)
    ok = (cj >= 0) & (cj < res) & (rj >= 0) & (rj < res)
    rows, cols, cj, rj, depth = rows[ok], cols[ok], cj[ok], rj[ok], depth[ok]
    ok = gb_j.foreground[rj, cj]
    rows, cols, cj, rj, depth = rows[ok], cols[ok], cj[ok], rj[ok], depth[ok]
    ok = np.abs(gb_j.depth[rj, cj] - depth) <= tol
    rows, cols, cj, rj = rows[ok], cols[ok], cj[ok], rj[ok]
    if len(rows) == 0:
        return 0.0, 0
    diff = img_i[rows, cols] - img_j[rj, cj]
    return float((diff * diff).sum(axis=1).mean()), len(rows)


def mv_mse(
    images: list[np.ndarray],
    gbuffers: list[GBuffer],
    cameras: list[Camera],
    return_report: bool = False,
):
    """Cross-view consistency: mean per-pair MSE over shared surface points.

    Each unordered view pair contributes the average of its two directional
    terms (i -> j and j -> i), computed over pixels whose canonical surface
    point projects onto a depth-agreeing foreground pixel of the other view.
    Pairs with no overlap in either direction are excluded from the average
    (with a warning); squared L2 color distance over RGB in [0,1].
    """
    n = len(images)
    if n < 2:
        raise ValueError("mv_mse needs at least 2 views")
    if not (len(gbuffers) == len(cameras) == n):
        raise ValueError("images, gbuffers, cameras must align")
    tol = depth_tolerance(gbuffers[0].resolution)

    pair_reports = []
    total = 0.0
    counted = 0
    for i in range(n):
        for j in range(i + 1, n):
            mse_ij, n_ij = _directional_mse(
                images[i], images[j], gbuffers[i], gbuffers[j], cameras[j], tol
            )
            mse_ji, n_ji = _directional_mse(
                images[j], images[i], gbuffers[j], gbuffers[i], cameras[i], tol
            )
            terms = [m for m, c in ((mse_ij, n_ij), (mse_ji, n_ji)) if c > 0]
            if terms:
                pair = float(np.mean(terms))
                total += pair
                counted += 1
            else:
                pair = 0.0
                warnings.warn(f"views {i} and {j} share no overlap", stacklevel=2)
            pair_reports.append(
                {"views": [i, j], "mse": pair, "overlap": [n_ij, n_ji]}
            )
    value = total / counted if counted else 0.0
    if return_report:
        return value, {"total": value, "pairs": pair_reports, "counted_pairs": counted}
    return value
