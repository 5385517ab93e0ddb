"""Software rasterizer for the geometry condition images.

Pixel-center sampling, no anti-aliasing, flat face normals, nearest-fragment
depth test with ties broken by lower face index. These choices make every
buffer exactly reproducible by a brute-force per-pixel oracle.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, TriMesh

__all__ = [
    "GBuffer",
    "rasterize",
    "condition_image",
    "part_color_image",
    "render_textured",
    "default_palette",
]


@dataclass(frozen=True)
class GBuffer:
    """Per-pixel geometric attributes of one rendered view.

    normal: (R, R, 3) unit face normal or zero on background.
    ccm:    (R, R, 3) canonical-space position in [0,1]^3, zero on background.
    part_id: (R, R) int, 0 = background.
    depth:  (R, R) float, +inf on background.
    face_id: (R, R) int, -1 on background.
    bary:   (R, R, 3) barycentric coords of the visible fragment, zero on bg.
    """

    resolution: int
    normal: np.ndarray
    ccm: np.ndarray
    part_id: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray
    bary: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.part_id > 0


def rasterize(mesh: TriMesh, camera: Camera) -> GBuffer:
    """Render one view of a normalized, segmented mesh into a GBuffer.

    An empty mesh yields an all-background buffer. Unsegmented meshes get
    part_id 1 on every face so background stays distinguishable.
    """
    res = camera.resolution
    normal = np.zeros((res, res, 3))
    ccm = np.zeros((res, res, 3))
    part_id = np.zeros((res, res), dtype=np.int64)
    depth = np.full((res, res), np.inf)
    face_id = np.full((res, res), -1, dtype=np.int64)
    bary = np.zeros((res, res, 3))

    if mesh.n_faces == 0:
        return GBuffer(res, normal, ccm, part_id, depth, face_id, bary)

    corners = mesh.face_corners()               # (F, 3, 3)
    pix, depths = camera.project(corners)       # (F, 3, 2), (F, 3)
    normals = mesh.face_normals()
    parts = (
        mesh.face_parts
        if mesh.face_parts is not None
        else np.ones(mesh.n_faces, dtype=np.int64)
    )

    for f in range(mesh.n_faces):
        p0, p1, p2 = pix[f]
        # signed twice-area in pixel units; zero => degenerate in this view
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if area == 0.0:
            continue
        cmin = max(int(np.floor(min(p0[0], p1[0], p2[0]) - 0.5)), 0)
        cmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]) + 0.5)), res - 1)
        rmin = max(int(np.floor(min(p0[1], p1[1], p2[1]) - 0.5)), 0)
        rmax = min(int(np.ceil(max(p0[1], p1[1], p2[1]) + 0.5)), res - 1)
        if cmin > cmax or rmin > rmax:
            continue
        cols, rows = np.meshgrid(
            np.arange(cmin, cmax + 1), np.arange(rmin, rmax + 1)
        )
        px = cols + 0.5
        py = rows + 0.5

        w0 = (p2[0] - p1[0]) * (py - p1[1]) - (p2[1] - p1[1]) * (px - p1[0])
        w1 = (p0[0] - p2[0]) * (py - p2[1]) - (p0[1] - p2[1]) * (px - p2[0])
        w2 = (p1[0] - p0[0]) * (py - p0[1]) - (p1[1] - p0[1]) * (px - p0[0])
        b0, b1, b2 = w0 / area, w1 / area, w2 / area
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue

        frag_depth = b0 * depths[f, 0] + b1 * depths[f, 1] + b2 * depths[f, 2]
        rr = rows[inside]
        cc = cols[inside]
        closer = frag_depth[inside] < depth[rr, cc]
        rr, cc = rr[closer], cc[closer]
        if len(rr) == 0:
            continue
        bb = np.stack([b0[inside][closer], b1[inside][closer], b2[inside][closer]], axis=-1)
        depth[rr, cc] = frag_depth[inside][closer]
        face_id[rr, cc] = f
        part_id[rr, cc] = parts[f]
        normal[rr, cc] = normals[f]
        ccm[rr, cc] = bb @ corners[f]
        bary[rr, cc] = bb

    ccm = np.clip(ccm, 0.0, 1.0)
    return GBuffer(res, normal, ccm, part_id, depth, face_id, bary)


def condition_image(gbuffer: GBuffer) -> np.ndarray:
    """Average of the encoded normal map (0.5*n + 0.5) and the CCM.

    Background is black. Values stay in [0,1].
    """
    fg = gbuffer.foreground[..., None]
    encoded = 0.5 * gbuffer.normal + 0.5
    img = 0.5 * (encoded + gbuffer.ccm)
    return np.where(fg, img, 0.0)


def default_palette(k: int, seed: int = 0) -> np.ndarray:
    """(k, 3) pairwise-distinct colors in [0,1], deterministic per seed."""
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, 1.0 / max(k, 1))
    hues = (np.arange(k) / max(k, 1) + offset) % 1.0
    values = 0.6 + 0.4 * ((np.arange(k) % 2))  # alternate brightness for near hues
    return np.array(
        [colorsys.hsv_to_rgb(h, 0.85, v) for h, v in zip(hues, values)]
    )


def part_color_image(gbuffer: GBuffer, palette: np.ndarray) -> np.ndarray:
    """Color each pixel by its part id; background black.

    The same palette must be reused across all six views so a part keeps
    one color everywhere.
    """
    palette = np.asarray(palette, dtype=np.float64)
    max_id = int(gbuffer.part_id.max()) if gbuffer.part_id.size else 0
    if max_id > len(palette):
        raise ValueError(f"palette has {len(palette)} colors but part id {max_id} present")
    dists = np.linalg.norm(palette[:, None, :] - palette[None, :, :], axis=-1)
    np.fill_diagonal(dists, np.inf)
    if len(palette) > 1 and dists.min() == 0.0:
        raise ValueError("palette colors must be pairwise distinct")
    table = np.vstack([np.zeros(3), palette])  # index 0 = background
    return table[gbuffer.part_id]


def render_textured(mesh: TriMesh, atlas, camera: Camera) -> np.ndarray:
    """Render the mesh with nearest-texel sampling of a baked atlas."""
    if atlas.n_faces != mesh.n_faces:
        raise ValueError(
            f"atlas charts cover {atlas.n_faces} faces, mesh has {mesh.n_faces}"
        )
    gb = rasterize(mesh, camera)
    img = np.zeros((camera.resolution, camera.resolution, 3))
    fg = gb.foreground
    rows, cols = np.nonzero(fg)
    for r, c in zip(rows, cols):
        f = int(gb.face_id[r, c])
        u, v = atlas.texel_of(f, gb.bary[r, c])
        img[r, c] = atlas.color[v, u]
    return img
