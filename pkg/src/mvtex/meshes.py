"""Procedural mesh primitives for demos and toy datasets."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh

__all__ = ["box", "uv_sphere", "two_limb_body", "merge"]


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriMesh:
    """Axis-aligned box, 12 triangles, outward-facing winding."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
        ]
    )
    quads = [
        (0, 3, 2, 1),  # z = z0, normal -Z
        (4, 5, 6, 7),  # z = z1, normal +Z
        (0, 1, 5, 4),  # y = y0, normal -Y
        (1, 2, 6, 5),  # x = x1, normal +X
        (2, 3, 7, 6),  # y = y1, normal +Y
        (3, 0, 4, 7),  # x = x0, normal -X
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriMesh(v, np.array(faces))


def uv_sphere(n_lat: int = 12, n_lon: int = 18, center=(0.5, 0.5, 0.5), radius=0.5) -> TriMesh:
    """Latitude/longitude sphere with triangle fans at the poles."""
    cx, cy, cz = center
    verts = [[cx, cy, cz + radius]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            verts.append(
                [
                    cx + radius * np.sin(theta) * np.cos(phi),
                    cy + radius * np.sin(theta) * np.sin(phi),
                    cz + radius * np.cos(theta),
                ]
            )
    verts.append([cx, cy, cz - radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for j in range(n_lon):
        faces.append((south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return TriMesh(np.array(verts), np.array(faces))


def merge(meshes: list[TriMesh]) -> TriMesh:
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def two_limb_body(gap: float = 0.3) -> TriMesh:
    """Torso plus two mirror-symmetric limbs.

    The limbs are geometrically identical boxes offset along Y, the axis a
    cross-view matcher is most likely to confuse; a central torso keeps the
    mesh a single connected silhouette suggestion (components stay
    disjoint, which the segmenter handles).
    """
    torso = box((0.35, 0.4, 0.1), (0.65, 0.6, 1.0))
    left = box((0.3, 0.4 - gap, 0.15), (0.55, 0.6 - gap, 0.9))
    right = box((0.3, 0.4 + gap, 0.15), (0.55, 0.6 + gap, 0.9))
    return merge([torso, left, right])
