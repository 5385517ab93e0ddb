"""Triangle meshes, canonical normalization, part segmentation, and the six
orthographic cameras.

Canonical space is the unit cube [0,1]^3. All downstream stages (rasterization,
coordinate maps, baking, the consistency metric) assume meshes have been run
through :func:`normalize_to_canonical` first.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "TriMesh",
    "Camera",
    "MeshError",
    "load_mesh",
    "save_mesh",
    "normalize_to_canonical",
    "face_adjacency",
    "segment_parts",
    "default_cameras",
]

DEGENERATE_AREA_TOL = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh input or invalid mesh operations."""


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh with optional per-face part labels.

    vertices: (V, 3) float64. faces: (F, 3) int64 vertex indices.
    face_parts: (F,) int64 labels in [1..K], or None if unsegmented.
    Label 0 is reserved for image background and never stored on faces.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_parts: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face references a missing vertex")
        if self.face_parts is not None:
            p = np.ascontiguousarray(np.asarray(self.face_parts, dtype=np.int64))
            object.__setattr__(self, "face_parts", p)
            if p.shape != (len(f),):
                raise MeshError("face_parts length must equal face count")
            if len(p) and p.min() < 1:
                raise MeshError("part labels must be >= 1")
        v.setflags(write=False)
        f.setflags(write=False)
        if self.face_parts is not None:
            self.face_parts.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_corners(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def face_centroids(self) -> np.ndarray:
        return self.face_corners().mean(axis=1)

    def face_normals(self) -> np.ndarray:
        """(F, 3) unit normals from winding; zero vector for degenerate faces."""
        c = self.face_corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.where(norm > 0, n / np.maximum(norm, 1e-300), 0.0)

    def face_areas(self) -> np.ndarray:
        c = self.face_corners()
        return 0.5 * np.linalg.norm(
            np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1
        )


@dataclass(frozen=True)
class Camera:
    """Orthographic camera whose image plane covers the canonical unit cube.

    forward points from the camera into the scene; up is the image's vertical.
    The image maps camera-plane coords [-0.5, 0.5]^2 to `resolution` pixels,
    row 0 at the top.
    """

    view_index: int
    forward: np.ndarray
    up: np.ndarray
    resolution: int

    def __post_init__(self):
        f = np.asarray(self.forward, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        f = f / np.linalg.norm(f)
        u = u / np.linalg.norm(u)
        if abs(float(f @ u)) >= 1e-9:
            raise ValueError("camera forward and up must be orthogonal")
        f.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "forward", f)
        object.__setattr__(self, "up", u)

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.up, self.forward)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project canonical-space points to continuous pixel coords + depth.

        Returns (pix, depth): pix is (..., 2) as (col, row) in pixel units
        (pixel centers at integer + 0.5); depth increases along forward.
        """
        p = np.asarray(points, dtype=np.float64) - 0.5
        x = p @ self.right
        y = p @ self.up
        depth = p @ self.forward
        col = (x + 0.5) * self.resolution
        row = (0.5 - y) * self.resolution
        return np.stack([col, row], axis=-1), depth


def load_mesh(path: str | Path) -> TriMesh:
    """Load a Wavefront OBJ subset (v / f records; polygons fan-triangulated).

    Vertex order is preserved and no normalization is applied.
    """
    path = Path(path)
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as e:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate") from e
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face needs >= 3 vertices")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as e:
                        raise MeshError(f"{path}:{lineno}: bad face index {tok!r}") from e
                    if i > 0:
                        i -= 1
                    elif i < 0:
                        i += len(vertices)
                    else:
                        raise MeshError(f"{path}:{lineno}: OBJ indices are 1-based")
                    if not (0 <= i < len(vertices)):
                        raise MeshError(
                            f"{path}:{lineno}: face references missing vertex {tok}"
                        )
                    idx.append(i)
                # fan triangulation for polygons
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            # vn / vt / usemtl etc. are ignored
    if not vertices or not faces:
        raise MeshError(f"{path}: empty mesh")
    return TriMesh(np.array(vertices), np.array(faces))


def save_mesh(mesh: TriMesh, path: str | Path) -> None:
    """Write mesh as OBJ; part labels go to a `<stem>.parts.json` sidecar."""
    path = Path(path)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    if mesh.face_parts is not None:
        sidecar = path.with_suffix(".parts.json")
        with open(sidecar, "w") as fh:
            json.dump([int(p) for p in mesh.face_parts], fh)


def load_part_sidecar(mesh: TriMesh, obj_path: str | Path) -> TriMesh:
    """Attach part labels from the sidecar written by :func:`save_mesh`."""
    sidecar = Path(obj_path).with_suffix(".parts.json")
    if not sidecar.exists():
        raise MeshError(f"missing part sidecar {sidecar}")
    with open(sidecar) as fh:
        parts = json.load(fh)
    return TriMesh(mesh.vertices, mesh.faces, np.asarray(parts, dtype=np.int64))


def normalize_to_canonical(mesh: TriMesh, margin: float = 0.05) -> TriMesh:
    """Uniformly scale + translate the mesh into [0,1]^3.

    The longest bounding-box axis spans exactly [margin, 1-margin]; shorter
    axes are centered. Aspect ratio is preserved. Idempotent.
    """
    if not (0.0 <= margin < 0.5):
        raise ValueError(f"margin must be in [0, 0.5), got {margin}")
    if mesh.n_faces == 0:
        raise MeshError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0.0:
        raise MeshError("zero-extent mesh (all vertices identical)")
    scale = (1.0 - 2.0 * margin) / longest
    offset = (1.0 - extent * scale) / 2.0
    verts = (mesh.vertices - lo) * scale + offset
    return TriMesh(verts, mesh.faces, mesh.face_parts)


def face_adjacency(mesh: TriMesh) -> list[list[int]]:
    """Adjacency lists over faces sharing an undirected edge.

    Non-manifold edges are allowed; all faces at an edge become neighbors.
    """
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(mesh.faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_faces.setdefault(key, []).append(fi)
    neighbors: list[set[int]] = [set() for _ in range(mesh.n_faces)]
    for group in edge_faces.values():
        for i in group:
            for j in group:
                if i != j:
                    neighbors[i].add(j)
    return [sorted(s) for s in neighbors]


def _farthest_point_seeds(centroids: np.ndarray, k: int, seed: int) -> list[int]:
    """Seeded farthest-point sampling over face centroids.

    The RNG picks the first centroid; each subsequent seed maximizes the
    minimum distance to the chosen set, ties broken by lower face index.
    """
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(centroids)))
    seeds = [first]
    min_dist = np.linalg.norm(centroids - centroids[first], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_dist))  # argmax takes the first max: lower index wins
        seeds.append(nxt)
        d = np.linalg.norm(centroids - centroids[nxt], axis=1)
        min_dist = np.minimum(min_dist, d)
    return seeds


CREASE_WEIGHT = 3.0


def segment_parts(mesh: TriMesh, k: int, seed: int = 0) -> TriMesh:
    """Deterministic geometric segmentation into k connected parts.

    Farthest-point seeding over face centroids followed by multi-source
    region growing on the face-adjacency graph. The frontier is ordered by
    accumulated centroid-to-centroid distance, with each hop scaled up by a
    crease penalty (1 + CREASE_WEIGHT * (1 - cos dihedral)) so growth prefers
    flat neighborhoods over crossing sharp edges; ties break by lower face
    index. Components left without a seed adopt the label of the nearest
    seed as a whole, so every part stays connected within each component.
    """
    if k < 1:
        raise ValueError(f"part count must be >= 1, got {k}")
    if k > mesh.n_faces:
        raise MeshError(f"part count {k} exceeds face count {mesh.n_faces}")
    centroids = mesh.face_centroids()
    normals = mesh.face_normals()
    neighbors = face_adjacency(mesh)
    seeds = _farthest_point_seeds(centroids, k, seed)

    labels = np.zeros(mesh.n_faces, dtype=np.int64)
    heap: list[tuple[float, int, int]] = []
    for label, face in enumerate(seeds, start=1):
        heapq.heappush(heap, (0.0, face, label))

    def grow():
        while heap:
            dist, face, label = heapq.heappop(heap)
            if labels[face] != 0:
                continue
            labels[face] = label
            for nb in neighbors[face]:
                if labels[nb] == 0:
                    hop = float(np.linalg.norm(centroids[nb] - centroids[face]))
                    crease = 1.0 - float(np.clip(normals[face] @ normals[nb], -1.0, 1.0))
                    heapq.heappush(heap, (dist + hop * (1.0 + CREASE_WEIGHT * crease), nb, label))

    grow()

    # Components without a seed: attach each to the nearest seed's label and
    # grow from its closest face so the label stays connected in the component.
    while True:
        unassigned = np.flatnonzero(labels == 0)
        if len(unassigned) == 0:
            break
        d_to_seeds = np.linalg.norm(
            centroids[unassigned][:, None, :] - centroids[seeds][None, :, :], axis=2
        )
        flat = int(np.argmin(d_to_seeds))
        face = int(unassigned[flat // k])
        label = flat % k + 1
        heapq.heappush(heap, (0.0, face, label))
        grow()

    return TriMesh(mesh.vertices, mesh.faces, labels)


# View order and orientation of the six canonical cameras. forward points
# into the scene, so view 0 (+X) looks down -X.
_VIEW_DIRECTIONS: list[tuple[tuple[float, float, float], tuple[float, float, float]]] = [
    ((-1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),  # +X
    ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),   # -X
    ((0.0, -1.0, 0.0), (0.0, 0.0, 1.0)),  # +Y
    ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),   # -Y
    ((0.0, 0.0, -1.0), (0.0, 1.0, 0.0)),  # +Z
    ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0)),   # -Z
]


def default_cameras(resolution: int) -> list[Camera]:
    """The six axis-aligned orthographic cameras, order +X,-X,+Y,-Y,+Z,-Z."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    return [
        Camera(i, np.array(fwd), np.array(up), resolution)
        for i, (fwd, up) in enumerate(_VIEW_DIRECTIONS)
    ]
