"""Fixed simplicial background mesh of the unit square.

The mesh is a deterministic criss-cross triangulation of an n-by-n grid:
each square cell is split along one diagonal, with the diagonal direction
alternating in a checkerboard pattern.  Vertex, triangle and facet indices
are stable for a given target resolution, so parameter sweeps that depend
on interface/cut positions are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError


@dataclass
class BackgroundMesh:
    vertices: np.ndarray       # (nv, 2) float
    triangles: np.ndarray      # (nt, 3) int, positively oriented
    facets: np.ndarray         # (ne, 2) int, each row sorted (v0 < v1)
    facet_tris: np.ndarray     # (ne, 2) int, second entry -1 on the boundary
    tri_facets: np.ndarray     # (nt, 3) int, facet index opposite local vertex order
    h_max: float
    h_target: float
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    def is_boundary_facet(self, f: int) -> bool:
        return self.facet_tris[f, 1] < 0

    @property
    def boundary_vertices(self) -> np.ndarray:
        """Boolean mask of vertices lying on a boundary facet."""
        if "boundary_vertices" not in self.cache:
            mask = np.zeros(self.n_vertices, dtype=bool)
            on_bdry = self.facet_tris[:, 1] < 0
            mask[self.facets[on_bdry].ravel()] = True
            self.cache["boundary_vertices"] = mask
        return self.cache["boundary_vertices"]

    def tri_coords(self, t) -> np.ndarray:
        """Vertex coordinates of triangle(s) t, shape (..., 3, 2)."""
        return self.vertices[self.triangles[t]]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_structured_mesh(h_target: float) -> BackgroundMesh:
    """Criss-cross triangulation of [0,1]^2 with cell size <= h_target.

    Raises MeshError for non-positive h_target; h_target > 0.5 still uses at
    least a 2x2 grid only when needed (a single cell pair for h_target = 1).
    """
    if not (h_target > 0.0):
        raise MeshError(f"h_target must be positive, got {h_target}")
    if h_target > 1.0:
        raise MeshError(f"h_target must be <= 1, got {h_target}")
    n = int(math.ceil(1.0 / h_target - 1e-12))

    xs = np.linspace(0.0, 1.0, n + 1)
    xv, yv = np.meshgrid(xs, xs, indexing="xy")
    # row-major numbering: vertex (i, j) -> j*(n+1) + i, coordinates (i/n, j/n)
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = np.empty((2 * n * n, 3), dtype=np.int32)
    k = 0
    for j in range(n):
        for i in range(n):
            bl, br = vid(i, j), vid(i + 1, j)
            tl, tr = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris[k] = (bl, br, tr)
                tris[k + 1] = (bl, tr, tl)
            else:
                tris[k] = (bl, br, tl)
                tris[k + 1] = (br, tr, tl)
            k += 2

    mesh = _finalize(vertices, tris, h_target)
    _validate(mesh)
    return mesh


def _finalize(vertices, triangles, h_target) -> BackgroundMesh:
    """Build facet tables and h_max from raw vertex/triangle arrays."""
    triangles = np.asarray(triangles, dtype=np.int32)
    vertices = np.asarray(vertices, dtype=np.float64)
    nt = len(triangles)

    # facet (a,b) with a < b, local facet e is opposite local vertex e
    loc = [(1, 2), (2, 0), (0, 1)]
    raw = np.concatenate([triangles[:, loc[e]] for e in range(3)])
    raw.sort(axis=1)
    facets, inverse = np.unique(raw, axis=0, return_inverse=True)
    tri_facets = inverse.reshape(3, nt).T.astype(np.int32)

    ne = len(facets)
    facet_tris = np.full((ne, 2), -1, dtype=np.int32)
    for t in range(nt):
        for e in range(3):
            f = tri_facets[t, e]
            if facet_tris[f, 0] < 0:
                facet_tris[f, 0] = t
            elif facet_tris[f, 1] < 0:
                facet_tris[f, 1] = t
            else:
                raise MeshError(f"facet {f} shared by more than two triangles")

    p = vertices[triangles]
    edge_len = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
    ])
    h_max = float(edge_len.max())

    return BackgroundMesh(vertices, triangles, facets.astype(np.int32),
                          facet_tris, tri_facets, h_max, float(h_target))


def _validate(mesh: BackgroundMesh) -> None:
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise MeshError("mesh contains non-positively oriented triangles")
    p = mesh.vertices[mesh.triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    s = 0.5 * (a + b + c)
    circum = a * b * c / (4.0 * areas)
    inrad = areas / s
    if np.max(circum / inrad) > 10.0:
        raise MeshError("shape regularity violated (circumradius/inradius > 10)")
    diam = np.maximum(a, np.maximum(b, c))
    if diam.max() / diam.min() > 4.0:
        raise MeshError("quasi-uniformity violated (max/min diameter > 4)")


def facet_patch(mesh: BackgroundMesh, facet_index: int) -> tuple[int, int]:
    """The two triangles sharing an interior facet (the facet patch)."""
    t0, t1 = mesh.facet_tris[facet_index]
    if t1 < 0:
        raise MeshError(f"facet {facet_index} is a boundary facet: no patch")
    return int(t0), int(t1)


def dump_mesh(mesh: BackgroundMesh, path) -> None:
    """Plain-text dump: header 'MESH2D nv nt', vertex lines, triangle lines."""
    with open(path, "w") as fh:
        fh.write(f"MESH2D {mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def load_mesh(path) -> BackgroundMesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "MESH2D":
            raise MeshError(f"bad mesh header in {path}")
        nv, nt = int(header[1]), int(header[2])
        vertices = np.array([[float(v) for v in fh.readline().split()]
                             for _ in range(nv)])
        triangles = np.array([[int(v) for v in fh.readline().split()]
                              for _ in range(nt)], dtype=np.int32)
    mesh = _finalize(vertices, triangles, h_target=float("nan"))
    mesh.h_target = mesh.h_max
    return mesh
