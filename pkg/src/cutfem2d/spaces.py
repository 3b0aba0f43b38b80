"""Lagrange spaces on element subsets of the background mesh.

Scalar degrees of freedom carry a stable background numbering (vertices,
then facet slots, then per-element interior slots) shared by every time
step, so inter-step transfer is a gather by background index.  Functions
are vector-valued with one 2-vector coefficient per scalar DOF.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import TransferError
from .geometry import ActiveDecomposition
from .mesh import BackgroundMesh


@lru_cache(maxsize=None)
def reference_triangle(degree: int) -> "ReferenceTriangle":
    return ReferenceTriangle(degree)


class ReferenceTriangle:
    """Nodal P^k element on the triangle (0,0), (1,0), (0,1)."""

    # local edges as (vertex, vertex); edge l is opposite local vertex
    # OPPOSITE[l], matching mesh.tri_facets ordering
    EDGES = ((1, 2), (2, 0), (0, 1))

    def __init__(self, degree: int):
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        self.degree = degree
        k = degree
        verts = [(0, 0), (k, 0), (0, k)]
        nodes = [v for v in verts]
        entity = [("v", i) for i in range(3)]
        for l, (a, b) in enumerate(self.EDGES):
            pa, pb = np.array(verts[a]), np.array(verts[b])
            for j in range(1, k):
                nodes.append(tuple(pa + (pb - pa) * j // k))
                entity.append(("e", l, j))
        for j in range(k + 1):
            for i in range(k + 1 - j):
                if i > 0 and j > 0 and i + j < k:
                    nodes.append((i, j))
                    entity.append(("i", None))
        self.nodes = np.array(nodes, dtype=float) / k
        self.entity = entity
        self.n_nodes = len(nodes)
        self.exponents = [(a, b) for tot in range(k + 1)
                          for a in range(tot, -1, -1) for b in [tot - a]]
        self._ea = np.array([e[0] for e in self.exponents], dtype=float)
        self._eb = np.array([e[1] for e in self.exponents], dtype=float)
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)   # column b: monomial coeffs of basis b
        self.n_interior = sum(1 for e in entity if e[0] == "i")
        # derivative operators in monomial-coefficient space
        nm = len(self.exponents)
        index = {e: i for i, e in enumerate(self.exponents)}
        Dx = np.zeros((nm, nm))
        Dy = np.zeros((nm, nm))
        for i, (a, b) in enumerate(self.exponents):
            if a:
                Dx[index[(a - 1, b)], i] = a
            if b:
                Dy[index[(a, b - 1)], i] = b
        self.coeffs_dx = Dx @ self.coeffs
        self.coeffs_dy = Dy @ self.coeffs

    def _monomials(self, pts: np.ndarray) -> np.ndarray:
        x, y = pts[:, 0:1], pts[:, 1:2]
        return x ** self._ea[None, :] * y ** self._eb[None, :]

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Basis values, shape (npts, n_nodes)."""
        return self._monomials(np.atleast_2d(pts)) @ self.coeffs

    def eval_grad(self, pts: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (npts, n_nodes, 2)."""
        m = self._monomials(np.atleast_2d(pts))
        return np.stack([m @ self.coeffs_dx, m @ self.coeffs_dy], axis=-1)


def _background_cell_dofs(mesh: BackgroundMesh, degree: int,
                          elements: np.ndarray) -> np.ndarray:
    """Background scalar DOF ids per element, shape (len(elements), nb)."""
    ref = reference_triangle(degree)
    k = degree
    nv, ne = mesh.n_vertices, mesh.n_facets
    tris = mesh.triangles[elements]
    out = np.empty((len(elements), ref.n_nodes), dtype=np.int64)
    out[:, :3] = tris
    col = 3
    for l, (a, b) in enumerate(ReferenceTriangle.EDGES):
        f = mesh.tri_facets[elements, l]    # facet of local edge (a, b)
        canon_first = mesh.facets[f, 0]
        forward = tris[:, a] == canon_first
        for j in range(1, k):
            slot = np.where(forward, j - 1, k - 1 - j)
            out[:, col] = nv + f.astype(np.int64) * (k - 1) + slot
            col += 1
    ni = ref.n_interior
    if ni:
        base = nv + ne * (k - 1)
        for j in range(ni):
            out[:, col] = base + elements.astype(np.int64) * ni + j
            col += 1
    return out


@dataclass
class DofMap:
    mesh: BackgroundMesh
    degree: int
    elements: np.ndarray                 # element subset covered
    cell_dofs: np.ndarray                # (n_el, nb) active scalar indices
    background_of_active: np.ndarray     # (n_scalar,) stable global ids
    n_scalar: int
    dirichlet: np.ndarray                # bool per scalar DOF
    node_coords: np.ndarray              # (n_scalar, 2)
    decomp: ActiveDecomposition | None = None
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def free(self) -> np.ndarray:
        return ~self.dirichlet

    def active_of_background(self) -> dict[int, int]:
        if "a_of_b" not in self.cache:
            self.cache["a_of_b"] = {
                int(b): i for i, b in enumerate(self.background_of_active)}
        return self.cache["a_of_b"]


def _build_dofmap(mesh: BackgroundMesh, degree: int, elements: np.ndarray,
                  with_dirichlet: bool) -> DofMap:
    elements = np.asarray(elements, dtype=np.int64)
    bg = _background_cell_dofs(mesh, degree, elements)
    background, inverse = np.unique(bg, return_inverse=True)
    cell_dofs = inverse.reshape(bg.shape).astype(np.int64)
    n = len(background)

    ref = reference_triangle(degree)
    coords = np.empty((n, 2))
    tri_xy = mesh.vertices[mesh.triangles[elements]]
    v0 = tri_xy[:, 0]
    J = np.stack([tri_xy[:, 1] - v0, tri_xy[:, 2] - v0], axis=-1)
    phys = v0[:, None, :] + np.einsum("nb,eib->eni", ref.nodes, J)
    coords[cell_dofs.ravel()] = phys.reshape(-1, 2)

    dirichlet = np.zeros(n, dtype=bool)
    if with_dirichlet:
        nv, k = mesh.n_vertices, degree
        bdry_v = mesh.boundary_vertices
        vert_part = background < nv
        dirichlet[vert_part] = bdry_v[background[vert_part]]
        if k > 1:
            edge_part = (background >= nv) & (background < nv + mesh.n_facets * (k - 1))
            f_of = (background[edge_part] - nv) // (k - 1)
            dirichlet[edge_part] = mesh.facet_tris[f_of, 1] < 0

    return DofMap(mesh, degree, elements, cell_dofs, background, n,
                  dirichlet, coords)


def build_velocity_space(mesh: BackgroundMesh, decomp: ActiveDecomposition,
                         k: int) -> DofMap:
    """Vector P^k space over the active elements, zero on the outer box."""
    if len(decomp.active_elements) == 0:
        raise ValueError("velocity space: empty active element set")
    dm = _build_dofmap(mesh, k, decomp.active_elements, with_dirichlet=True)
    dm.decomp = decomp
    return dm


def build_multiplier_space(mesh: BackgroundMesh, decomp: ActiveDecomposition,
                           k_minus_1: int) -> DofMap:
    """Vector P^{k-1} space over the interface-element band."""
    if k_minus_1 < 1:
        raise ValueError("multiplier degree must be >= 1 (velocity degree >= 2)")
    if len(decomp.interface_elements) == 0:
        raise ValueError("multiplier space: no interface elements (no body)")
    dm = _build_dofmap(mesh, k_minus_1, decomp.interface_elements,
                       with_dirichlet=False)
    dm.decomp = decomp
    return dm


@dataclass
class FEFunction:
    dofmap: DofMap
    coeffs: np.ndarray   # (n_scalar, 2)

    @classmethod
    def zero(cls, dofmap: DofMap) -> "FEFunction":
        return cls(dofmap, np.zeros((dofmap.n_scalar, 2)))

    @classmethod
    def interpolate(cls, dofmap: DofMap, fn) -> "FEFunction":
        vals = np.array([fn(x) for x in dofmap.node_coords], dtype=float)
        if vals.ndim == 1:
            vals = np.column_stack([vals, vals])
        return cls(dofmap, vals)

    def evaluate(self, points) -> np.ndarray:
        """Pointwise values (m, 2); points must lie in covered elements."""
        points = np.atleast_2d(np.asarray(points, float))
        mesh = self.dofmap.mesh
        ref = reference_triangle(self.dofmap.degree)
        tri_xy = mesh.vertices[mesh.triangles[self.dofmap.elements]]
        v0 = tri_xy[:, 0]
        J = np.stack([tri_xy[:, 1] - v0, tri_xy[:, 2] - v0], axis=-1)
        Jinv = np.linalg.inv(J)
        out = np.empty((len(points), 2))
        for m, x in enumerate(points):
            loc = np.einsum("eij,ej->ei", Jinv, x - v0)
            bary_ok = (loc[:, 0] >= -1e-12) & (loc[:, 1] >= -1e-12) \
                & (loc.sum(axis=1) <= 1 + 1e-12)
            idx = np.flatnonzero(bary_ok)
            if len(idx) == 0:
                raise ValueError(f"point {x} outside the covered elements")
            e = idx[0]
            N = ref.eval(loc[e])[0]
            out[m] = N @ self.coeffs[self.dofmap.cell_dofs[e]]
        return out


def transfer(prev: FEFunction, new_map: DofMap) -> np.ndarray:
    """Coefficients of `prev` re-indexed onto `new_map`.

    DOFs shared by background index are copied; DOFs newly activated in the
    outer strip start at zero.  Any DOF of a current cut element that was
    not active at the previous step aborts the run: the difference quotient
    would read undefined values there.
    """
    out = np.zeros((new_map.n_scalar, 2))
    prev_bg = prev.dofmap.background_of_active    # sorted by construction
    new_bg = new_map.background_of_active
    pos = np.searchsorted(prev_bg, new_bg)
    pos_c = np.minimum(pos, len(prev_bg) - 1)
    have = prev_bg[pos_c] == new_bg
    out[have] = prev.coeffs[pos_c[have]]

    if new_map.decomp is not None:
        cut = new_map.decomp.cut_elements
        sel = np.isin(new_map.elements, cut)
        needed = np.unique(new_map.cell_dofs[sel].ravel())
        missing = needed[~have[needed]]
        if len(missing):
            raise TransferError(
                f"extension strip too thin: {len(missing)} DOFs of current cut "
                "elements were inactive at the previous step")
    return out
