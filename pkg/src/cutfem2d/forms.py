"""Assembly of the discrete bilinear forms.

All forms act componentwise on the two vector components, so assembly
produces scalar matrices over scalar DOFs; `expand_vector` doubles them to
the interleaved vector layout used by the public operations.  Full-element
mass/stiffness kernels and ghost-penalty facet-patch kernels depend only on
the fixed background mesh and are cached on it.

The mesh-dependent scalings (1/h^2 in the ghost penalty, h^2 in the
multiplier stabilisation, h^{+-1/2} in the interface norms) all use the
global h_max of the quasi-uniform mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .cutquad import CutRule, cut_triangle, interface_normal, \
    triangle_gauss_rule
from .geometry import ActiveDecomposition
from .mesh import BackgroundMesh
from .spaces import DofMap, FEFunction, reference_triangle


@dataclass
class StabilizationParams:
    gamma_s: float = 0.1
    gamma_lambda: float = 0.01
    nitsche_penalty_coefficient: float = 40.0

    def gamma_gp(self, K: int) -> float:
        return self.gamma_s * K

    def nitsche_penalty(self, k: int, h: float) -> float:
        return self.nitsche_penalty_coefficient * k * k / h


def expand_vector(M: sp.spmatrix) -> sp.csr_matrix:
    """Scalar matrix to interleaved 2-component vector layout."""
    return sp.kron(M, sp.identity(2), format="csr")


def element_affine(mesh: BackgroundMesh, els: np.ndarray):
    """Batched affine maps: v0 (n,2), J (n,2,2), Jinv, |detJ| (n,)."""
    xy = mesh.vertices[mesh.triangles[els]]
    v0 = xy[:, 0]
    J = np.stack([xy[:, 1] - v0, xy[:, 2] - v0], axis=-1)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1]
    Jinv[:, 0, 1] = -J[:, 0, 1]
    Jinv[:, 1, 0] = -J[:, 1, 0]
    Jinv[:, 1, 1] = J[:, 0, 0]
    Jinv /= det[:, None, None]
    return v0, J, Jinv, np.abs(det)


def full_element_kernels(mesh: BackgroundMesh, degree: int, order: int):
    """Cached (mass, stiffness) kernels over every mesh element."""
    key = ("full_kernels", degree, order)
    if key not in mesh.cache:
        ref = reference_triangle(degree)
        pts, wts = triangle_gauss_rule(order)
        N = ref.eval(pts)               # (nq, nb)
        dN = ref.eval_grad(pts)         # (nq, nb, 2)
        els = np.arange(mesh.n_triangles)
        _, _, Jinv, det = element_affine(mesh, els)
        M = np.einsum("q,qa,qb->ab", wts, N, N)
        M_all = det[:, None, None] * M[None]
        G = np.einsum("qam,emi->eqai", dN, Jinv)     # physical gradients
        A_all = np.einsum("q,eqai,eqbi,e->eab", wts, G, G, det)
        mesh.cache[key] = (M_all, A_all)
    return mesh.cache[key]


def ghost_patch_kernels(mesh: BackgroundMesh, degree: int):
    """Cached per-facet patch kernels of the direct ghost penalty.

    For facet F with patch (T1, T2) the kernel is the unscaled
    int_{omega_F} [u][v] dx over the stacked DOF layout [T1-dofs, T2-dofs];
    duplicate (shared) DOFs are summed on COO conversion.
    """
    key = ("ghost_kernels", degree)
    if key in mesh.cache:
        return mesh.cache[key]

    from .spaces import _background_cell_dofs

    ref = reference_triangle(degree)
    order = 2 * degree
    pts, wts = triangle_gauss_rule(order)
    nq, nb = len(wts), ref.n_nodes

    interior = np.flatnonzero(mesh.facet_tris[:, 1] >= 0)
    t0 = mesh.facet_tris[interior, 0]
    t1 = mesh.facet_tris[interior, 1]
    nf = len(interior)

    v00, J0, Ji0, det0 = element_affine(mesh, t0)
    v01, J1, Ji1, det1 = element_affine(mesh, t1)

    N_self = ref.eval(pts)  # (nq, nb), same on every element

    def basis_at_foreign(v0_here, Ji_here, v0_there, J_there):
        # reference rule of the other triangle, seen through this element's map
        phys = v0_there[:, None, :] + np.einsum("qb,fib->fqi", pts, J_there)
        loc = np.einsum("fim,fqm->fqi", Ji_here, phys - v0_here[:, None, :])
        return ref.eval(loc.reshape(-1, 2)).reshape(nf, nq, nb)

    N0_at1 = basis_at_foreign(v00, Ji0, v01, J1)   # T1 polynomial at T2 points
    N1_at0 = basis_at_foreign(v01, Ji1, v00, J0)   # T2 polynomial at T1 points

    jump_at0 = np.concatenate(
        [np.broadcast_to(N_self, (nf, nq, nb)), -N1_at0], axis=2)
    jump_at1 = np.concatenate(
        [N0_at1, -np.broadcast_to(N_self, (nf, nq, nb))], axis=2)

    kern = np.einsum("q,fqa,fqb,f->fab", wts, jump_at0, jump_at0, det0)
    kern += np.einsum("q,fqa,fqb,f->fab", wts, jump_at1, jump_at1, det1)

    bg = _background_cell_dofs(mesh, degree, np.arange(mesh.n_triangles))
    fdofs = np.concatenate([bg[t0], bg[t1]], axis=1)   # (nf, 2nb) background ids

    out = {"facet_index": interior, "dofs": fdofs, "kernel": kern}
    mesh.cache[key] = out
    return out


def build_cut_rules(mesh: BackgroundMesh, decomp: ActiveDecomposition,
                    order: int) -> dict[int, CutRule]:
    """Cut quadrature for every interface element, keyed by element index."""
    rules = {}
    for t in decomp.interface_elements:
        coords = mesh.vertices[mesh.triangles[t]]
        rules[int(t)] = cut_triangle(coords, decomp.vertex_phi[mesh.triangles[t]],
                                     order)
    return rules


def _rows_of_elements(space: DofMap, els: np.ndarray) -> np.ndarray:
    """Rows in space.cell_dofs for the given element ids."""
    pos = np.searchsorted(space.elements, els)
    if np.any(space.elements[pos] != els):
        raise ValueError("elements not covered by the dofmap")
    return pos


def _basis_at_points(space: DofMap, elem_row: int, pts: np.ndarray):
    """(values, physical gradients) of the element basis at physical points."""
    mesh = space.mesh
    ref = reference_triangle(space.degree)
    e = space.elements[elem_row:elem_row + 1]
    v0, _, Jinv, _ = element_affine(mesh, e)
    loc = (pts - v0[0]) @ Jinv[0].T
    N = ref.eval(loc)
    dN = ref.eval_grad(loc)
    grad = np.einsum("qbm,mi->qbi", dN, Jinv[0])
    return N, grad


@dataclass
class CutElementData:
    rule: CutRule
    vel_dofs: np.ndarray
    Nv_vol: np.ndarray      # velocity basis at volume points
    Gv_vol: np.ndarray      # physical gradients at volume points
    Nv_if: np.ndarray       # velocity basis at interface points
    Gv_if: np.ndarray
    mult_dofs: np.ndarray | None = None
    Nm_if: np.ndarray | None = None


def build_cut_data(vel_space: DofMap, mult_space: DofMap | None,
                   decomp: ActiveDecomposition,
                   cut_rules: dict[int, CutRule]) -> dict[int, CutElementData]:
    """One-pass basis evaluation on every interface element, shared by all
    interface/cut-volume forms of a step."""
    mesh = vel_space.mesh
    refv = reference_triangle(vel_space.degree)
    refm = reference_triangle(mult_space.degree) if mult_space else None
    els = decomp.interface_elements
    v0, _, Jinv, _ = element_affine(mesh, els)
    vrows = _rows_of_elements(vel_space, els)
    mrows = _rows_of_elements(mult_space, els) if mult_space else None

    out: dict[int, CutElementData] = {}
    for i, t in enumerate(els):
        rule = cut_rules[int(t)]
        Ji = Jinv[i]
        loc_vol = (rule.volume_points - v0[i]) @ Ji.T
        loc_if = (rule.interface_points - v0[i]) @ Ji.T
        Nv_vol = refv.eval(loc_vol)
        Gv_vol = np.einsum("qbm,mi->qbi", refv.eval_grad(loc_vol), Ji)
        Nv_if = refv.eval(loc_if)
        Gv_if = np.einsum("qbm,mi->qbi", refv.eval_grad(loc_if), Ji)
        data = CutElementData(rule, vel_space.cell_dofs[vrows[i]],
                              Nv_vol, Gv_vol, Nv_if, Gv_if)
        if mult_space is not None:
            data.mult_dofs = mult_space.cell_dofs[mrows[i]]
            data.Nm_if = refm.eval(loc_if)
        out[int(t)] = data
    return out


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        self.r.append(np.broadcast_to(rows[..., :, None], vals.shape).ravel())
        self.c.append(np.broadcast_to(cols[..., None, :], vals.shape).ravel())
        self.v.append(vals.ravel())

    def matrix(self, nrows, ncols) -> sp.csr_matrix:
        if not self.v:
            return sp.csr_matrix((nrows, ncols))
        r = np.concatenate(self.r)
        c = np.concatenate(self.c)
        v = np.concatenate(self.v)
        return sp.coo_matrix((v, (r, c)), shape=(nrows, ncols)).tocsr()


def _volume_matrix_scalar(space: DofMap, decomp: ActiveDecomposition,
                          cut_rules: dict[int, CutRule], which: str,
                          elements: np.ndarray,
                          cut_data=None) -> sp.csr_matrix:
    """Scalar mass or stiffness over the fluid part of `elements`."""
    mesh = space.mesh
    order = 2 * space.degree
    M_all, A_all = full_element_kernels(mesh, space.degree, order)
    kern_all = M_all if which == "mass" else A_all

    iface_mask = np.isin(elements, decomp.interface_elements)
    full = elements[~iface_mask]
    cut = elements[iface_mask]

    trip = _Triplets()
    if len(full):
        rows = _rows_of_elements(space, full)
        dofs = space.cell_dofs[rows]
        trip.add(dofs, dofs, kern_all[full])
    if cut_data is None and len(cut):
        cut_data = build_cut_data(space, None, decomp, cut_rules)
    for t in cut:
        if int(t) not in cut_data:
            raise ValueError(f"missing cut rule for interface element {t}")
        d = cut_data[int(t)]
        w = d.rule.volume_weights
        if len(w) == 0:
            continue
        if which == "mass":
            k = np.einsum("q,qa,qb->ab", w, d.Nv_vol, d.Nv_vol)
        else:
            k = np.einsum("q,qai,qbi->ab", w, d.Gv_vol, d.Gv_vol)
        trip.add(d.vel_dofs, d.vel_dofs, k[None])
    return trip.matrix(space.n_scalar, space.n_scalar)


def assemble_mass_scalar(space, decomp, cut_rules, cut_data=None) -> sp.csr_matrix:
    """(M v, w) = integral of v*w over the discrete fluid domain."""
    return _volume_matrix_scalar(space, decomp, cut_rules, "mass",
                                 decomp.cut_elements, cut_data)


def assemble_stiffness_scalar(space, decomp, cut_rules,
                              cut_data=None) -> sp.csr_matrix:
    return _volume_matrix_scalar(space, decomp, cut_rules, "stiffness",
                                 decomp.cut_elements, cut_data)


def assemble_active_stiffness_scalar(space, decomp) -> sp.csr_matrix:
    """Stiffness over the full active domain (diagnostic norms)."""
    mesh = space.mesh
    _, A_all = full_element_kernels(mesh, space.degree, 2 * space.degree)
    rows = _rows_of_elements(space, space.elements)
    dofs = space.cell_dofs[rows]
    trip = _Triplets()
    trip.add(dofs, dofs, A_all[space.elements])
    return trip.matrix(space.n_scalar, space.n_scalar)


def assemble_ghost_penalty_scalar(space, decomp,
                                  mesh: BackgroundMesh) -> sp.csr_matrix:
    """Direct ghost penalty over the strip facets, scaled 1/h^2 (unweighted
    by gamma_gp, which the caller applies)."""
    kern = ghost_patch_kernels(mesh, space.degree)
    sel = np.searchsorted(kern["facet_index"], decomp.strip_facets)
    fdofs_bg = kern["dofs"][sel]
    fkern = kern["kernel"][sel] / mesh.h_max ** 2

    # background -> active ids; strip facets only touch active elements
    bga = space.background_of_active
    pos = np.searchsorted(bga, fdofs_bg)
    if np.any(bga[np.minimum(pos, len(bga) - 1)] != fdofs_bg):
        raise ValueError("ghost facet touches an inactive DOF")
    trip = _Triplets()
    trip.add(pos, pos, fkern)
    return trip.matrix(space.n_scalar, space.n_scalar)


def assemble_coupling_b_scalar(vel_space, mult_space, decomp, cut_rules,
                               cut_data=None) -> sp.csr_matrix:
    """(B lam, v) = integral of lam*v over the discrete interface."""
    if len(decomp.interface_elements) == 0:
        raise ValueError("coupling form: empty interface")
    if cut_data is None:
        cut_data = build_cut_data(vel_space, mult_space, decomp, cut_rules)
    trip = _Triplets()
    for t in decomp.interface_elements:
        d = cut_data[int(t)]
        w = d.rule.interface_weights
        if len(w) == 0:
            continue
        k = np.einsum("q,qa,qb->ab", w, d.Nv_if, d.Nm_if)
        trip.add(d.vel_dofs, d.mult_dofs, k[None])
    return trip.matrix(vel_space.n_scalar, mult_space.n_scalar)


def assemble_multiplier_stab_scalar(mult_space, decomp,
                                    normals=None) -> sp.csr_matrix:
    """h^2 * integral over full interface elements of (n.grad lam)(n.grad mu)."""
    mesh = mult_space.mesh
    h2 = mesh.h_max ** 2
    ref = reference_triangle(mult_space.degree)
    order = max(2 * mult_space.degree, 1)
    pts, wts = triangle_gauss_rule(order)
    dN = ref.eval_grad(pts)
    els = decomp.interface_elements
    _, _, Jinv, det = element_affine(mesh, els)
    grad = np.einsum("qbm,emi->eqbi", dN, Jinv)
    if normals is None:
        normals = {}
        for t in els:
            tri = mesh.triangles[t]
            normals[int(t)] = interface_normal(mesh.vertices[tri],
                                               decomp.vertex_phi[tri])
    nrm = np.array([normals[int(t)] for t in els])
    ngrad = np.einsum("eqbi,ei->eqb", grad, nrm)
    kern = h2 * np.einsum("q,eqa,eqb,e->eab", wts, ngrad, ngrad, det)
    rows = _rows_of_elements(mult_space, els)
    dofs = mult_space.cell_dofs[rows]
    trip = _Triplets()
    trip.add(dofs, dofs, kern)
    return trip.matrix(mult_space.n_scalar, mult_space.n_scalar)


def assemble_multiplier_load_scalar(mult_space, decomp, cut_rules,
                                    cut_data=None) -> np.ndarray:
    """w_j = integral over the interface of the j-th multiplier basis
    function; gives forces F_c = sum_j lam[j, c] w_j and boundary data."""
    w = np.zeros(mult_space.n_scalar)
    if cut_data is not None:
        for t in decomp.interface_elements:
            d = cut_data[int(t)]
            if len(d.rule.interface_weights):
                np.add.at(w, d.mult_dofs, d.rule.interface_weights @ d.Nm_if)
        return w
    for t in decomp.interface_elements:
        rule = cut_rules.get(int(t))
        if rule is None or len(rule.interface_weights) == 0:
            continue
        rm = int(_rows_of_elements(mult_space, np.array([t]))[0])
        Nm, _ = _basis_at_points(mult_space, rm, rule.interface_points)
        np.add.at(w, mult_space.cell_dofs[rm], rule.interface_weights @ Nm)
    return w


def assemble_nitsche_scalar(vel_space, decomp, cut_rules,
                            params: StabilizationParams, cut_data=None):
    """Symmetric Nitsche interface terms.

    Returns (matrix, load) with the boundary datum factored out: the full
    right-hand side for datum xi is outer(load, xi).  The normal used is the
    outward normal of the fluid domain (pointing into the body), i.e. the
    negative of the cut-rule normal.
    """
    mesh = vel_space.mesh
    eta = params.nitsche_penalty(vel_space.degree, mesh.h_max)
    if cut_data is None:
        cut_data = build_cut_data(vel_space, None, decomp, cut_rules)
    trip = _Triplets()
    load = np.zeros(vel_space.n_scalar)
    for t in decomp.interface_elements:
        d = cut_data[int(t)]
        w = d.rule.interface_weights
        if len(w) == 0:
            continue
        N = d.Nv_if
        gn = np.einsum("qbi,i->qb", d.Gv_if, -d.rule.normal)  # fluid-outward
        k = (-np.einsum("q,qa,qb->ab", w, gn, N)
             - np.einsum("q,qa,qb->ab", w, N, gn)
             + eta * np.einsum("q,qa,qb->ab", w, N, N))
        trip.add(d.vel_dofs, d.vel_dofs, k[None])
        np.add.at(load, d.vel_dofs, w @ (eta * N - gn))
    return trip.matrix(vel_space.n_scalar, vel_space.n_scalar), load


def nitsche_flux_force(vel_space, decomp, cut_rules, params,
                       u: FEFunction, xi, cut_data=None) -> np.ndarray:
    """Interface force in Nitsche mode: integral of -du/dn + eta (u - xi)."""
    mesh = vel_space.mesh
    eta = params.nitsche_penalty(vel_space.degree, mesh.h_max)
    if cut_data is None:
        cut_data = build_cut_data(vel_space, None, decomp, cut_rules)
    xi = np.asarray(xi, float)
    F = np.zeros(2)
    for t in decomp.interface_elements:
        d = cut_data[int(t)]
        w = d.rule.interface_weights
        if len(w) == 0:
            continue
        coeffs = u.coeffs[d.vel_dofs]                       # (nb, 2)
        uvals = d.Nv_if @ coeffs                            # (nq, 2)
        gn = np.einsum("qbi,i->qb", d.Gv_if, -d.rule.normal)
        dn_u = gn @ coeffs
        F += w @ (-dn_u + eta * (uvals - xi))
    return F


# public vector-valued wrappers

def assemble_mass(space, decomp, cut_rules) -> sp.csr_matrix:
    return expand_vector(assemble_mass_scalar(space, decomp, cut_rules))


def assemble_stiffness(space, decomp, cut_rules) -> sp.csr_matrix:
    return expand_vector(assemble_stiffness_scalar(space, decomp, cut_rules))


def assemble_ghost_penalty(space, decomp, mesh) -> sp.csr_matrix:
    return expand_vector(assemble_ghost_penalty_scalar(space, decomp, mesh))


def assemble_coupling_b(vel_space, mult_space, decomp, cut_rules) -> sp.csr_matrix:
    return expand_vector(
        assemble_coupling_b_scalar(vel_space, mult_space, decomp, cut_rules))


def assemble_multiplier_stab(mult_space, decomp, normals=None) -> sp.csr_matrix:
    return expand_vector(
        assemble_multiplier_stab_scalar(mult_space, decomp, normals))


def assemble_nitsche(vel_space, decomp, cut_rules, params,
                     xi) -> tuple[sp.csr_matrix, np.ndarray]:
    mat, load = assemble_nitsche_scalar(vel_space, decomp, cut_rules, params)
    rhs = np.outer(load, np.asarray(xi, float)).ravel()
    return expand_vector(mat), rhs


class TripleNorm(NamedTuple):
    grad_active_sq: float     # |grad u|^2 over the active domain
    u_interface_sq: float     # |h^{-1/2} u|^2 over the interface
    lam_interface_sq: float   # |h^{1/2} lam|^2 over the interface
    lam_stab_sq: float        # |h n.grad lam|^2 over the interface elements


def compute_triple_norm(u: FEFunction, lam: FEFunction | None,
                        decomp: ActiveDecomposition,
                        cut_rules=None) -> TripleNorm:
    """Squared contributions of the mesh-dependent stability norms."""
    space = u.dofmap
    mesh = space.mesh
    h = mesh.h_max
    if cut_rules is None:
        cut_rules = build_cut_rules(mesh, decomp, 2 * space.degree)

    A = assemble_active_stiffness_scalar(space, decomp)
    grad_sq = float(sum(u.coeffs[:, c] @ (A @ u.coeffs[:, c]) for c in range(2)))

    u_if = 0.0
    for t in decomp.interface_elements:
        rule = cut_rules[int(t)]
        if len(rule.interface_weights) == 0:
            continue
        rv = int(_rows_of_elements(space, np.array([t]))[0])
        N, _ = _basis_at_points(space, rv, rule.interface_points)
        vals = N @ u.coeffs[space.cell_dofs[rv]]
        u_if += rule.interface_weights @ (vals ** 2).sum(axis=1)
    u_if /= h

    lam_if = 0.0
    lam_stab = 0.0
    if lam is not None:
        mspace = lam.dofmap
        for t in decomp.interface_elements:
            rule = cut_rules[int(t)]
            if len(rule.interface_weights) == 0:
                continue
            rm = int(_rows_of_elements(mspace, np.array([t]))[0])
            Nm, _ = _basis_at_points(mspace, rm, rule.interface_points)
            vals = Nm @ lam.coeffs[mspace.cell_dofs[rm]]
            lam_if += rule.interface_weights @ (vals ** 2).sum(axis=1)
        lam_if *= h
        J = assemble_multiplier_stab_scalar(mspace, decomp)
        lam_stab = float(sum(lam.coeffs[:, c] @ (J @ lam.coeffs[:, c])
                             for c in range(2)))
    return TripleNorm(grad_sq, float(u_if), float(lam_if), float(lam_stab))
