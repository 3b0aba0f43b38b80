"""Quadrature on cut triangles from the P1 interpolant of the level set.

The fluid side is phi < 0.  A vertex value of exactly zero is nudged to
-1e-14 (fluid side) so measure-zero cuts are broken deterministically.
Volume rules come from decomposing the fluid polygon (triangle or
quadrilateral) into sub-triangles carrying a tensor/Duffy Gauss rule; the
interface rule is a 1D Gauss rule on the straight cut segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GeometryError

ZERO_NUDGE = -1e-14


@lru_cache(maxsize=None)
def segment_gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Points/weights on [0,1], exact for polynomials of degree <= order."""
    m = max(1, (order + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the reference triangle (0,0),(1,0),(0,1), exact to `order`.

    Duffy map of a tensor Gauss rule; all weights positive, summing to 1/2.
    """
    mu = max(1, (order + 3) // 2)   # u-degree raised by the Jacobian factor
    mv = max(1, (order + 2) // 2)
    xu, wu = np.polynomial.legendre.leggauss(mu)
    xv, wv = np.polynomial.legendre.leggauss(mv)
    xu, wu = 0.5 * (xu + 1.0), 0.5 * wu
    xv, wv = 0.5 * (xv + 1.0), 0.5 * wv
    U, V = np.meshgrid(xu, xv, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    pts = np.column_stack([(U * (1.0 - V)).ravel(), (U * V).ravel()])
    wts = (WU * WV * U).ravel()
    return pts, wts


def map_rule_to_triangle(coords: np.ndarray, order: int):
    """Reference rule pushed onto the physical triangle `coords` (3,2)."""
    ref_pts, ref_wts = triangle_gauss_rule(order)
    v0 = coords[0]
    J = np.column_stack([coords[1] - v0, coords[2] - v0])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    pts = v0 + ref_pts @ J.T
    return pts, ref_wts * abs(det)  # ref weights sum to 1/2 = ref area


@dataclass
class CutRule:
    volume_points: np.ndarray      # (nq, 2) on the {phi_lin < 0} part of T
    volume_weights: np.ndarray
    interface_points: np.ndarray   # (mq, 2) on the {phi_lin = 0} segment in T
    interface_weights: np.ndarray
    normal: np.ndarray | None      # -grad(phi_lin)/|grad(phi_lin)|, None when uncut
    inside_fraction: float


def _nudge(phi: np.ndarray) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    phi[phi == 0.0] = ZERO_NUDGE
    return phi


def _p1_gradient(coords: np.ndarray, phi: np.ndarray) -> np.ndarray:
    v0 = coords[0]
    J = np.column_stack([coords[1] - v0, coords[2] - v0])
    # gradient in physical coordinates of the linear interpolant
    rhs = np.array([phi[1] - phi[0], phi[2] - phi[0]])
    return np.linalg.solve(J.T, rhs)


def interface_normal(coords: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Constant per-element normal -grad(phi_lin)/|grad(phi_lin)|.

    Points from the phi > 0 side (body) into the fluid.
    """
    phi = _nudge(np.asarray(phi, dtype=float))
    if not (phi.min() < 0.0 < phi.max()):
        raise GeometryError("interface_normal: level set does not change sign")
    g = _p1_gradient(np.asarray(coords, dtype=float), phi)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise GeometryError("interface_normal: degenerate level-set gradient")
    return -g / norm


def cut_triangle(coords: np.ndarray, phi: np.ndarray, order: int) -> CutRule:
    """Volume/interface quadrature for one triangle cut by {phi_lin = 0}."""
    coords = np.asarray(coords, dtype=float)
    phi = _nudge(np.asarray(phi, dtype=float))
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")

    v01 = coords[1] - coords[0]
    v02 = coords[2] - coords[0]
    area2 = v01[0] * v02[1] - v01[1] * v02[0]
    if area2 == 0.0:
        raise GeometryError("cut_triangle: degenerate (zero-area) triangle")
    area = 0.5 * abs(area2)

    empty = np.zeros((0, 2)), np.zeros(0)
    if np.all(phi < 0.0):
        pts, wts = map_rule_to_triangle(coords, order)
        return CutRule(pts, wts, *empty, normal=None, inside_fraction=1.0)
    if np.all(phi > 0.0):
        return CutRule(*empty, *empty, normal=None, inside_fraction=0.0)

    normal = interface_normal(coords, phi)

    # one vertex is alone on its side of the zero set
    neg = phi < 0.0
    lone_side = neg if neg.sum() == 1 else ~neg
    a = int(np.flatnonzero(lone_side)[0])
    b, c = (a + 1) % 3, (a + 2) % 3

    def crossing(i, j):
        t = phi[i] / (phi[i] - phi[j])
        return coords[i] + t * (coords[j] - coords[i])

    p_ab = crossing(a, b)
    p_ac = crossing(a, c)

    if neg[a]:
        polys = [np.array([coords[a], p_ab, p_ac])]
    else:
        # fluid part is the quadrilateral (b, c, p_ac, p_ab)
        polys = [np.array([coords[b], coords[c], p_ac]),
                 np.array([coords[b], p_ac, p_ab])]

    vol_pts, vol_wts = [], []
    for tri in polys:
        p, w = map_rule_to_triangle(tri, order)
        vol_pts.append(p)
        vol_wts.append(w)
    vol_pts = np.concatenate(vol_pts)
    vol_wts = np.concatenate(vol_wts)

    seg = p_ac - p_ab
    seg_len = float(np.linalg.norm(seg))
    s, sw = segment_gauss_rule(order)
    int_pts = p_ab + np.outer(s, seg)
    int_wts = sw * seg_len

    return CutRule(vol_pts, vol_wts, int_pts, int_wts, normal,
                   inside_fraction=float(vol_wts.sum() / area))
