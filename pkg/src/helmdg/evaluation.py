"""Quadrature point sets and basis tables on a whole mesh.

Everything is vectorised over elements (volume data, leading axis T) or
faces (face data, leading axes E and side s in {0, 1}).  Missing sides of
boundary faces are filled with zeros and masked by ``has_side``.
"""
from functools import cached_property

import numpy as np

from .basis import modal_eval, scalar_dim
from .quadrature import default_order, edge_rule, triangle_rule


class VolumeQuadrature:
    """Volume quadrature on all triangles of ``mesh``."""

    def __init__(self, mesh, order):
        self.mesh = mesh
        self.order = order
        rule = triangle_rule(order)
        self.ref_points = rule.points
        self.ref_weights = rule.weights
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        self.points = v0[:, None, :] + np.einsum("tij,qj->tqi", mesh.jac, rule.points)
        self.weights = rule.weights[None, :] * mesh.det_jac[:, None]

    @property
    def nq(self):
        return len(self.ref_weights)

    def scalar_table(self, p, derivatives=1):
        """Modal P_p values (nq, m), physical gradients (T, nq, m, 2), Hessians (T, nq, m, 2, 2)."""
        v, g, h = modal_eval(p, self.ref_points, derivatives)
        inv = self.mesh.inv_jac
        grads = None if g is None else np.einsum("qmk,tkl->tqml", g, inv)
        hess = None if h is None else np.einsum("qmkl,tka,tlb->tqmab", h, inv, inv)
        return v, grads, hess


class FaceQuadrature:
    """Gauss points on every face, with reference coordinates on both sides.

    Points run from ``edges[:, 0]`` to ``edges[:, 1]``.
    """

    def __init__(self, mesh, order):
        self.mesh = mesh
        self.order = order
        rule = edge_rule(order)
        self.t = rule.points
        a = mesh.vertices[mesh.edges[:, 0]]
        b = mesh.vertices[mesh.edges[:, 1]]
        self.points = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        self.weights = rule.weights[None, :] * mesh.h_F[:, None]
        self.has_side = mesh.edge_tris >= 0
        tri = np.where(self.has_side, mesh.edge_tris, 0)
        v0 = mesh.vertices[mesh.triangles[tri, 0]]  # (E, 2, 2)
        rel = self.points[:, None, :, :] - v0[:, :, None, :]
        self.ref = np.einsum("esij,esqj->esqi", mesh.inv_jac[tri], rel)
        self.ref[~self.has_side] = 0.0
        self.tri = tri

    @property
    def nq(self):
        return len(self.t)

    def scalar_table(self, p, derivatives=1):
        """Values (E, 2, nq, m) and physical gradients (E, 2, nq, m, 2) per side."""
        v, g, h = modal_eval(p, self.ref, derivatives)
        mask = self.has_side[:, :, None, None]
        v = v * mask
        inv = self.mesh.inv_jac[self.tri]
        grads = None if g is None else np.einsum("esqmk,eskl->esqml", g, inv) * mask[..., None]
        hess = None
        if h is not None:
            hess = np.einsum("esqmkl,eska,eslb->esqmab", h, inv, inv) * mask[..., None, None]
        return v, grads, hess


class MeshQuadrature:
    """Cached volume and face quadrature plus modal tables for one mesh and order."""

    def __init__(self, mesh, order):
        self.mesh = mesh
        self.order = order
        self.vol = VolumeQuadrature(mesh, order)
        self.face = FaceQuadrature(mesh, order)
        self._tables = {}

    @classmethod
    def for_degree(cls, mesh, p, extra=0):
        return cls(mesh, default_order(p) + extra)

    def vol_table(self, p, derivatives=1):
        key = ("v", p, derivatives)
        if key not in self._tables:
            self._tables[key] = self.vol.scalar_table(p, derivatives)
        return self._tables[key]

    def face_table(self, p, derivatives=1):
        key = ("f", p, derivatives)
        if key not in self._tables:
            self._tables[key] = self.face.scalar_table(p, derivatives)
        return self._tables[key]


def broken_values(coeffs, values):
    """Evaluate broken modal coefficients (T, m) with a volume table (nq, m) -> (T, nq)."""
    return np.einsum("qm,tm->tq", values, coeffs)


def broken_grads(coeffs, grads):
    return np.einsum("tqmk,tm->tqk", grads, coeffs)


def face_values(coeffs, values, quad):
    """Evaluate broken coefficients (T, m) on faces -> (E, 2, nq), zero on missing sides."""
    c = coeffs[quad.tri]
    return np.einsum("esqm,esm->esq", values, c)


def face_grads(coeffs, grads, quad):
    c = coeffs[quad.tri]
    return np.einsum("esqmk,esm->esqk", grads, c)


def m_of(p):
    return scalar_dim(p)
