"""Broken, conforming (Lagrange) and divergence-conforming (BDM) spaces.

Every space exposes ``embedding``: a sparse matrix mapping its coefficient
vector to broken modal coefficients (scalar: index K*m + i; vector:
K*2m + c*m + i).  All assembly happens in the broken representation, so a
conforming or BDM quantity is always ``E^T (broken matrix) E``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import lagrange_coefficients, lattice, modal_eval, scalar_dim
from .errors import InputError, MeshSpecificationError
from .evaluation import MeshQuadrature
from .mesh import DIRICHLET, NEUMANN
from .quadrature import edge_rule


class BrokenSpace:
    """Discontinuous P_p on every triangle (orthonormal modal basis)."""

    kind = "broken"

    def __init__(self, mesh, p):
        if int(p) != p or p < 0:
            raise InputError("degree must be a non-negative integer")
        self.mesh = mesh
        self.p = int(p)
        self.m = scalar_dim(self.p)
        self.dim = mesh.n_triangles * self.m
        self.embedding = sp.identity(self.dim, format="csr")

    def offsets(self):
        return np.arange(self.mesh.n_triangles + 1) * self.m

    def to_broken(self, coeffs):
        return np.asarray(coeffs).reshape(self.mesh.n_triangles, self.m)

    def descriptor(self):
        return f"broken p={self.p} triangles={self.mesh.n_triangles} dim={self.dim}"


class VectorBrokenSpace:
    """Discontinuous [P_q]^2, component-major on each triangle."""

    kind = "vector_broken"

    def __init__(self, mesh, q):
        self.mesh = mesh
        self.p = int(q)
        self.m = scalar_dim(self.p)
        self.dim = mesh.n_triangles * 2 * self.m
        self.embedding = sp.identity(self.dim, format="csr")

    def to_broken(self, coeffs):
        return np.asarray(coeffs).reshape(self.mesh.n_triangles, 2, self.m)

    def descriptor(self):
        return f"vector_broken p={self.p} triangles={self.mesh.n_triangles} dim={self.dim}"


class ConformingScalarSpace:
    """Continuous Lagrange P_p vanishing on the closure of the Dirichlet boundary.

    Global nodes: mesh vertices, then p-1 nodes per edge counted from the
    lower vertex id, then interior lattice nodes per triangle.
    """

    kind = "conforming"

    def __init__(self, mesh, p):
        if int(p) != p or p < 1:
            raise InputError("conforming space needs p >= 1")
        self.mesh = mesh
        self.p = p = int(p)
        self.m = m = scalar_dim(p)
        nt, nv, ne = mesh.n_triangles, mesh.n_vertices, mesh.n_faces
        lat = lattice(p)
        bary = np.column_stack([p - lat.sum(axis=1), lat[:, 0], lat[:, 1]])
        n_int = (p - 1) * (p - 2) // 2
        self.n_nodes = nv + ne * (p - 1) + nt * n_int
        local_to_global = np.empty((nt, m), dtype=np.int64)
        tris = mesh.triangles
        interior_counter = 0
        for k, b in enumerate(bary):
            zeros = np.flatnonzero(b == 0)
            if len(zeros) == 2:
                lv = int(np.argmax(b))
                local_to_global[:, k] = tris[:, lv]
            elif len(zeros) == 1:
                le = int(zeros[0])
                others = [x for x in range(3) if x != le]
                e = mesh.tri_edges[:, le]
                a = mesh.edges[e, 0]
                w_a = np.where(tris[:, others[0]] == a, b[others[0]], b[others[1]])
                local_to_global[:, k] = nv + e * (p - 1) + (p - w_a) - 1
            else:
                local_to_global[:, k] = nv + ne * (p - 1) + np.arange(nt) * n_int + interior_counter
                interior_counter += 1
        self.local_to_global = local_to_global

        dmask = np.zeros(self.n_nodes, dtype=bool)
        dfaces = np.flatnonzero(mesh.face_labels == DIRICHLET)
        dmask[mesh.edges[dfaces].ravel()] = True
        for k in range(p - 1):
            dmask[nv + dfaces * (p - 1) + k] = True
        self.dirichlet_nodes = np.flatnonzero(dmask)
        self.free_nodes = np.flatnonzero(~dmask)
        self.dim = len(self.free_nodes)

        ref = lattice(p) / float(p)
        v0 = mesh.vertices[tris[:, 0]]
        pts = v0[:, None, :] + np.einsum("tij,kj->tki", mesh.jac, ref)
        coords = np.empty((self.n_nodes, 2))
        coords[local_to_global.ravel()] = pts.reshape(-1, 2)
        self.node_coords = coords

        cl = lagrange_coefficients(p)  # (m_modal, m_nodes)
        rows = (np.arange(nt)[:, None, None] * m + np.arange(m)[None, :, None]) * np.ones((1, 1, m), dtype=np.int64)
        cols = np.broadcast_to(local_to_global[:, None, :], (nt, m, m))
        vals = np.broadcast_to(cl[None, :, :], (nt, m, m))
        full = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(nt * m, self.n_nodes))
        # shared nodes were summed by the COO->CSR conversion; undo by counting
        counts = sp.csr_matrix((np.ones(nt * m * m), (rows.ravel(), cols.ravel())), shape=full.shape)
        full.data /= counts.data
        self.embedding_full = full
        self.embedding = full[:, self.free_nodes].tocsr()

    def to_broken(self, coeffs):
        return (self.embedding @ np.asarray(coeffs)).reshape(self.mesh.n_triangles, self.m)

    def descriptor(self):
        return f"conforming p={self.p} triangles={self.mesh.n_triangles} dim={self.dim}"


def _vector_modal_on_faces(mesh, p, tri, local_edge, t):
    """Normal component of the vector modal basis of ``tri`` on its local edge.

    Points run along the global edge from its lower to its higher vertex
    id; the normal is the global face normal.  Returns (n, nt, 2m).
    """
    e = mesh.tri_edges[tri, local_edge]
    a = mesh.vertices[mesh.edges[e, 0]]
    b = mesh.vertices[mesh.edges[e, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    v0 = mesh.vertices[mesh.triangles[tri, 0]]
    ref = np.einsum("nij,nqj->nqi", mesh.inv_jac[tri], pts - v0[:, None, :])
    vals, _, _ = modal_eval(p, ref, derivatives=0)  # (n, nq, m)
    nrm = mesh.normals[e]
    return np.concatenate([vals * nrm[:, None, 0:1], vals * nrm[:, None, 1:2]], axis=2)


class DivConformingSpace:
    """BDM_p: vector P_p with continuous normal trace, zero normal trace on Gamma_N.

    Face degrees of freedom are values of w.n_F at p+1 Gauss points of each
    face; interior degrees of freedom are an orthonormal basis of the
    local bubbles (zero normal trace on the whole element boundary).
    """

    kind = "bdm"

    def __init__(self, mesh, p):
        if int(p) != p or p < 1:
            raise InputError("BDM space needs p >= 1")
        self.mesh = mesh
        self.p = p = int(p)
        self.m = m = scalar_dim(p)
        nt, ne = mesh.n_triangles, mesh.n_faces
        nf = p + 1
        t = edge_rule(2 * p).points
        assert len(t) == nf
        trace = np.zeros((nt, 3 * nf, 2 * m))
        allt = np.arange(nt)
        for le in range(3):
            trace[:, le * nf:(le + 1) * nf, :] = _vector_modal_on_faces(mesh, p, allt, le, t)
        u, s, vh = np.linalg.svd(trace, full_matrices=True)
        # pseudo-inverse: minimal-norm local fields with prescribed normal values
        inv_s = 1.0 / s
        self.face_shape = np.einsum("tji,tj,tkj->tik", vh[:, :3 * nf, :], inv_s, u)  # (T, 2m, 3nf)
        self.bubbles = np.transpose(vh[:, 3 * nf:, :], (0, 2, 1))  # (T, 2m, p^2-1)
        nb = self.bubbles.shape[2]

        keep = mesh.face_labels != NEUMANN
        face_index = -np.ones(ne, dtype=np.int64)
        face_index[keep] = np.arange(keep.sum())
        n_face_dofs = int(keep.sum()) * nf
        self.face_dof_of_edge = face_index
        self.n_face_dofs = n_face_dofs
        self.dim = n_face_dofs + nt * nb

        rows, cols, vals = [], [], []
        base_rows = (allt[:, None] * 2 * m + np.arange(2 * m)[None, :])  # (T, 2m)
        for le in range(3):
            e = mesh.tri_edges[:, le]
            fi = face_index[e]
            ok = fi >= 0
            for g in range(nf):
                col = fi[ok] * nf + g
                rows.append(base_rows[ok].ravel())
                cols.append(np.repeat(col, 2 * m))
                vals.append(self.face_shape[ok, :, le * nf + g].ravel())
        for j in range(nb):
            rows.append(base_rows.ravel())
            cols.append(np.repeat(n_face_dofs + allt * nb + j, 2 * m))
            vals.append(self.bubbles[:, :, j].ravel())
        self.embedding = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nt * 2 * m, self.dim))
        self.face_points = t

    def to_broken(self, coeffs):
        return (self.embedding @ np.asarray(coeffs)).reshape(self.mesh.n_triangles, 2, self.m)

    def descriptor(self):
        return f"bdm p={self.p} triangles={self.mesh.n_triangles} dim={self.dim}"


def make_spaces(mesh, p):
    """Broken P_p, conforming Lagrange P_p and BDM_p on ``mesh``."""
    if int(p) != p or p < 1:
        raise InputError("p must be an integer >= 1")
    return BrokenSpace(mesh, p), ConformingScalarSpace(mesh, p), DivConformingSpace(mesh, p)


# ---------------------------------------------------------------------------
@dataclass
class BrokenField:
    """Coefficient vector of a field in ``space`` (any of the spaces above)."""

    space: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.space.dim,):
            raise InputError(f"coefficient length {self.coeffs.shape} does not match space dim {self.space.dim}")

    def broken(self):
        """Broken modal coefficients, (T, m) or (T, 2, m)."""
        return self.space.to_broken(self.coeffs)

    def broken_vector(self):
        return self.space.embedding @ self.coeffs

    def as_broken_field(self):
        if self.space.kind in ("broken", "vector_broken"):
            return self
        if self.space.kind == "conforming":
            return BrokenField(BrokenSpace(self.space.mesh, self.space.p), self.broken_vector())
        return BrokenField(VectorBrokenSpace(self.space.mesh, self.space.p), self.broken_vector())

    def __add__(self, other):
        return BrokenField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return BrokenField(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return BrokenField(self.space, self.coeffs * scalar)

    __rmul__ = __mul__


def evaluate(field, elements, ref_points):
    """Values of a scalar or vector field at reference points of given elements.

    ``elements`` (n,) and ``ref_points`` (n, 2) pair up; returns (n,) or (n, 2).
    """
    c = field.broken()
    vals, _, _ = modal_eval(field.space.p, np.asarray(ref_points), derivatives=0)
    elements = np.asarray(elements)
    if c.ndim == 2:
        return np.einsum("nm,nm->n", vals, c[elements])
    return np.einsum("nm,ncm->nc", vals, c[elements])


def locate(mesh, points, tol=1e-10):
    """Element index and reference coordinates for each physical point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    elems = np.full(len(pts), -1, dtype=np.int64)
    refs = np.zeros((len(pts), 2))
    for n, x in enumerate(pts):
        ref = np.einsum("tij,tj->ti", mesh.inv_jac, x - v0)
        low = np.minimum(ref.min(axis=1), 1.0 - ref.sum(axis=1))
        k = int(np.argmax(low))
        if low[k] < -tol:
            raise InputError(f"point {x} lies outside the mesh")
        elems[n] = k
        refs[n] = ref[k]
    return elems, refs


def interpolate(space, f, quad=None):
    """Represent the analytic function ``f`` in ``space``.

    Broken spaces use the element-wise L2 projection; the conforming space
    uses nodal interpolation (Dirichlet nodes are dropped); BDM uses face
    normal values at the face Gauss points plus the L2-best bubble part.
    All reproduce polynomials of degree <= p exactly.  ``f`` maps an
    (..., 2) array of points to (...) values or (..., 2) vectors.
    """
    mesh = space.mesh
    kind = space.kind
    if kind == "conforming":
        vals = np.asarray(f(space.node_coords), dtype=complex)
        return BrokenField(space, vals[space.free_nodes])
    quad = quad or MeshQuadrature.for_degree(mesh, space.p, extra=2)
    vq = quad.vol
    phi, _, _ = quad.vol_table(space.p, derivatives=0)
    fv = np.asarray(f(vq.points), dtype=complex)
    w = vq.ref_weights  # modal basis is orthonormal on the reference triangle
    if kind == "broken":
        c = np.einsum("q,qm,tq->tm", w, phi, fv)
        return BrokenField(space, c.ravel())
    proj = np.einsum("q,qm,tqc->tcm", w, phi, fv)  # (T, 2, m)
    if kind == "vector_broken":
        return BrokenField(space, proj.ravel())
    if kind != "bdm":
        raise InputError(f"cannot interpolate into space kind {kind!r}")
    p, nf = space.p, space.p + 1
    t = space.face_points
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    fpts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    fn = np.einsum("eqc,ec->eq", np.asarray(f(fpts), dtype=complex), mesh.normals)
    coeffs = np.zeros(space.dim, dtype=complex)
    keep = space.face_dof_of_edge >= 0
    idx = space.face_dof_of_edge[keep]
    coeffs[(idx[:, None] * nf + np.arange(nf)[None, :]).ravel()] = fn[keep].ravel()
    dvals = fn[mesh.tri_edges].reshape(mesh.n_triangles, 3 * nf)
    dvals = np.where((mesh.face_labels[mesh.tri_edges] == NEUMANN).repeat(nf, axis=1), 0.0, dvals)
    face_part = np.einsum("tik,tk->ti", space.face_shape, dvals)
    rest = proj.reshape(mesh.n_triangles, -1) - face_part
    nb = space.bubbles.shape[2]
    bub = np.einsum("tij,ti->tj", space.bubbles, rest)
    coeffs[space.n_face_dofs:] = bub.ravel()
    return BrokenField(space, coeffs)


# ---------------------------------------------------------------------------
FIELD_HEADER = "helmdg-field v1"


def write_field(field, path):
    lines = [FIELD_HEADER, field.space.descriptor()]
    lines += [f"{z.real:.17g} {z.imag:.17g}" for z in field.coeffs]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path, space):
    """Read coefficients written by :func:`write_field` into ``space``."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if not rows or rows[0] != FIELD_HEADER:
        raise MeshSpecificationError(f"{path}: missing '{FIELD_HEADER}' header")
    if rows[1] != space.descriptor():
        raise InputError(f"{path}: field is for '{rows[1]}', not '{space.descriptor()}'")
    data = np.array([[float(s) for s in r.split()] for r in rows[2:]])
    return BrokenField(space, data[:, 0] + 1j * data[:, 1])
