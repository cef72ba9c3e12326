"""Jumps, averages, lifting, discrete gradient and the IPDG forms.

Matrices act on broken modal coefficients and are real; for a sesquilinear
form ``f`` the matrix entry ``F[i, j]`` is ``f(phi_j, phi_i)``, so
``f(u, v) = v^H F u``.  Vector fields live in the broken space [P_q]^2 with
q = p (default) or p + 1.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import modal_eval, scalar_dim
from .errors import InputError, NumericalError
from .evaluation import MeshQuadrature
from .mesh import DIRICHLET, INTERIOR, ROBIN
from .spaces import BrokenField, BrokenSpace, VectorBrokenSpace, locate


def block_diag(blocks):
    """Sparse block-diagonal matrix from a (T, a, b) array."""
    t, a, b = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(t), np.arange(t + 1)), shape=(t * a, t * b)).tocsr()


def face_pair(left, right, weights, quad, dim_left, dim_right):
    """Sparse matrix of sum_F int_F left_i * right_j over both face sides.

    ``left`` (E, 2, nq, a) and ``right`` (E, 2, nq, b) hold per-side tables
    already multiplied by any sign or averaging factors; ``weights`` (E, nq).
    """
    blocks = np.einsum("esqa,eq,erqb->ersab", left, weights, right)
    e_n, _, _, a, b = blocks.shape
    tri = quad.tri
    ok = quad.has_side
    rows = tri[:, None, :, None, None] * a + np.arange(a)[None, None, None, :, None]
    cols = tri[:, :, None, None, None] * b + np.arange(b)[None, None, None, None, :]
    rows = np.broadcast_to(rows, blocks.shape)
    cols = np.broadcast_to(cols, blocks.shape)
    mask = np.broadcast_to((ok[:, :, None] & ok[:, None, :])[:, :, :, None, None], blocks.shape)
    mat = sp.csr_matrix((blocks[mask], (rows[mask], cols[mask])), shape=(dim_left, dim_right))
    mat.sum_duplicates()
    return mat


def jump_factor(mesh):
    """(E, 2) coefficients so that [[phi]] = sum_s factor[e, s] * phi_s."""
    f = np.zeros((mesh.n_faces, 2))
    inner = mesh.face_labels == INTERIOR
    dir_ = mesh.face_labels == DIRICHLET
    f[inner] = [1.0, -1.0]
    f[dir_, 0] = 1.0
    return f


def average_factor(mesh):
    """(E, 2) coefficients so that {{w}} = sum_s factor[e, s] * w_s."""
    f = np.zeros((mesh.n_faces, 2))
    inner = mesh.face_labels == INTERIOR
    f[inner] = 0.5
    f[~inner, 0] = 1.0
    return f


def vector_table(values):
    """Expand scalar tables (..., m) to vector tables (..., 2m, 2), component-major."""
    m = values.shape[-1]
    out = np.zeros(values.shape[:-1] + (2 * m, 2))
    out[..., :m, 0] = values
    out[..., m:, 1] = values
    return out


# ---------------------------------------------------------------------------
def jump(field, face, points):
    """Jump of a scalar broken field at physical points on ``face``."""
    mesh = field.space.mesh
    pts = np.atleast_2d(points)
    f = jump_factor(mesh)[face]
    out = np.zeros(len(pts), dtype=complex)
    for s in range(2):
        k = mesh.edge_tris[face, s]
        if k < 0 or f[s] == 0:
            continue
        out += f[s] * _values_on(field, k, pts)
    return out


def average(field, face, points):
    """Average of a vector broken field at physical points on ``face``."""
    mesh = field.space.mesh
    pts = np.atleast_2d(points)
    f = average_factor(mesh)[face]
    out = np.zeros((len(pts), 2), dtype=complex)
    for s in range(2):
        k = mesh.edge_tris[face, s]
        if k < 0 or f[s] == 0:
            continue
        out += f[s] * _values_on(field, k, pts)
    return out


def _values_on(field, k, pts):
    mesh = field.space.mesh
    v0 = mesh.vertices[mesh.triangles[k, 0]]
    ref = (pts - v0) @ mesh.inv_jac[k].T
    vals, _, _ = modal_eval(field.space.p, ref, derivatives=0)
    c = field.broken()[k]
    return vals @ c.T if c.ndim == 2 else vals @ c


# ---------------------------------------------------------------------------
class LiftingOperator:
    """Lifting L: broken P_p -> broken [P_q]^2 and the discrete gradient.

    ``matrix`` maps scalar broken coefficients to vector broken ones;
    ``rhs`` is the face-coupling matrix (L phi, w) = w^T rhs phi.
    """

    def __init__(self, mesh, p, q=None, quad=None):
        self.mesh = mesh
        self.p = p
        self.q = p if q is None else q
        if self.q not in (p, p + 1):
            raise InputError("lifting degree must be p or p + 1")
        self.scalar_space = BrokenSpace(mesh, p)
        self.vector_space = VectorBrokenSpace(mesh, self.q)
        self.quad = quad or MeshQuadrature.for_degree(mesh, p)
        fq = self.quad.face
        phi, _, _ = self.quad.face_table(p, 0)
        psi, _, _ = self.quad.face_table(self.q, 0)
        jf = jump_factor(mesh)
        af = average_factor(mesh)
        self.jump_table = phi * jf[:, :, None, None]
        wn = np.concatenate([psi * mesh.normals[:, None, None, None, 0],
                             psi * mesh.normals[:, None, None, None, 1]], axis=-1)
        self.avg_normal_table = wn * af[:, :, None, None]
        ns, nv = self.scalar_space.dim, self.vector_space.dim
        self.rhs = face_pair(self.avg_normal_table, self.jump_table, fq.weights, fq, nv, ns)
        # orthonormal modal basis: vector mass is det(J) * I per element
        inv_mass = np.repeat(1.0 / mesh.det_jac, 2 * self.vector_space.m)
        self.matrix = sp.diags(inv_mass) @ self.rhs
        # element gradient of P_p represented exactly in [P_q]^2 (q >= p - 1)
        vq = self.quad.vol
        _, grads, _ = self.quad.vol_table(p, 1)
        psi_v, _, _ = self.quad.vol_table(self.q, 0)
        blocks = np.einsum("q,qi,tqjc->tcij", vq.ref_weights, psi_v, grads)
        self.gradient = block_diag(blocks.reshape(mesh.n_triangles, 2 * self.vector_space.m, -1))
        self.discrete_gradient = (self.gradient - self.matrix).tocsr()


def lift(op, field):
    if field.space.kind != "broken":
        field = field.as_broken_field()
    return BrokenField(op.vector_space, op.matrix @ field.coeffs)


def discrete_gradient(op, field):
    if field.space.kind != "broken":
        field = field.as_broken_field()
    return BrokenField(op.vector_space, op.discrete_gradient @ field.coeffs)


# ---------------------------------------------------------------------------
@dataclass
class FormMatrices:
    """Broken-space matrices of the IPDG discretisation.

    ``a_h`` uses the discrete-gradient presentation; ``a_h_jump`` the
    classical one with consistency and symmetry terms.  ``penalty_matrix``
    is sum_F beta_F/h_F ([[.]], [[.]])_F over interior and Dirichlet faces.
    """

    omega: float
    mass: sp.csr_matrix          # (mu ., .)
    robin: sp.csr_matrix         # (gamma ., .)_{Gamma_R}
    stiffness: sp.csr_matrix     # (A grad ., grad .)_{T_h}, broken
    consistency: sp.csr_matrix   # ({{A grad phi}}.n_F, [[v]])_F as F[v, phi]
    penalty_matrix: sp.csr_matrix
    vector_mass_A: sp.csr_matrix
    lifting: LiftingOperator
    s_h: sp.csr_matrix
    a_h: sp.csr_matrix
    a_h_jump: sp.csr_matrix
    b_h: sp.csr_matrix
    beta0: float
    penalty_mode: str

    @property
    def G(self):
        return self.lifting.discrete_gradient


def assemble_forms(spaces, coeffs, penalty=10.0, lift_degree=None, penalty_mode="lifted", quad=None):
    """Assemble s_h, a_h (both presentations), mass, Robin mass and b_h.

    ``spaces`` is the tuple from ``make_spaces`` or a BrokenSpace.
    ``penalty_mode='lifted'`` gives s_h = sum beta_F/h_F([[.]],[[.]]) -
    (A L ., L .); ``'jump'`` keeps only the jump penalty.  beta_F =
    penalty * p^2 * alpha_F.
    """
    space = spaces[0] if isinstance(spaces, tuple) else spaces
    if not penalty > 0:
        raise InputError("penalty must be positive")
    if penalty_mode not in ("lifted", "jump"):
        raise InputError(f"unknown penalty mode {penalty_mode!r}")
    mesh, p = space.mesh, space.p
    cdat = coeffs.on_mesh(mesh)
    quad = quad or MeshQuadrature.for_degree(mesh, p)
    op = LiftingOperator(mesh, p, lift_degree, quad)
    m = space.m
    nt = mesh.n_triangles
    fq = quad.face

    mass = sp.diags(np.repeat(cdat.mu_K * mesh.det_jac, m)).tocsr()
    vq = quad.vol
    phi_f, grad_f, _ = quad.face_table(p, 1)
    _, grads, _ = quad.vol_table(p, 1)
    stiff_blocks = np.einsum("tq,tqik,tkl,tqjl->tji", vq.weights, grads, cdat.A_K, grads)
    stiffness = block_diag(stiff_blocks)

    rob = (mesh.face_labels == ROBIN).astype(float)
    rtab = phi_f * (rob[:, None, None, None] * np.array([1.0, 0.0])[None, :, None, None])
    robin = face_pair(rtab, rtab, fq.weights * cdat.gamma_F[:, None], fq, space.dim, space.dim)

    beta = penalty * p ** 2 * cdat.alpha_F / mesh.h_F
    penalty_matrix = face_pair(op.jump_table, op.jump_table, fq.weights * beta[:, None], fq, space.dim, space.dim)

    a_grad = np.einsum("eskl,esqjl->esqjk", cdat.A_K[fq.tri], grad_f)
    flux_n = np.einsum("esqjk,ek->esqj", a_grad, mesh.normals) * average_factor(mesh)[:, :, None, None]
    consistency = face_pair(op.jump_table, flux_n, fq.weights, fq, space.dim, space.dim)

    mq = op.vector_space.m
    ma_blocks = np.einsum("t,tcd,ij->tcidj", mesh.det_jac, cdat.A_K, np.eye(mq)).reshape(nt, 2 * mq, 2 * mq)
    vector_mass_A = block_diag(ma_blocks)

    L = op.matrix
    if penalty_mode == "lifted":
        s_h = (penalty_matrix - L.T @ vector_mass_A @ L).tocsr()
    else:
        s_h = penalty_matrix
    G = op.discrete_gradient
    a_h = (G.T @ vector_mass_A @ G + s_h).tocsr()
    a_h_jump = (stiffness - consistency - consistency.T + penalty_matrix).tocsr()
    if penalty_mode == "jump":
        a_h_jump = (a_h_jump + L.T @ vector_mass_A @ L).tocsr()
    w = coeffs.omega
    b_h = (-w ** 2 * mass - 1j * w * robin + a_h).tocsr()
    return FormMatrices(w, mass, robin, stiffness, consistency.tocsr(), penalty_matrix, vector_mass_A, op,
                        s_h, a_h, a_h_jump, b_h, float(penalty), penalty_mode)


def coercivity_margin(forms, workspace):
    """Smallest generalised eigenvalue of s_h against ||v - J v||^2_{dagger,1}.

    ``workspace`` is a :class:`helmdg.norms.NormWorkspace` on the same mesh.
    The kernel (conforming fields, where both forms vanish) is removed.
    """
    import scipy.linalg as sla

    n = forms.s_h.shape[0]
    if n > 4000:
        raise NumericalError("coercivity margin is a dense computation; mesh too large")
    ident = np.eye(n)
    resid = ident - workspace.averaging_matrix.toarray()
    q = resid.T @ workspace.dagger1_gram.toarray() @ resid
    q = 0.5 * (q + q.T)
    s = forms.s_h.toarray()
    s = 0.5 * (s + s.T)
    lam, vec = np.linalg.eigh(q)
    keep = lam > 1e-10 * lam.max()
    if not keep.any():
        raise NumericalError("non-conforming complement is empty")
    z = vec[:, keep]
    qz = z.T @ q @ z
    sz = z.T @ s @ z
    try:
        ev = sla.eigh(sz, qz, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"surrogate norm matrix singular on the complement: {exc}") from exc
    return float(ev.min())
