"""Energy and dagger norms, the duality pairing, conforming projections and 𝒥.

Gram matrices act on broken coefficients: scalar fields in P_p(T_h) and
vector fields in [P_r(T_h)]^2 (r = p by default, the ambient space of BDM_p).  Norms of
conforming or BDM members are taken after embedding.
"""
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import lattice_points, modal_eval, scalar_dim
from .dg import block_diag, face_pair
from .errors import InputError
from .mesh import ROBIN
from .spaces import BrokenField

DENSE_LIMIT = 2000


class GramSolver:
    """Solve with an SPD matrix: dense Cholesky when small, sparse LU otherwise."""

    def __init__(self, matrix):
        self.n = matrix.shape[0]
        if self.n == 0:
            self._solve = None
        elif self.n < DENSE_LIMIT:
            dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
            self._chol = sla.cho_factor(0.5 * (dense + dense.T))
            self._solve = lambda b: sla.cho_solve(self._chol, b)
        else:
            self._lu = spla.splu(sp.csc_matrix(matrix))
            self._solve = self._lu_solve

    def _lu_solve(self, b):
        if np.iscomplexobj(b):
            return self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        return self._lu.solve(b)

    def __call__(self, b):
        if self._solve is None:
            return np.zeros((0,) + np.shape(b)[1:], dtype=np.result_type(b, float))
        return self._solve(b)


class NormWorkspace:
    """Weights and Gram matrices for the norms on one discretisation.

    Parameters
    ----------
    disc : Discretization
        Supplies mesh, coefficients, degree, spaces, quadrature and forms.
    element_weights, face_weights : array, optional
        Override the dagger-1 weights max(1, w^2 h_K^2/t_K^2) a_K/h_K^2 and
        max(1, w h_F/t_F) a_F/h_F (used when a finer mesh must carry the
        weights of a coarser one).  Likewise ``div_element_weights``
        (h_K^2/a_K) and ``div_face_weights`` (h_F/a_F).
    vector_degree : int, optional
        Degree r of the vector fields measured by the dagger-div norm and
        the pairing (default p).  ``bdm`` is the matching BDM_r space.
    """

    def __init__(self, disc, element_weights=None, face_weights=None,
                 div_element_weights=None, div_face_weights=None, vector_degree=None, bdm=None):
        self.disc = disc
        mesh, coeffs, p = disc.mesh, disc.coeffs, disc.p
        forms = disc.forms
        c = coeffs.on_mesh(mesh)
        w = coeffs.omega
        self.mesh = mesh
        rob = mesh.face_labels == ROBIN
        if element_weights is None:
            element_weights = np.maximum(1.0, (w * mesh.h_K / c.theta_K) ** 2) * c.alpha_K / mesh.h_K ** 2
        if face_weights is None:
            face_weights = np.zeros(mesh.n_faces)
            face_weights[rob] = np.maximum(1.0, w * mesh.h_F[rob] / c.theta_F[rob]) * c.alpha_F[rob] / mesh.h_F[rob]
        if div_element_weights is None:
            div_element_weights = mesh.h_K ** 2 / c.alpha_K
        if div_face_weights is None:
            div_face_weights = np.where(rob, mesh.h_F / c.alpha_F, 0.0)
        self.element_weights = element_weights
        self.face_weights = face_weights
        self.div_element_weights = div_element_weights
        self.div_face_weights = div_face_weights

        m = disc.broken.m
        nt = mesh.n_triangles
        quad = disc.quad
        fq = quad.face
        phi_f, _, _ = quad.face_table(p, 0)
        side0 = np.array([1.0, 0.0])[None, :, None, None]
        rtab = phi_f * side0 * rob[:, None, None, None]
        G = forms.G
        ggrad = (G.T @ forms.vector_mass_A @ G).tocsr()
        self.grad_gram = ggrad
        self.dagger1_gram = (sp.diags(np.repeat(element_weights * mesh.det_jac, m))
                             + ggrad + face_pair(rtab, rtab, fq.weights * face_weights[:, None], fq,
                                                 disc.broken.dim, disc.broken.dim)).tocsr()
        self.energy_gram = (w ** 2 * forms.mass + w * forms.robin + ggrad).tocsr()

        # vector side, degree r
        r = p if vector_degree is None else int(vector_degree)
        self.vector_degree = r
        if bdm is None:
            bdm = disc.bdm if r == p else None
        self.bdm = bdm
        mr = scalar_dim(r)
        _, grads, _ = quad.vol_table(r, 1)
        psi_f, _, _ = quad.face_table(r, 0)
        vq = quad.vol
        # div of psi_{c, i} is d_c phi_i; (T, q, 2m)
        div_tab = np.concatenate([grads[..., 0], grads[..., 1]], axis=-1)
        ainv = np.linalg.inv(c.A_K)
        mass_ainv = np.einsum("t,tcd,ij->tcidj", mesh.det_jac, ainv, np.eye(mr)).reshape(nt, 2 * mr, 2 * mr)
        div_blocks = np.einsum("tq,tqi,tqj->tij", vq.weights * div_element_weights[:, None], div_tab, div_tab)
        wn = np.concatenate([psi_f * mesh.normals[:, None, None, None, 0],
                             psi_f * mesh.normals[:, None, None, None, 1]], axis=-1) * side0 * rob[:, None, None, None]
        nvec = nt * 2 * mr
        self.daggerdiv_gram = (block_diag(mass_ainv + div_blocks)
                               + face_pair(wn, wn, fq.weights * div_face_weights[:, None], fq, nvec, nvec)).tocsr()

        # duality pairing w^H Pi phi
        phi_v, _, _ = quad.vol_table(p, 0)
        d_blocks = np.einsum("q,tqi,qj->tij", vq.ref_weights, div_tab, phi_v) * mesh.det_jac[:, None, None]
        div_pair = block_diag(d_blocks)
        rn = face_pair(wn, rtab, fq.weights, fq, nvec, disc.broken.dim)
        q = forms.lifting.q
        mq = forms.lifting.vector_space.m
        # cross mass [P_r]^2 x [P_q]^2: the modal bases are nested
        k = min(mr, mq)
        sel = np.zeros((2 * mr, 2 * mq))
        sel[:k, :k] = np.eye(k)
        sel[mr:mr + k, mq:mq + k] = np.eye(k)
        cross = block_diag(mesh.det_jac[:, None, None] * sel[None])
        self.pairing_matrix = (cross @ G + div_pair - rn).tocsr()
        self.div_matrix = div_pair
        self._gsolve = None
        self._dsolve = None
        self._avg = None

    # -- conforming Gram systems --------------------------------------------------
    @property
    def conforming_gram(self):
        e = self.disc.conforming.embedding
        return (e.T @ self.dagger1_gram @ e).tocsr()

    @property
    def bdm_gram(self):
        e = self.bdm.embedding
        return (e.T @ self.daggerdiv_gram @ e).tocsr()

    def g_solver(self):
        if self._gsolve is None:
            self._gsolve = GramSolver(self.conforming_gram)
        return self._gsolve

    def d_solver(self):
        if self._dsolve is None:
            self._dsolve = GramSolver(self.bdm_gram)
        return self._dsolve

    # -- averaging ---------------------------------------------------------------
    @property
    def averaging_to_conforming(self):
        """Sparse map broken coefficients -> free conforming node values."""
        if self._avg is None:
            cs = self.disc.conforming
            mesh = self.mesh
            p, m = cs.p, cs.m
            vander, _, _ = modal_eval(p, lattice_points(p), derivatives=0)  # (nodes, modal)
            nt = mesh.n_triangles
            nodes = cs.local_to_global  # (T, nodes)
            count = np.bincount(nodes.ravel(), minlength=cs.n_nodes).astype(float)
            rows = np.broadcast_to(nodes[:, :, None], (nt, m, m))
            cols = np.broadcast_to(np.arange(nt)[:, None, None] * m + np.arange(m)[None, None, :], (nt, m, m))
            vals = np.broadcast_to(vander[None], (nt, m, m)) / count[nodes][:, :, None]
            full = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(cs.n_nodes, nt * m))
            self._avg = full[cs.free_nodes].tocsr()
        return self._avg

    @property
    def averaging_matrix(self):
        """Broken -> broken map v -> 𝒥v."""
        return (self.disc.conforming.embedding @ self.averaging_to_conforming).tocsr()


# ---------------------------------------------------------------------------
def _coeffs(field, ws, vector=False):
    if isinstance(field, BrokenField):
        return field.broken_vector()
    c = np.asarray(field)
    return c


def _quad_form(gram, v):
    return float(max(np.real(np.vdot(v, gram @ v)), 0.0))


def energy_norm(v, ws):
    """Broken energy norm of a scalar field (BrokenField or broken coefficients)."""
    return np.sqrt(_quad_form(ws.energy_gram, _coeffs(v, ws)))


def dagger1_norm(v, ws):
    return np.sqrt(_quad_form(ws.dagger1_gram, _coeffs(v, ws)))


def daggerdiv_norm(w, ws):
    """Dagger-div norm of a vector field in [P_p]^2 (BDM member or broken coefficients)."""
    return np.sqrt(_quad_form(ws.daggerdiv_gram, _coeffs(w, ws)))


def duality_pairing(phi, w, ws):
    """(G(phi), w) + (phi, div w) - (phi, w.n)_{Gamma_R} for scalar phi and vector w."""
    return complex(np.vdot(_coeffs(w, ws), ws.pairing_matrix @ _coeffs(phi, ws)))


def project_g(v, ws):
    """Conforming field minimising the dagger-1 distance to ``v``.

    ``v`` is a scalar BrokenField (any scalar space) or broken coefficients.
    Returns a BrokenField in the conforming space (zero if that space is empty).
    """
    cs = ws.disc.conforming
    b = _coeffs(v, ws)
    rhs = cs.embedding.T @ (ws.dagger1_gram @ b)
    return BrokenField(cs, ws.g_solver()(rhs))


def project_d(w, ws):
    """BDM field minimising the dagger-div distance to ``w`` ([P_p]^2 coefficients or field)."""
    ds = ws.disc.bdm
    b = _coeffs(w, ws)
    rhs = ds.embedding.T @ (ws.daggerdiv_gram @ b)
    return BrokenField(ds, ws.d_solver()(rhs))


def averaging_J(v, ws):
    """Nodal averaging onto the conforming space, Dirichlet nodes set to zero."""
    b = _coeffs(v, ws)
    if b.shape[0] != ws.disc.broken.dim:
        raise InputError("averaging needs a scalar broken field")
    return BrokenField(ws.disc.conforming, ws.averaging_to_conforming @ b)
