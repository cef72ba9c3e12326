"""Sampled approximation factors of the dual problems.

For a source s (a broken P_p field psi on the working mesh, or a face-wise
P_p field Psi on the Robin boundary) the dual solution is computed on one
uniform refinement of the working mesh with conforming elements of degree
p + 1: U = X s.  The best-approximation errors by conforming P_p and BDM_p
fields on the working mesh are quadratic forms in s,

    Q(s) = min_c || Y_t(s) - Y_c c ||^2,

where the rows of the Y matrices are weighted point values at fine-mesh
quadrature points carrying the working-mesh norm weights.  The factor is
sqrt of the largest eigenvalue of Q against the source norm, found by a
dense Hermitian eigensolve or by power iteration.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import modal_eval
from .errors import InputError
from .evaluation import MeshQuadrature
from .mesh import ROBIN, uniform_refine
from .norms import GramSolver
from .solver import _factor
from .spaces import ConformingScalarSpace

DENSE_SOURCE_LIMIT = 1500
POWER_TOL = 1e-6
POWER_CAP = 200


@dataclass
class ApproximationFactors:
    """The four sampled factors and their combinations."""

    check_g: float
    check_d: float
    tilde_g: float
    tilde_d: float
    info: dict = field(default_factory=dict)

    @property
    def gamma_g(self):
        return float(np.sqrt(4 * self.check_g ** 2 + 2 * self.tilde_g ** 2))

    @property
    def gamma_d(self):
        return float(np.sqrt(4 * self.check_d ** 2 + 2 * self.tilde_d ** 2))

    @property
    def check_ba(self):
        return float(np.hypot(self.check_g, self.check_d))

    @property
    def tilde_ba(self):
        return float(np.hypot(self.tilde_g, self.tilde_d))

    @property
    def gamma_ba(self):
        return float(np.hypot(self.gamma_g, self.gamma_d))


# ---------------------------------------------------------------------------
def _coarse_at(coarse, fine_parent, points, p, derivatives=1):
    """Coarse modal basis at points of fine elements: values (T, nq, m), grads (T, nq, m, 2)."""
    par = fine_parent
    v0 = coarse.vertices[coarse.triangles[par, 0]]
    inv = coarse.inv_jac[par]
    ref = np.einsum("tij,t...j->t...i", inv, points - v0[:, None, :])
    vals, grads, _ = modal_eval(p, ref, derivatives)
    if grads is not None:
        grads = np.einsum("tqmk,tkl->tqml", grads, inv)
    return vals, grads


def _rows_matrix(blocks, cols_elem, m, n_cols):
    """Sparse matrix whose row r = (t, q) has entries blocks[t, q, :] at columns cols_elem[t]*m + i."""
    t, nq, mm = blocks.shape
    rows = np.broadcast_to(np.arange(t * nq).reshape(t, nq, 1), blocks.shape)
    cols = np.broadcast_to((cols_elem[:, None, None] * m + np.arange(mm)[None, None, :]), blocks.shape)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(t * nq, n_cols))


class DualSampler:
    """Quadratic forms of the approximation factors on one working discretisation."""

    def __init__(self, disc):
        self.disc = disc
        mesh, p = disc.mesh, disc.p
        self.fine_mesh = uniform_refine(mesh, 1)
        fm = self.fine_mesh
        self.fine_space = ConformingScalarSpace(fm, p + 1)
        w = disc.coeffs.omega
        cc = disc.coeffs.on_mesh(mesh)
        cf = disc.coeffs.on_mesh(fm)
        par = fm.parent
        ws = disc.norms
        self.quad = quad = MeshQuadrature(fm, 2 * (p + 1) + 2)
        vq = quad.vol
        nt_f, nq = vq.weights.shape
        mf = self.fine_space.m
        mc = disc.broken.m
        n_bf = nt_f * mf
        n_bc = disc.broken.dim

        # fine broken P_{p+1} and coarse broken P_p at fine volume points
        phi_f, grad_f, _ = quad.vol_table(p + 1, 1)
        val_f = _rows_matrix(np.broadcast_to(phi_f, (nt_f, nq, mf)), np.arange(nt_f), mf, n_bf)
        gx_f = _rows_matrix(grad_f[..., 0], np.arange(nt_f), mf, n_bf)
        gy_f = _rows_matrix(grad_f[..., 1], np.arange(nt_f), mf, n_bf)
        phi_c, grad_c = _coarse_at(mesh, par, vq.points, p)
        val_c = _rows_matrix(phi_c, par, mc, n_bc)
        gx_c = _rows_matrix(grad_c[..., 0], par, mc, n_bc)
        gy_c = _rows_matrix(grad_c[..., 1], par, mc, n_bc)
        sw = np.sqrt(vq.weights).ravel()
        lA = np.linalg.cholesky(cf.A_K)  # A = L L^T
        l_rep = np.repeat(lA, nq, axis=0)  # per row

        def diag(v):
            return sp.diags(np.asarray(v).ravel())

        def lt_times(gx, gy):
            # rows of L^T grad
            return (sp.vstack([diag(l_rep[:, 0, 0]) @ gx + diag(l_rep[:, 1, 0]) @ gy,
                               diag(l_rep[:, 0, 1]) @ gx + diag(l_rep[:, 1, 1]) @ gy])).tocsr()

        # fine Robin faces, with working-mesh face ids
        fqf = quad.face
        rfaces = np.flatnonzero(fm.face_labels == ROBIN)
        self.rfaces = rfaces
        cparent_face = fm.boundary_parent[rfaces]
        own = fm.edge_tris[rfaces, 0]
        nqf = fqf.nq
        phi_ff, _, _ = quad.face_table(p + 1, 0)
        fval_f = _rows_matrix(phi_ff[rfaces, 0], own, mf, n_bf)
        fpts = fqf.points[rfaces]
        phi_cf, _ = _coarse_at(mesh, par[own], fpts, p, derivatives=0)
        fval_c = _rows_matrix(phi_cf, par[own], mc, n_bc)
        swf = np.sqrt(fqf.weights[rfaces]).ravel()
        nrm = np.repeat(fm.normals[rfaces], nqf, axis=0)
        gam_f = np.repeat(cf.gamma_F[rfaces], nqf)

        # ---- g: ||v||_{dagger,1} rows on conforming fields (G(v) = grad v)
        wk = ws.element_weights[par]
        wf = ws.face_weights[cparent_face]
        ef = self.fine_space.embedding
        ec = disc.conforming.embedding

        def g_rows(val, gx, gy, fval):
            blocks = [diag(sw * np.sqrt(np.repeat(wk, nq))) @ val,
                      diag(np.concatenate([sw, sw])) @ lt_times(gx, gy)]
            if len(rfaces):
                blocks.append(diag(swf * np.sqrt(np.repeat(wf, nqf))) @ fval)
            return sp.vstack(blocks).tocsr()

        # conforming P_{p+1} operator b = -w^2 M - i w R + K on the fine mesh
        mass_f = sp.diags(np.repeat(cf.mu_K * fm.det_jac, mf))
        lg = diag(np.concatenate([sw, sw])) @ lt_times(gx_f, gy_f)
        op = -w ** 2 * mass_f + lg.T @ lg
        if len(rfaces):
            rr = diag(swf * np.sqrt(gam_f)) @ fval_f
            op = op - 1j * w * (rr.T @ rr)
        self._fine_matrix = (ef.T @ op @ ef).tocsr()
        self.Yg_u = (g_rows(val_f, gx_f, gy_f, fval_f) @ ef).tocsr()
        self.Yg_c = (g_rows(val_c, gx_c, gy_c, fval_c) @ ec).tocsr()

        # ---- d: ||sigma||_{dagger,div} rows; sigma* = A grad U, div sigma* = -w^2 mu U - w mu psi
        dk = ws.div_element_weights[par]
        df = ws.div_face_weights[cparent_face]
        mu_rep = np.repeat(cf.mu_K, nq)
        s_div = sw * np.sqrt(np.repeat(dk, nq))
        s_nf = swf * np.sqrt(np.repeat(df, nqf))
        # target, U part: L^{-1} A grad U = L^T grad U
        yd_u = [diag(np.concatenate([sw, sw])) @ lt_times(gx_f, gy_f),
                diag(s_div * (-w ** 2) * mu_rep) @ val_f]
        if len(rfaces):
            yd_u.append(diag(s_nf * (-1j * w * gam_f)) @ fval_f)
        self.Yd_u = (sp.vstack(yd_u) @ ef).tocsr()
        # BDM side: coarse vector broken P_p at fine points, through L^{-1}
        bdm = disc.bdm
        eb = bdm.embedding
        linv = np.linalg.inv(l_rep)
        zeros = sp.csr_matrix(val_c.shape)
        vx = sp.hstack([val_c, zeros]).tocsr()  # x-component values, vector dof ordering per element
        vy = sp.hstack([zeros, val_c]).tocsr()
        # reorder columns from [x block | y block] to element-wise component-major
        perm = self._vector_perm(mesh.n_triangles, mc)
        vx, vy = vx[:, perm], vy[:, perm]
        divc = sp.hstack([gx_c, gy_c]).tocsr()[:, perm]
        rows_b = [sp.vstack([diag(sw * linv[:, 0, 0]) @ vx + diag(sw * linv[:, 0, 1]) @ vy,
                             diag(sw * linv[:, 1, 0]) @ vx + diag(sw * linv[:, 1, 1]) @ vy]),
                  diag(s_div) @ divc]
        if len(rfaces):
            fz = sp.csr_matrix(fval_c.shape)
            fx = sp.hstack([fval_c, fz]).tocsr()[:, perm]
            fy = sp.hstack([fz, fval_c]).tocsr()[:, perm]
            rows_b.append(diag(s_nf * nrm[:, 0]) @ fx + diag(s_nf * nrm[:, 1]) @ fy)
        self.Yd_c = (sp.vstack(rows_b) @ eb).tocsr()
        n_vol_rows = 2 * nt_f * nq
        self._div_rows = slice(n_vol_rows, n_vol_rows + nt_f * nq)
        self._nrm_rows = slice(n_vol_rows + nt_f * nq, None)

        # ---- sources
        # volume source psi (coarse broken P_p): dual rhs and div target part
        self.src_mass_vol = disc.forms.mass.diagonal().copy()  # ||psi||_mu^2 = psi^H diag psi
        self.rhs_vol = (ef.T @ (val_f.T @ diag(vq.weights.ravel() * mu_rep * w) @ val_c)).tocsr()
        self.Yd_psi_vol = sp.vstack([sp.csr_matrix((n_vol_rows, n_bc)),
                                     diag(s_div * (-w) * mu_rep) @ val_c,
                                     sp.csr_matrix((self.Yd_u.shape[0] - n_vol_rows - nt_f * nq, n_bc))]).tocsr()
        # Robin source Psi: face-wise orthonormal Legendre P_p on working-mesh Robin faces
        cr = np.flatnonzero(mesh.face_labels == ROBIN)
        self.n_robin_src = len(cr) * (p + 1)
        if len(cr):
            cidx = -np.ones(mesh.n_faces, dtype=np.int64)
            cidx[cr] = np.arange(len(cr))
            a = mesh.vertices[mesh.edges[cparent_face, 0]]
            b = mesh.vertices[mesh.edges[cparent_face, 1]]
            t = np.einsum("fqk,fk->fq", fpts - a[:, None, :], b - a) / mesh.h_F[cparent_face][:, None] ** 2
            leg = np.polynomial.legendre.legvander(2 * t - 1, p) * np.sqrt(2 * np.arange(p + 1) + 1)
            leg = leg / np.sqrt(mesh.h_F[cparent_face])[:, None, None]
            psi_face = _rows_matrix(leg, cidx[cparent_face], p + 1, self.n_robin_src)
            self.src_mass_rob = np.repeat(cc.gamma_F[cr], p + 1)
            self.rhs_rob = (ef.T @ (fval_f.T @ diag(fqf.weights[rfaces].ravel() * gam_f * np.sqrt(w)) @ psi_face)).tocsr()
            self.Yd_psi_rob = sp.vstack([sp.csr_matrix((self.Yd_u.shape[0] - len(swf), self.n_robin_src)),
                                         diag(s_nf * np.sqrt(w) * gam_f) @ psi_face]).tocsr()
        self._lu = None
        self._gc = None
        self._dc = None
        self._blocks = {}

    @staticmethod
    def _vector_perm(nt, m):
        # column j of [x-block | y-block] (each nt*m, element-major) -> vector broken index
        k = np.arange(nt)[:, None]
        i = np.arange(m)[None, :]
        xcols = (k * m + i)
        ycols = nt * m + k * m + i
        perm = np.empty(2 * nt * m, dtype=np.int64)
        perm.reshape(nt, 2, m)[:, 0, :] = xcols
        perm.reshape(nt, 2, m)[:, 1, :] = ycols
        return perm

    # -- linear algebra helpers ----------------------------------------------------
    def lu(self):
        if self._lu is None:
            B = self._fine_matrix.conj().tocsr()
            self._lu = _factor(B)
        return self._lu

    def dual_solve(self, rhs):
        return self.lu().solve(np.asarray(rhs, dtype=complex))

    def _parts(self, which, source):
        rhs_m = self.rhs_vol if source == "vol" else self.rhs_rob
        if which == "g":
            return rhs_m, self.Yg_u, None, self.Yg_c
        ys = self.Yd_psi_vol if source == "vol" else self.Yd_psi_rob
        return rhs_m, self.Yd_u, ys, self.Yd_c

    def _ls_solver(self, which):
        if which == "g":
            if self._gc is None:
                y = self.Yg_c
                self._gc = GramSolver((y.T @ y).tocsc()) if y.shape[1] else None
            return self._gc
        if self._dc is None:
            y = self.Yd_c
            self._dc = GramSolver((y.T @ y).real.tocsc()) if y.shape[1] else None
        return self._dc

    def blocks(self, which, source):
        """Normal-equation blocks of one factor (cached).

        With targets t = Y_u U + Y_s s and least-squares rows Y_c:
        H_uu = Y_u^H Y_u, H_us = Y_u^H Y_s, H_ss = Y_s^H Y_s, C_u = Y_c^T Y_u,
        C_s = Y_c^T Y_s.
        """
        key = (which, source)
        if key not in self._blocks:
            rhs_m, yu, ys, yc = self._parts(which, source)
            yuh = yu.conj().T.tocsr()
            blk = {"rhs": rhs_m, "Huu": (yuh @ yu).tocsr(), "Cu": (yc.T @ yu).tocsr()}
            if ys is not None:
                blk["Hus"] = (yuh @ ys).tocsr()
                blk["Hss"] = (ys.conj().T @ ys).tocsr()
                blk["Cs"] = (yc.T @ ys).tocsr()
            self._blocks[key] = blk
        return self._blocks[key]

    def apply(self, which, source, s):
        """Q s, with Q(s) = min_c ||Y_t(s) - Y_c c||^2 the Hermitian form of the factor."""
        blk = self.blocks(which, source)
        s = np.asarray(s, dtype=complex)
        x = self.dual_solve(blk["rhs"] @ s)
        hu = blk["Huu"] @ x
        c = blk["Cu"] @ x
        if "Hus" in blk:
            hu = hu + blk["Hus"] @ s
            c = c + blk["Cs"] @ s
        solver = self._ls_solver(which)
        g = solver(c) if solver is not None else None
        zu = hu if g is None else hu - blk["Cu"].conj().T @ g
        out = blk["rhs"].T @ self.lu().solve(np.asarray(zu, dtype=complex), trans="H")
        if "Hus" in blk:
            zs = blk["Hus"].conj().T @ x + blk["Hss"] @ s
            if g is not None:
                zs = zs - blk["Cs"].conj().T @ g
            out = out + zs
        return out

    def dense_form(self, which, source):
        """Q as a dense Hermitian matrix."""
        blk = self.blocks(which, source)
        X = self.dual_solve(blk["rhs"].toarray())
        q = X.conj().T @ (blk["Huu"] @ X)
        c = blk["Cu"] @ X
        if "Hus" in blk:
            cross = X.conj().T @ blk["Hus"].toarray()
            q = q + cross + cross.conj().T + blk["Hss"].toarray()
            c = c + blk["Cs"].toarray()
        solver = self._ls_solver(which)
        if solver is not None:
            q = q - c.conj().T @ solver(c)
        return 0.5 * (q + q.conj().T)

    def max_factor(self, which, source, dense_limit=DENSE_SOURCE_LIMIT, seed=0, iterative="lanczos"):
        """sqrt of the largest eigenvalue of Q against the source mass.

        Dense Hermitian eigensolve up to ``dense_limit`` sources; beyond that
        Lanczos (``iterative="lanczos"``) or plain power iteration, both
        stopped at relative tolerance POWER_TOL with POWER_CAP iterations.
        """
        n = len(self.src_mass_vol) if source == "vol" else self.n_robin_src
        if n == 0:
            return 0.0, {"method": "empty"}
        mass = self.src_mass_vol if source == "vol" else self.src_mass_rob
        scale = 1.0 / np.sqrt(mass)
        if n <= dense_limit:
            q = self.dense_form(which, source) * np.outer(scale, scale)
            lam = sla.eigvalsh(q)[-1]
            return float(np.sqrt(max(lam, 0.0))), {"method": "dense", "n": n}
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n) + 0j
        if iterative == "lanczos":
            counter = [0]

            def matvec(x):
                counter[0] += 1
                return scale * self.apply(which, source, scale * np.asarray(x).ravel())

            op = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
            try:
                lam = spla.eigsh(op, k=1, which="LA", v0=v0, tol=POWER_TOL, maxiter=POWER_CAP,
                                 return_eigenvectors=False)[0]
                converged = True
            except spla.ArpackNoConvergence as exc:
                lam = exc.eigenvalues[0] if len(exc.eigenvalues) else 0.0
                converged = False
            return float(np.sqrt(max(float(np.real(lam)), 0.0))), {
                "method": "lanczos", "n": n, "iterations": counter[0], "converged": converged}
        v = v0 / np.sqrt(np.sum(mass * np.abs(v0) ** 2))
        lam_old = 0.0
        converged = False
        for it in range(1, POWER_CAP + 1):
            qv = self.apply(which, source, v)
            lam = float(np.real(np.vdot(v, qv)))
            v = qv / mass
            nv = np.sqrt(np.sum(mass * np.abs(v) ** 2))
            if nv == 0:
                lam = 0.0
                converged = True
                break
            v /= nv
            if abs(lam - lam_old) <= POWER_TOL * max(abs(lam), 1e-300):
                converged = True
                break
            lam_old = lam
        return float(np.sqrt(max(lam, 0.0))), {"method": "power", "n": n, "iterations": it, "converged": converged}


def sample_gamma_ba(disc, dense_limit=DENSE_SOURCE_LIMIT, seed=0, which=("g", "d"), iterative="lanczos"):
    """Sampled approximation factors of ``disc`` (see module docstring).

    With no Robin boundary the two boundary factors are exactly 0.
    """
    if disc.conforming.dim == 0 and "g" in which:
        raise InputError("approximation factors need a nontrivial conforming space")
    sampler = DualSampler(disc)
    info = {}
    vals = {}
    for w in ("g", "d"):
        for src in ("vol", "rob"):
            key = f"{'check' if src == 'vol' else 'tilde'}_{w}"
            if w not in which:
                vals[key] = float("nan")
                continue
            if src == "rob" and sampler.n_robin_src == 0:
                vals[key] = 0.0
                info[key] = {"method": "empty"}
                continue
            vals[key], info[key] = sampler.max_factor(w, src, dense_limit, seed, iterative)
            if info[key].get("converged") is False:
                info[key]["warning"] = "iteration cap reached; last iterate reported"
    return ApproximationFactors(vals["check_g"], vals["check_d"], vals["tilde_g"], vals["tilde_d"], info)
