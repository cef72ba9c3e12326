"""Errors against analytic solutions and best approximations in the discrete spaces."""
from dataclasses import dataclass

import numpy as np

from .basis import modal_eval
from .dg import vector_table
from .evaluation import MeshQuadrature
from .mesh import ROBIN
from .spaces import BrokenField

EXTRA_ORDER = 6


@dataclass
class ErrorReport:
    """Error of a discrete field against an analytic solution.

    ``energy`` uses the discrete gradient G(u_h) = grad u_h - L(u_h);
    ``local_sq`` holds per-element w^2 ||e||^2_mu + w ||e||^2_{gamma, dK cap
    Gamma_R} + ||grad e||^2_A with the broken gradient.
    """

    energy: float
    l2_mu: float
    robin: float
    grad_A: float
    local_sq: np.ndarray


def _fine_quad(disc):
    return MeshQuadrature(disc.mesh, 2 * disc.p + EXTRA_ORDER)


def _vector_eval(coeffs, q, ref_points, inv_jac=None):
    """Vector broken coefficients (T, 2, m) at reference points -> (T, nq, 2)."""
    vals, _, _ = modal_eval(q, ref_points, derivatives=0)
    return np.einsum("qm,tcm->tqc", vals, coeffs)


def error_norms(disc, uh, case, quad=None):
    """Energy, L2(mu) and Robin-trace errors of ``uh`` against ``case``."""
    mesh, p = disc.mesh, disc.p
    w = disc.coeffs.omega
    quad = quad or _fine_quad(disc)
    cdat = disc.coeffs.on_mesh(mesh)
    uh = uh.as_broken_field() if uh.space.kind != "broken" else uh
    c = uh.broken()
    vq = quad.vol
    phi, grads, _ = quad.vol_table(p, 1)
    uval = np.einsum("qm,tm->tq", phi, c)
    ugrad = np.einsum("tqmk,tm->tqk", grads, c)
    lift = disc.forms.lifting
    lc = (lift.matrix @ uh.coeffs).reshape(mesh.n_triangles, 2, -1)
    lval = _vector_eval(lc, lift.q, vq.ref_points)
    ex = case.u(vq.points)
    eg = case.grad(vq.points)
    e = ex - uval
    eb = eg - ugrad
    ed = eb + lval
    mass_k = np.einsum("tq,tq->t", vq.weights, np.abs(e) ** 2) * cdat.mu_K
    grad_k = np.einsum("tq,tqk,tkl,tql->t", vq.weights, eb.conj(), cdat.A_K, eb).real
    dgrad = np.einsum("tq,tqk,tkl,tql->", vq.weights, ed.conj(), cdat.A_K, ed).real
    fq = quad.face
    faces = np.flatnonzero(mesh.face_labels == ROBIN)
    rob_k = np.zeros(mesh.n_triangles)
    if len(faces):
        phi_f, _, _ = quad.face_table(p, 0)
        owner = mesh.edge_tris[faces, 0]
        uf = np.einsum("fqm,fm->fq", phi_f[faces, 0], c[owner])
        ef = case.u(fq.points[faces]) - uf
        rf = np.einsum("fq,fq->f", fq.weights[faces], np.abs(ef) ** 2) * cdat.gamma_F[faces]
        np.add.at(rob_k, owner, rf)
    l2 = mass_k.sum()
    rb = rob_k.sum()
    return ErrorReport(
        energy=float(np.sqrt(w ** 2 * l2 + w * rb + dgrad)),
        l2_mu=float(np.sqrt(l2)),
        robin=float(np.sqrt(rb)),
        grad_A=float(np.sqrt(grad_k.sum())),
        local_sq=w ** 2 * mass_k + w * rob_k + grad_k,
    )


def best_conforming_energy(disc, case, quad=None):
    """min over conforming v_h of the energy error (Galerkin energy projection)."""
    mesh, p = disc.mesh, disc.p
    w = disc.coeffs.omega
    quad = quad or _fine_quad(disc)
    cdat = disc.coeffs.on_mesh(mesh)
    vq = quad.vol
    phi, grads, _ = quad.vol_table(p, 1)
    ex = case.u(vq.points)
    eg = case.grad(vq.points)
    rhs = w ** 2 * np.einsum("tq,t,tq,qm->tm", vq.weights, cdat.mu_K, ex, phi)
    rhs += np.einsum("tq,tqk,tkl,tqml->tm", vq.weights, eg, cdat.A_K, grads)
    faces = np.flatnonzero(mesh.face_labels == ROBIN)
    fq = quad.face
    if len(faces):
        phi_f, _, _ = quad.face_table(p, 0)
        owner = mesh.edge_tris[faces, 0]
        contrib = w * np.einsum("fq,fq,fqm->fm", fq.weights[faces] * cdat.gamma_F[faces][:, None],
                                case.u(fq.points[faces]), phi_f[faces, 0])
        np.add.at(rhs, owner, contrib)
    e = disc.conforming.embedding
    gram = (e.T @ disc.norms.energy_gram @ e).tocsc()
    from .norms import GramSolver
    x = GramSolver(gram)(e.T @ rhs.ravel())
    vh = BrokenField(disc.conforming, x)
    return error_norms(disc, vh, case, quad).energy, vh


def best_bdm_flux(disc, case, quad=None):
    """min over BDM_p sigma_h of ||A grad u - sigma_h||_{dagger,div}."""
    mesh, p = disc.mesh, disc.p
    quad = quad or _fine_quad(disc)
    ws = disc.norms
    cdat = disc.coeffs.on_mesh(mesh)
    vq = quad.vol
    phi, grads, _ = quad.vol_table(p, 1)
    X = vq.points
    flux = np.einsum("tkl,tql->tqk", cdat.A_K, case.grad(X))
    divf = np.einsum("tkl,tqkl->tq", cdat.A_K, case.hess(X))
    ainv = np.linalg.inv(cdat.A_K)
    psi = vector_table(phi)  # (nq, 2m, 2)
    div_tab = np.concatenate([grads[..., 0], grads[..., 1]], axis=-1)
    rhs = np.einsum("tq,tkl,tql,qik->ti", vq.weights, ainv, flux, psi)
    rhs += np.einsum("tq,t,tq,tqi->ti", vq.weights, ws.div_element_weights, divf, div_tab)
    faces = np.flatnonzero(mesh.face_labels == ROBIN)
    fq = quad.face
    phi_f, _, _ = quad.face_table(p, 0)
    if len(faces):
        owner = mesh.edge_tris[faces, 0]
        n = mesh.normals[faces]
        ff = np.einsum("fkl,fql->fqk", cdat.A_K[owner], case.grad(fq.points[faces]))
        fn = np.einsum("fqk,fk->fq", ff, n)
        pn = np.concatenate([phi_f[faces, 0] * n[:, None, 0:1], phi_f[faces, 0] * n[:, None, 1:2]], axis=-1)
        contrib = np.einsum("fq,fq,fqi->fi", fq.weights[faces] * ws.div_face_weights[faces][:, None], fn, pn)
        np.add.at(rhs, owner, contrib)
    e = disc.bdm.embedding
    sig = ws.d_solver()(e.T @ rhs.ravel())
    sc = (e @ sig).reshape(mesh.n_triangles, 2, -1)
    sval = np.einsum("qm,tcm->tqc", phi, sc)
    sdiv = np.einsum("tqi,ti->tq", div_tab, sc.reshape(mesh.n_triangles, -1))
    d = flux - sval
    dd = divf - sdiv
    tot = np.einsum("tq,tqk,tkl,tql->", vq.weights, d.conj(), ainv, d).real
    tot += np.einsum("tq,t,tq->", vq.weights, ws.div_element_weights, np.abs(dd) ** 2)
    if len(faces):
        pn_s = np.einsum("fqi,fi->fq", pn, sc[owner].reshape(len(faces), -1))
        tot += np.einsum("fq,f,fq->", fq.weights[faces], ws.div_face_weights[faces], np.abs(fn - pn_s) ** 2)
    return float(np.sqrt(max(tot, 0.0))), BrokenField(disc.bdm, sig)
