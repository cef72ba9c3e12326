"""Residual a posteriori estimator, data oscillation and reliability bookkeeping."""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .discretization import Discretization
from .mesh import DIRICHLET, INTERIOR, NEUMANN, ROBIN
from .norms import GramSolver, averaging_J, dagger1_norm
from .solver import ManufacturedCase, load_vector

TERMS = ("volume", "flux_jump", "solution_jump", "dirichlet", "neumann", "robin")


@dataclass
class EstimatorReport:
    """Per-element estimator terms (squared) and global summaries.

    ``terms`` has shape (T, 6) in the order of ``TERMS``; ``eta_K`` is the
    square root of the row sums.
    """

    terms: np.ndarray
    eta_K: np.ndarray
    eta: float
    rc_surrogate: float
    rc_jump_bound: float
    jump_sum: float
    osc_K: np.ndarray = None
    osc: float = float("nan")
    effectivity: float = float("nan")
    notes: list = field(default_factory=list)

    def to_csv(self):
        """Lossless CSV: one row per element, then ``#``-prefixed summary lines."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["element", *TERMS, "eta_K"])
        for k in range(len(self.eta_K)):
            w.writerow([k, *(repr(float(x)) for x in self.terms[k]), repr(float(self.eta_K[k]))])
        for key in ("eta", "rc_surrogate", "rc_jump_bound", "osc"):
            buf.write(f"# {key}={float(getattr(self, key))!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [r for r in text.splitlines() if r and not r.startswith("#")]
        summary = dict(r[2:].split("=", 1) for r in text.splitlines() if r.startswith("# "))
        data = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:]])
        return cls(terms=data[:, :6], eta_K=data[:, 6], eta=float(summary["eta"]),
                   rc_surrogate=float(summary["rc_surrogate"]), rc_jump_bound=float(summary["rc_jump_bound"]),
                   jump_sum=float("nan"), osc=float(summary["osc"]))


def _data(data):
    return data.data() if isinstance(data, ManufacturedCase) else data


def compute_eta(disc, uh, data, with_oscillation=True):
    """Residual estimator eta_K for a broken solution ``uh``.

    Interior jump terms are integrated over the whole of each interior face
    of dK (so every interior face enters both neighbours), boundary terms
    per label, with inhomogeneous Neumann/Robin data subtracted.
    """
    data = _data(data)
    mesh, p = disc.mesh, disc.p
    w = disc.coeffs.omega
    cdat = disc.coeffs.on_mesh(mesh)
    quad = disc.quad
    nt = mesh.n_triangles
    c = uh.broken()
    vq = quad.vol
    phi, grads, hess = quad.vol_table(p, 2)
    uval = np.einsum("qm,tm->tq", phi, c)
    lap = np.einsum("tqmkl,tkl,tm->tq", hess, cdat.A_K, c)
    fv = np.asarray(data.f(vq.points, cdat.mu_K[:, None], cdat.A_K[:, None]), dtype=complex)
    res = fv + w ** 2 * cdat.mu_K[:, None] * uval + lap
    terms = np.zeros((nt, 6))
    terms[:, 0] = mesh.h_K ** 2 / cdat.alpha_K * np.einsum("tq,tq->t", vq.weights, np.abs(res) ** 2)

    fq = quad.face
    phi_f, grad_f, _ = quad.face_table(p, 1)
    cf = c[fq.tri]  # (E, 2, m)
    trace = np.einsum("esqm,esm->esq", phi_f, cf)
    flux = np.einsum("esqmk,eskl,el,esm->esq", grad_f, cdat.A_K[fq.tri], mesh.normals, cf)
    wts = fq.weights
    inner = np.flatnonzero(mesh.face_labels == INTERIOR)
    fj = np.einsum("eq,eq->e", wts[inner], np.abs(flux[inner, 0] - flux[inner, 1]) ** 2)
    sj = np.einsum("eq,eq->e", wts[inner], np.abs(trace[inner, 0] - trace[inner, 1]) ** 2)
    for s in range(2):
        k = mesh.edge_tris[inner, s]
        np.add.at(terms[:, 1], k, mesh.h_K[k] / cdat.alpha_K[k] * fj)
        np.add.at(terms[:, 2], k, cdat.alpha_K[k] / mesh.h_K[k] * sj)

    def boundary(label):
        faces = np.flatnonzero(mesh.face_labels == label)
        return faces, mesh.edge_tris[faces, 0]

    faces, own = boundary(DIRICHLET)
    if len(faces):
        val = np.einsum("eq,eq->e", wts[faces], np.abs(trace[faces, 0]) ** 2)
        np.add.at(terms[:, 3], own, cdat.alpha_F[faces] / mesh.h_F[faces] * val)
    for col, label in ((4, NEUMANN), (5, ROBIN)):
        faces, own = boundary(label)
        if not len(faces):
            continue
        x = fq.points[faces]
        n = np.broadcast_to(mesh.normals[faces][:, None, :], x.shape)
        A = np.broadcast_to(cdat.A_K[own][:, None], x.shape[:-1] + (2, 2))
        r = flux[faces, 0].astype(complex)
        if label == ROBIN:
            r = r - 1j * w * cdat.gamma_F[faces][:, None] * trace[faces, 0]
            if data.g_robin is not None:
                r = r - data.g_robin(x, n, A, cdat.gamma_F[faces][:, None])
        elif data.g_neumann is not None:
            r = r - data.g_neumann(x, n, A)
        val = np.einsum("eq,eq->e", wts[faces], np.abs(r) ** 2)
        np.add.at(terms[:, col], own, mesh.h_F[faces] / cdat.alpha_F[faces] * val)

    eta_K = np.sqrt(terms.sum(axis=1))
    eta = float(np.sqrt(np.sum(eta_K ** 2)))

    ws = disc.norms
    jv = averaging_J(uh, ws)
    rc = dagger1_norm(uh.broken_vector() - jv.broken_vector(), ws)
    # sum_K alpha_K/h_K ||[[u_h]]||^2 over dK minus Gamma_N, Gamma_R
    jump_sum = float(np.sum(cdat.alpha_K[mesh.edge_tris[inner, 0]] / mesh.h_K[mesh.edge_tris[inner, 0]] * sj)
                     + np.sum(cdat.alpha_K[mesh.edge_tris[inner, 1]] / mesh.h_K[mesh.edge_tris[inner, 1]] * sj))
    faces, own = boundary(DIRICHLET)
    if len(faces):
        val = np.einsum("eq,eq->e", wts[faces], np.abs(trace[faces, 0]) ** 2)
        jump_sum += float(np.sum(cdat.alpha_K[own] / mesh.h_K[own] * val))
    from .mesh import mesh_scalars
    ms = mesh_scalars(mesh, disc.coeffs)
    factor = max(1.0, ms.max_F, ms.max_K ** 2)
    report = EstimatorReport(terms, eta_K, eta, rc, float(np.sqrt(factor * jump_sum)), jump_sum)
    if with_oscillation:
        osc_K, osc = oscillation(data.f, disc)
        report.osc_K = osc_K
        report.osc = osc
    return report


def oscillation(f, disc, extra_order=4):
    """Patch oscillation osc_{K~} (vertex patches) and the global total.

    Returns (osc_K~ per element, sqrt(sum_K h_K^2 ||f - Pi_p f||^2_{mu,K})).
    ``f`` follows the ``f(x, mu, A)`` convention of :class:`ProblemData`.
    """
    from .evaluation import MeshQuadrature

    mesh, p = disc.mesh, disc.p
    cdat = disc.coeffs.on_mesh(mesh)
    quad = MeshQuadrature(mesh, 2 * p + 2 + extra_order)
    vq = quad.vol
    phi, _, _ = quad.vol_table(p, 0)
    fv = np.asarray(f(vq.points, cdat.mu_K[:, None], cdat.A_K[:, None]), dtype=complex)
    proj = np.einsum("q,qm,tq->tm", vq.ref_weights, phi, fv)
    r = fv - proj @ phi.T
    local = mesh.h_K ** 2 * cdat.mu_K * np.einsum("tq,tq->t", vq.weights, np.abs(r) ** 2)
    patches = mesh.vertex_patches()
    osc_K = np.sqrt(np.array([local[pt].sum() for pt in patches]))
    return osc_K, float(np.sqrt(local.sum()))


@dataclass
class Effectivity:
    value: float
    degenerate: bool = False
    in_band: bool = True


def effectivity(report, error, band=(0.0, np.inf), tol=1e-14):
    """eta / error; 0/0 is reported as 1 with ``degenerate`` set."""
    eta = report.eta if hasattr(report, "eta") else float(report)
    scale = max(eta, error, 1.0)
    if error <= tol * scale:
        if eta <= tol * scale:
            return Effectivity(1.0, degenerate=True)
        return Effectivity(float("inf"), degenerate=True, in_band=False)
    val = eta / error
    return Effectivity(val, in_band=bool(band[0] <= val <= band[1]))


def efficiency_ratios(disc, report, local_err_sq):
    """eta_K / (local patch error + osc_K~) per element.

    ``local_err_sq`` are per-element squared local errors (broken gradient),
    summed here over vertex patches.
    """
    patches = disc.mesh.vertex_patches()
    patch_err = np.sqrt(np.array([local_err_sq[pt].sum() for pt in patches]))
    osc = report.osc_K if report.osc_K is not None else 0.0
    return report.eta_K / (patch_err + osc)


def residual_dual_norm(disc, uh, data):
    """Discrete surrogate of R_r: sup over conforming P_{p+1} of |b_h(e_h, v)| / |||v|||_{w,Omega}.

    Only conforming test functions enter, so s_h vanishes and the lifting
    degree does not matter; the broken solution is padded into P_{p+1}
    (the modal bases are nested).
    """
    data = _data(data)
    mesh, p = disc.mesh, disc.p
    up = Discretization(mesh, disc.coeffs, p + 1, disc.penalty, None, disc.penalty_mode)
    m, m2 = disc.broken.m, up.broken.m
    pad = np.zeros((mesh.n_triangles, m2), dtype=complex)
    pad[:, :m] = uh.broken()
    e = up.conforming.embedding
    if e.shape[1] == 0:
        return 0.0
    r = e.T @ (load_vector(up, data) - up.forms.b_h @ pad.ravel())
    gram = (e.T @ up.norms.energy_gram @ e).tocsc()
    y = GramSolver(gram)(r)
    return float(np.sqrt(max(np.real(np.vdot(r, y)), 0.0)))


@dataclass
class ReliabilityCheck:
    """Margins of the abstract reliability and weak-norm bounds.

    ``ratio`` = error / (sqrt(1 + gamma_ba^2) R); the bound holds when <= 1.
    """

    R: float
    bound: float
    ratio: float
    holds: bool
    l2_ratio: float = float("nan")
    robin_ratio: float = float("nan")


def reliability_check(error, report, factors, rr=None, l2_error=None, robin_error=None, omega=None, c_r=1.0):
    """Evaluate |||e||| <= sqrt(1 + g^2) R with R^2 = R_r^2 + R_c^2.

    ``rr`` is a computable R_r (the discrete dual norm); by default c_r * eta
    stands in for it (the constant of the residual bound is unknown).
    """
    rr = c_r * report.eta if rr is None else rr
    R = float(np.hypot(rr, report.rc_surrogate))
    bound = float(np.sqrt(1.0 + factors.gamma_ba ** 2) * R)
    ratio = error / bound if bound > 0 else (0.0 if error == 0 else float("inf"))
    out = ReliabilityCheck(R, bound, ratio, bool(ratio <= 1.0 + 1e-12))
    if l2_error is not None and omega is not None and factors.check_ba > 0 and R > 0:
        out.l2_ratio = omega * l2_error / (factors.check_ba * R)
    if robin_error is not None and omega is not None and factors.tilde_ba > 0 and R > 0:
        out.robin_ratio = np.sqrt(omega) * robin_error / (factors.tilde_ba * R)
    return out

