"""Discrete Helmholtz solves, dual solves, manufactured solutions and the stability probe.

Problem data are stored as callables on physical points so that the same
object serves the right-hand side, the estimator and error measurement:
``f(x, mu, A)`` is the volume source, ``g_neumann(x, n, A)`` and
``g_robin(x, n, A, gamma)`` are boundary data with
A grad u . n = g_N on Gamma_N and A grad u . n - i w gamma u = g_R on
Gamma_R.  Dirichlet data are homogeneous.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapabilityError, InputError, SolverError
from .mesh import NEUMANN, ROBIN, l_shape, unit_square
from .spaces import BrokenField

NEAR_SINGULAR_RATIO = 100.0
SINGULAR_COND = 1e13
DENSE_PROBE_LIMIT = 2500


# ---------------------------------------------------------------------------
@dataclass
class ProblemData:
    """Source and boundary data of one Helmholtz problem."""

    f: Callable
    g_neumann: Optional[Callable] = None
    g_robin: Optional[Callable] = None
    exact: Optional["ManufacturedCase"] = None


@dataclass
class ManufacturedCase:
    """Analytic solution u with derivatives; data follow from the equation.

    ``u``, ``grad`` and ``hess`` map (..., 2) points to (...), (..., 2) and
    (..., 2, 2) arrays.  ``mesh(n)`` builds the case's domain with its
    boundary labels at resolution ``n``.
    """

    name: str
    u: Callable
    grad: Callable
    hess: Callable
    omega: float
    mesh: Callable
    regularity: str = "smooth"
    params: dict = field(default_factory=dict)
    source_override: Optional[Callable] = None

    def f(self, x, mu, A):
        """-w^2 mu u - div(A grad u) with element-wise constant mu, A (broadcast over points)."""
        if self.source_override is not None:
            return self.source_override(x)
        mu = np.asarray(mu)
        A = np.asarray(A)
        h = self.hess(x)
        return -self.omega ** 2 * mu * self.u(x) - np.einsum("...kl,...kl->...", A, h)

    def g_neumann(self, x, n, A):
        return np.einsum("...k,...kl,...l->...", n, A, self.grad(x))

    def g_robin(self, x, n, A, gamma):
        return self.g_neumann(x, n, A) - 1j * self.omega * gamma * self.u(x)

    def data(self):
        return ProblemData(self.f, self.g_neumann, self.g_robin, exact=self)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t ** 2)


def _smoothstep_d(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t ** 2 * (1 - t) ** 2, 0.0)


def _smoothstep_dd(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 60 * t * (1 - t) * (1 - 2 * t), 0.0)


def manufactured(name, coeffs=None, **params):
    """Build a :class:`ManufacturedCase`.

    Names: ``plane_wave`` (direction ``d``, wavenumber ``k`` defaulting to
    w sqrt(mu/alpha); ``boundary`` label for the unit square, default 'R'),
    ``corner_singular`` (r^lam sin(lam theta), ``lam`` = 2/3, on the
    L-shape: Dirichlet on the re-entrant edges and label ``outer``
    (default 'R') elsewhere; with ``cutoff=True`` the function is
    multiplied by a quintic cutoff between radii ``r0`` and ``r1`` and the
    whole boundary is Dirichlet), ``constant`` (value ``c``, all-Neumann square),
    ``polynomial`` (u = x(1-x), Dirichlet at x = 0, 1, Neumann elsewhere),
    ``smooth_source`` (u = sin(pi x) sin(pi y) times ``amp``, all-Dirichlet).
    """
    omega = coeffs.omega if coeffs is not None else float(params.get("omega", 1.0))
    if name == "plane_wave":
        mu, a = (coeffs.region_values(0) if coeffs is not None else (1.0, np.eye(2)))
        alpha = float(np.linalg.eigvalsh(a)[0])
        k = float(params.get("k", omega * np.sqrt(mu / alpha)))
        d = np.asarray(params.get("d", (np.cos(np.pi / 7), np.sin(np.pi / 7))), dtype=float)
        d = d / np.linalg.norm(d)
        label = params.get("boundary", "R")

        def u(x):
            return np.exp(1j * k * (x @ d))

        def grad(x):
            return (1j * k * u(x))[..., None] * d

        def hess(x):
            return (-(k ** 2) * u(x))[..., None, None] * np.outer(d, d)

        return ManufacturedCase("plane_wave", u, grad, hess, omega,
                                lambda n: unit_square(n, boundary=label),
                                params={"k": k, "d": tuple(d), "boundary": label})
    if name == "corner_singular":
        lam = float(params.get("lam", 2.0 / 3.0))
        use_cutoff = bool(params.get("cutoff", False))
        r0, r1 = float(params.get("r0", 0.25)), float(params.get("r1", 0.75))
        outer = params.get("outer", "R")

        def zpow(x, a):
            # z^a on the branch theta in [0, 2 pi)
            r = np.maximum(np.hypot(x[..., 0], x[..., 1]), 1e-300)
            th = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
            return r ** a * np.exp(1j * a * th)

        def sing(x):
            z1 = lam * zpow(x, lam - 1)
            z2 = lam * (lam - 1) * zpow(x, lam - 2)
            s = zpow(x, lam).imag
            g = np.stack([z1.imag, z1.real], -1)
            h = np.stack([np.stack([z2.imag, z2.real], -1), np.stack([z2.real, -z2.imag], -1)], -2)
            return s, g, h

        def cutoff(x):
            r = np.maximum(np.hypot(x[..., 0], x[..., 1]), 1e-300)
            if not use_cutoff:
                one = np.ones_like(r)
                return one, np.zeros(x.shape), np.zeros(x.shape + (2,))
            t = (r1 - r) / (r1 - r0)
            c, dc, ddc = _smoothstep(t), -_smoothstep_d(t) / (r1 - r0), _smoothstep_dd(t) / (r1 - r0) ** 2
            er = x / r[..., None]
            grad = dc[..., None] * er
            # Hessian of a radial function: c'' er er^T + (c'/r)(I - er er^T)
            eet = er[..., :, None] * er[..., None, :]
            hess = ddc[..., None, None] * eet + (dc / r)[..., None, None] * (np.eye(2) - eet)
            return c, grad, hess

        def u(x):
            return (cutoff(x)[0] * sing(x)[0]).astype(complex)

        def grad(x):
            c, dc, _ = cutoff(x)
            s, ds, _ = sing(x)
            return (c[..., None] * ds + s[..., None] * dc).astype(complex)

        def hess(x):
            c, dc, ddc = cutoff(x)
            s, ds, dds = sing(x)
            cross = dc[..., :, None] * ds[..., None, :]
            return (c[..., None, None] * dds + s[..., None, None] * ddc + cross
                    + np.swapaxes(cross, -1, -2)).astype(complex)

        def labels(mid, normal):
            x, y = mid
            reentrant = (abs(y) < 1e-9 and x > -1e-9) or (abs(x) < 1e-9 and y < 1e-9)
            return "D" if (use_cutoff or reentrant) else outer

        return ManufacturedCase("corner_singular", u, grad, hess, omega,
                                lambda n: l_shape(n, boundary=labels), regularity=f"corner:{lam:.6g}",
                                params={"lam": lam, "cutoff": use_cutoff, "r0": r0, "r1": r1, "outer": outer})
    if name == "constant":
        cval = complex(params.get("c", 1.0))

        def u(x):
            return np.full(x.shape[:-1], cval)

        def grad(x):
            return np.zeros(x.shape, dtype=complex)

        def hess(x):
            return np.zeros(x.shape[:-1] + (2, 2), dtype=complex)

        return ManufacturedCase("constant", u, grad, hess, omega, lambda n: unit_square(n, boundary="N"),
                                params={"c": cval})
    if name == "polynomial":
        def u(x):
            return (x[..., 0] * (1 - x[..., 0])).astype(complex)

        def grad(x):
            g = np.zeros(x.shape, dtype=complex)
            g[..., 0] = 1 - 2 * x[..., 0]
            return g

        def hess(x):
            h = np.zeros(x.shape[:-1] + (2, 2), dtype=complex)
            h[..., 0, 0] = -2.0
            return h

        labels = {"left": "D", "right": "D", "bottom": "N", "top": "N"}
        return ManufacturedCase("polynomial", u, grad, hess, omega, lambda n: unit_square(n, boundary=labels))
    if name == "smooth_source":
        amp = float(params.get("amp", 1.0))
        pi = np.pi

        def u(x):
            return (amp * np.sin(pi * x[..., 0]) * np.sin(pi * x[..., 1])).astype(complex)

        def grad(x):
            sx, sy = np.sin(pi * x[..., 0]), np.sin(pi * x[..., 1])
            cx, cy = np.cos(pi * x[..., 0]), np.cos(pi * x[..., 1])
            return (amp * pi * np.stack([cx * sy, sx * cy], -1)).astype(complex)

        def hess(x):
            sx, sy = np.sin(pi * x[..., 0]), np.sin(pi * x[..., 1])
            cx, cy = np.cos(pi * x[..., 0]), np.cos(pi * x[..., 1])
            h = np.stack([np.stack([-sx * sy, cx * cy], -1), np.stack([cx * cy, -sx * sy], -1)], -2)
            return (amp * pi ** 2 * h).astype(complex)

        return ManufacturedCase("smooth_source", u, grad, hess, omega, lambda n: unit_square(n, boundary="D"),
                                params={"amp": amp})
    raise InputError(f"unknown manufactured case {name!r}")


# ---------------------------------------------------------------------------
def load_vector(disc, data):
    """Right-hand side (f, v) + (g_N, v)_{Gamma_N} + (g_R, v)_{Gamma_R} on the broken space."""
    mesh, p = disc.mesh, disc.p
    quad = disc.quad
    cdat = disc.coeffs.on_mesh(mesh)
    vq = quad.vol
    phi, _, _ = quad.vol_table(p, 0)
    fv = np.asarray(data.f(vq.points, cdat.mu_K[:, None], cdat.A_K[:, None]), dtype=complex)
    rhs = np.einsum("tq,tq,qm->tm", vq.weights, fv, phi).ravel()
    fq = quad.face
    phi_f, _, _ = quad.face_table(p, 0)
    for label, g in ((NEUMANN, data.g_neumann), (ROBIN, data.g_robin)):
        faces = np.flatnonzero(mesh.face_labels == label)
        if len(faces) == 0 or g is None:
            continue
        owner = mesh.edge_tris[faces, 0]
        x = fq.points[faces]
        n = np.broadcast_to(mesh.normals[faces][:, None, :], x.shape)
        A = np.broadcast_to(cdat.A_K[owner][:, None], x.shape[:-1] + (2, 2))
        if label == ROBIN:
            vals = g(x, n, A, cdat.gamma_F[faces][:, None])
        else:
            vals = g(x, n, A)
        contrib = np.einsum("fq,fq,fqm->fm", fq.weights[faces], vals, phi_f[faces, 0])
        np.add.at(rhs.reshape(mesh.n_triangles, -1), owner, contrib)
    return rhs


@dataclass
class SolveInfo:
    """Diagnostics of one direct solve."""

    residual: float
    cond_estimate: float = float("nan")
    cond_ratio: float = float("nan")
    near_singular: bool = False


@dataclass
class AssembledSystem:
    """Complex sparse system matrix with its right-hand side."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: object

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,) or n != self.space.dim:
            raise InputError("matrix, right-hand side and space dimensions disagree")


def _factor(matrix):
    try:
        return spla.splu(sp.csc_matrix(matrix, dtype=complex))
    except RuntimeError as exc:
        raise SolverError(f"system matrix is singular: {exc}", cond_estimate=float("inf")) from exc


def _inv_norm1(lu, n):
    if n <= 4:
        return float(np.abs(lu.solve(np.eye(n, dtype=complex))).sum(axis=0).max())
    inv = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(np.asarray(x, dtype=complex)),
                              rmatvec=lambda x: lu.solve(np.asarray(x, dtype=complex), trans="H"),
                              dtype=complex)
    return float(spla.onenormest(inv))


def _cond1(matrix, lu):
    return float(spla.norm(matrix, 1) * _inv_norm1(lu, matrix.shape[0]))


def direct_solve(system, shifted=None, conditioning=True):
    """LU solve with residual check and resonance diagnostics.

    ``shifted`` is the sign-flipped (coercive) matrix used as reference for
    the condition ratio cond1(B)/cond1(B+).  A ratio above
    ``NEAR_SINGULAR_RATIO`` sets ``near_singular``; a condition estimate
    beyond ``SINGULAR_COND`` raises :class:`SolverError`.
    """
    B = system.matrix
    lu = _factor(B)
    x = lu.solve(np.asarray(system.rhs, dtype=complex))
    r = system.rhs - B @ x
    scale = max(np.linalg.norm(system.rhs), 1e-300)
    if np.linalg.norm(r) > 1e-12 * scale:
        x = x + lu.solve(r)
        r = system.rhs - B @ x
    info = SolveInfo(residual=float(np.linalg.norm(r) / scale))
    if conditioning and B.shape[0] > 0:
        inv_norm = _inv_norm1(lu, B.shape[0])
        info.cond_estimate = float(spla.norm(B, 1) * inv_norm)
        # cancellation between the mass and stiffness terms is measured against
        # the size of the coercive operator, not of B itself
        scaled = info.cond_estimate if shifted is None else max(info.cond_estimate,
                                                                float(spla.norm(shifted, 1)) * inv_norm)
        if not np.isfinite(scaled) or scaled > SINGULAR_COND or not np.all(np.isfinite(x)):
            raise SolverError(f"system matrix is numerically singular (cond1 ~ {scaled:.3e})",
                              cond_estimate=scaled)
        if shifted is not None:
            ref = _cond1(shifted, _factor(shifted))
            info.cond_ratio = info.cond_estimate / ref
            info.near_singular = bool(info.cond_ratio > NEAR_SINGULAR_RATIO)
    return x, info


def assemble_ipdg(disc, data):
    return AssembledSystem(disc.forms.b_h, load_vector(disc, data), disc.broken)


def solve_ipdg(disc, data, conditioning=True):
    """Solve b_h(u_h, v_h) = (f, v_h) (+ boundary data); returns a BrokenField.

    ``data`` is a :class:`ProblemData` or :class:`ManufacturedCase`.  The
    returned field carries ``info`` (:class:`SolveInfo`).
    """
    if isinstance(data, ManufacturedCase):
        data = data.data()
    system = assemble_ipdg(disc, data)
    forms = disc.forms
    w = forms.omega
    shifted = (w ** 2 * forms.mass - 1j * w * forms.robin + forms.a_h).tocsr() if conditioning else None
    x, info = direct_solve(system, shifted, conditioning)
    out = BrokenField(disc.broken, x)
    out.info = info
    return out


def conforming_matrix(disc, sign=-1.0):
    """b on the conforming space (sign=-1) or its coercive shift (sign=+1)."""
    f = disc.forms
    e = disc.conforming.embedding
    w = f.omega
    return (e.T @ (sign * w ** 2 * f.mass - 1j * w * f.robin + f.stiffness) @ e).tocsr()


@dataclass
class RhsSpec:
    """Right-hand side of a conforming solve.

    kind 'primal': ``data`` is ProblemData/ManufacturedCase.
    kind 'dual_volume': ``coeffs`` are broken P_p coefficients of psi;
    solves b(w, u*) = w (mu w, psi) for all w.
    kind 'dual_robin': ``coeffs`` are per-Robin-face Legendre coefficients
    of Psi (see :func:`robin_trace_basis`); solves
    b(w, U*) = w^(1/2) (gamma w, Psi)_{Gamma_R}.
    """

    kind: str
    data: object = None
    coeffs: Optional[np.ndarray] = None


def robin_trace_basis(disc, degree=None):
    """Face-wise L2-orthonormal Legendre basis of P_p on each Robin face.

    Returns (faces, table) with table (nR, nq, p+1) at the face quadrature points.
    """
    mesh = disc.mesh
    p = disc.p if degree is None else degree
    faces = np.flatnonzero(mesh.face_labels == ROBIN)
    t = disc.quad.face.t
    leg = np.polynomial.legendre.legvander(2 * t - 1, p) * np.sqrt(2 * np.arange(p + 1) + 1)
    table = leg[None, :, :] / np.sqrt(mesh.h_F[faces])[:, None, None]
    return faces, table


def dual_rhs(disc, spec):
    """Broken-space vector r with b(w, u*) = w^T r for broken basis w."""
    mesh = disc.mesh
    w = disc.coeffs.omega
    if spec.kind == "dual_volume":
        psi = np.asarray(spec.coeffs, dtype=complex)
        return w * (disc.forms.mass @ psi)
    if spec.kind == "dual_robin":
        faces, table = robin_trace_basis(disc)
        if len(faces) == 0:
            raise InputError("no Robin boundary: boundary dual problems are undefined")
        cdat = disc.coeffs.on_mesh(mesh)
        big = np.asarray(spec.coeffs, dtype=complex).reshape(len(faces), -1)
        vals = np.einsum("fqk,fk->fq", table, big)
        phi_f, _, _ = disc.quad.face_table(disc.p, 0)
        fq = disc.quad.face
        contrib = np.einsum("fq,fq,fqm->fm", fq.weights[faces] * cdat.gamma_F[faces][:, None],
                            vals, phi_f[faces, 0]) * np.sqrt(w)
        out = np.zeros((mesh.n_triangles, disc.broken.m), dtype=complex)
        np.add.at(out, mesh.edge_tris[faces, 0], contrib)
        return out.ravel()
    raise InputError(f"unknown dual right-hand side {spec.kind!r}")


def solve_conforming(disc, rhs_spec, conditioning=False):
    """Conforming Galerkin solve; primal or adjoint-positioned dual problems.

    For duals, conj(b) u* = r with r from :func:`dual_rhs`; b is complex
    symmetric so this is the adjoint problem.
    """
    cs = disc.conforming
    if cs.dim == 0:
        raise InputError("conforming space is trivial")
    e = cs.embedding
    B = conforming_matrix(disc)
    if isinstance(rhs_spec, (ProblemData, ManufacturedCase)):
        rhs_spec = RhsSpec("primal", rhs_spec)
    if rhs_spec.kind == "primal":
        data = rhs_spec.data.data() if isinstance(rhs_spec.data, ManufacturedCase) else rhs_spec.data
        system = AssembledSystem(B, e.T @ load_vector(disc, data), cs)
    else:
        if rhs_spec.kind == "dual_robin" and not np.any(disc.mesh.face_labels == ROBIN):
            raise InputError("no Robin boundary: boundary dual problems are undefined")
        system = AssembledSystem(B.conj().tocsr(), e.T @ dual_rhs(disc, rhs_spec), cs)
    shifted = conforming_matrix(disc, +1.0) if conditioning else None
    if shifted is not None and rhs_spec.kind != "primal":
        shifted = shifted.conj().tocsr()
    x, info = direct_solve(system, shifted, conditioning)
    out = BrokenField(cs, x)
    out.info = info
    return out


# ---------------------------------------------------------------------------
@dataclass
class StabilityProbe:
    """Smallest singular value of the energy-normalised conforming b (surrogate for 1/gamma_st)."""

    value: float
    dofs: int
    method: str


def stability_probe(disc):
    cs = disc.conforming
    n = cs.dim
    if n == 0:
        raise InputError("stability probe needs a nontrivial conforming space")
    B = conforming_matrix(disc)
    e = cs.embedding
    energy = (e.T @ disc.norms.energy_gram @ e).tocsr()
    if n <= DENSE_PROBE_LIMIT:
        L = np.linalg.cholesky(energy.toarray())
        Li = sla.solve_triangular(L, np.eye(n), lower=True)
        T = Li @ B.toarray() @ Li.T
        s = sla.svdvals(T)
        return StabilityProbe(float(s.min()), n, "dense")
    lu = _factor(B)
    energy_c = energy.astype(complex)

    def op(x):
        y = energy_c @ x
        y = lu.solve(np.asarray(y, dtype=complex), trans="H")
        y = energy_c @ y
        y = lu.solve(np.asarray(y, dtype=complex))
        return energy_c @ y

    A = spla.LinearOperator((n, n), matvec=op, dtype=complex)
    try:
        vals = spla.eigsh(A, k=1, M=energy_c.tocsc(), which="LM", return_eigenvectors=False, tol=1e-8)
    except spla.ArpackError as exc:
        raise CapabilityError(f"eigensolver failed in stability probe: {exc}") from exc
    return StabilityProbe(float(1.0 / np.sqrt(vals.max().real)), n, "arpack")
