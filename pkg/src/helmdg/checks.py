"""Built-in invariant suite (``helmdg check``).

Each check compares assembled operators with a pointwise oracle: its own
Gauss rules, basis evaluation on the physical triangle and face normals
recomputed from the vertex coordinates.  Nothing here reuses the
vectorised quadrature tables of the assembly.
"""
from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, eval_phys, scalar_dim
from .coefficients import CoefficientSet
from .discretization import Discretization
from .mesh import DIRICHLET, INTERIOR, NEUMANN, ROBIN, l_shape, refine, unit_square
from .norms import NormWorkspace
from .solver import load_vector, manufactured, solve_ipdg
from .spaces import BrokenField, DivConformingSpace

SEED = 20240611


@dataclass
class CheckResult:
    criterion: int
    name: str
    value: float
    tol: float
    passed: bool
    bound: str = ""

    def describe(self):
        return f"{self.name}: {self.value:.2e} ({self.bound or f'tol {self.tol:.0e}'})"

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.criterion}: {self.describe()}"


# ---------------------------------------------------------------------------
# pointwise oracle
def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def collapsed_rule(n):
    """Reference-triangle rule from a collapsed n x n Gauss product."""
    u, wu = gauss01(n)
    pts, wts = [], []
    for a, wa in zip(u, wu):
        for b, wb in zip(u, wu):
            pts.append((a, b * (1.0 - a)))
            wts.append(wa * wb * (1.0 - a))
    return np.array(pts), np.array(wts)


class Oracle:
    """Element-by-element integrals on one mesh for scalar degree p and vector degree q."""

    def __init__(self, mesh, coeffs, p, q=None):
        self.mesh = mesh
        self.coeffs = coeffs
        self.p = p
        self.q = p if q is None else q
        self.scalar = BasisSet(p, "scalar_broken")
        self.vector = BasisSet(self.q, "vector_full")
        self.m = scalar_dim(p)
        self.mv = 2 * scalar_dim(self.q)
        self.n_gauss = max(p, self.q) + 3
        self.A = {}
        self.mu = {}
        for k in range(mesh.n_triangles):
            mu, a = coeffs.region_values(int(mesh.region[k]))
            self.mu[k], self.A[k] = float(mu), np.asarray(a, float)
        self.alpha_K = {k: float(np.linalg.eigvalsh(self.A[k])[0]) for k in self.A}

    def tri(self, k):
        return self.mesh.vertices[self.mesh.triangles[k]]

    def volume_points(self, k):
        ref, w = collapsed_rule(self.n_gauss + 2)
        t = self.tri(k)
        jac = np.column_stack([t[1] - t[0], t[2] - t[0]])
        return t[0] + ref @ jac.T, w * abs(np.linalg.det(jac))

    def face_geometry(self, e):
        """Points, weights, unit normal (outward from the side-0 triangle), sides."""
        i, j = self.mesh.edges[e]
        a, b = self.mesh.vertices[i], self.mesh.vertices[j]
        t, w = gauss01(self.n_gauss + 2)
        pts = a + t[:, None] * (b - a)
        length = np.hypot(*(b - a))
        n = np.array([b[1] - a[1], a[0] - b[0]]) / length
        sides = [int(s) for s in self.mesh.edge_tris[e] if s >= 0]
        if np.dot(n, 0.5 * (a + b) - self.tri(sides[0]).mean(axis=0)) < 0:
            n = -n
        return pts, w * length, n, sides

    def jump_coeffs(self, e):
        lab = self.mesh.face_labels[e]
        if lab == INTERIOR:
            return (1.0, -1.0)
        if lab == DIRICHLET:
            return (1.0,)
        return ()

    def avg_coeffs(self, e):
        return (0.5, 0.5) if self.mesh.face_labels[e] == INTERIOR else (1.0,)

    def alpha_F(self, e):
        return max(self.alpha_K[s] for s in self.mesh.edge_tris[e] if s >= 0)

    # global matrices -------------------------------------------------------
    def vector_mass(self):
        nt = self.mesh.n_triangles
        out = np.zeros((nt * self.mv, nt * self.mv))
        for k in range(nt):
            x, w = self.volume_points(k)
            v, _ = eval_phys(self.vector, self.tri(k), x)
            sl = slice(k * self.mv, (k + 1) * self.mv)
            out[sl, sl] = np.einsum("q,qic,qjc->ij", w, v, v)
        return out

    def lifting_rhs(self):
        """F[i, j] = sum_F ([[phi_j]], {{psi_i}}.n_F)_F."""
        nt = self.mesh.n_triangles
        out = np.zeros((nt * self.mv, nt * self.m))
        for e in range(self.mesh.n_faces):
            jc = self.jump_coeffs(e)
            if not jc:
                continue
            pts, w, n, sides = self.face_geometry(e)
            ac = self.avg_coeffs(e)
            for sj, cj in zip(sides, jc):
                phi, _ = eval_phys(self.scalar, self.tri(sj), pts)
                for si, ci in zip(sides, ac):
                    psi, _ = eval_phys(self.vector, self.tri(si), pts)
                    block = np.einsum("q,qic,c,qj->ij", w, psi, n, phi) * ci * cj
                    out[si * self.mv:(si + 1) * self.mv, sj * self.m:(sj + 1) * self.m] += block
        return out

    def jump_form(self, beta0):
        """K - C - C^T + P with K the broken stiffness and C the consistency term."""
        mesh, m = self.mesh, self.m
        nt = mesh.n_triangles
        K = np.zeros((nt * m, nt * m))
        for k in range(nt):
            x, w = self.volume_points(k)
            _, g = eval_phys(self.scalar, self.tri(k), x)
            K[k * m:(k + 1) * m, k * m:(k + 1) * m] = np.einsum("q,qik,kl,qjl->ij", w, g, self.A[k], g)
        C = np.zeros_like(K)
        P = np.zeros_like(K)
        for e in range(mesh.n_faces):
            jc = self.jump_coeffs(e)
            if not jc:
                continue
            pts, w, n, sides = self.face_geometry(e)
            length = w.sum()
            beta = beta0 * self.p ** 2 * self.alpha_F(e) / length
            tr = {s: eval_phys(self.scalar, self.tri(s), pts) for s in sides}
            for si, ci in zip(sides, jc):
                vi = tr[si][0]
                for sj, cj in zip(sides, jc):
                    P[si * m:(si + 1) * m, sj * m:(sj + 1) * m] += beta * ci * cj * np.einsum("q,qi,qj->ij", w, vi, tr[sj][0])
                for sj, aj in zip(sides, self.avg_coeffs(e)):
                    flux = np.einsum("qjk,kl,l->qj", tr[sj][1], self.A[sj], n)
                    # row: test v (jump), column: trial phi (average flux)
                    C[si * m:(si + 1) * m, sj * m:(sj + 1) * m] += ci * aj * np.einsum("q,qi,qj->ij", w, vi, flux)
        return K - C - C.T + P

    def helmholtz(self, beta0):
        """b_h = -w^2 (mu ., .) - i w (gamma ., .)_R + jump form."""
        mesh, m = self.mesh, self.m
        w = self.coeffs.omega
        M = np.zeros((mesh.n_triangles * m, mesh.n_triangles * m))
        R = np.zeros_like(M)
        for k in range(mesh.n_triangles):
            x, wq = self.volume_points(k)
            v, _ = eval_phys(self.scalar, self.tri(k), x)
            M[k * m:(k + 1) * m, k * m:(k + 1) * m] = self.mu[k] * np.einsum("q,qi,qj->ij", wq, v, v)
        gam = self.coeffs.on_mesh(mesh).gamma_F
        for e in np.flatnonzero(mesh.face_labels == ROBIN):
            pts, wq, _, sides = self.face_geometry(e)
            k = sides[0]
            v, _ = eval_phys(self.scalar, self.tri(k), pts)
            R[k * m:(k + 1) * m, k * m:(k + 1) * m] += gam[e] * np.einsum("q,qi,qj->ij", wq, v, v)
        return -w ** 2 * M - 1j * w * R + self.jump_form(beta0)

    def load(self, data, order_boost=4):
        """(f, v) + (g_N, v)_N + (g_R, v)_R on the broken basis."""
        mesh, m = self.mesh, self.m
        out = np.zeros(mesh.n_triangles * m, dtype=complex)
        for k in range(mesh.n_triangles):
            ref, w = collapsed_rule(self.n_gauss + order_boost)
            t = self.tri(k)
            jac = np.column_stack([t[1] - t[0], t[2] - t[0]])
            x = t[0] + ref @ jac.T
            w = w * abs(np.linalg.det(jac))
            v, _ = eval_phys(self.scalar, t, x)
            f = data.f(x, np.full(len(x), self.mu[k]), np.broadcast_to(self.A[k], (len(x), 2, 2)))
            out[k * m:(k + 1) * m] += np.einsum("q,q,qi->i", w, f, v)
        for e in np.flatnonzero((mesh.face_labels == NEUMANN) | (mesh.face_labels == ROBIN)):
            pts, w, n, sides = self.face_geometry(e)
            k = sides[0]
            v, _ = eval_phys(self.scalar, self.tri(k), pts)
            nn = np.broadcast_to(n, pts.shape)
            A = np.broadcast_to(self.A[k], (len(pts), 2, 2))
            if mesh.face_labels[e] == NEUMANN:
                g = data.g_neumann(pts, nn, A) if data.g_neumann is not None else np.zeros(len(pts))
            else:
                gam = self.coeffs.on_mesh(mesh).gamma_F[e]
                g = data.g_robin(pts, nn, A, gam) if data.g_robin is not None else np.zeros(len(pts))
            out[k * m:(k + 1) * m] += np.einsum("q,q,qi->i", w, g, v)
        return out


# ---------------------------------------------------------------------------
def _side_labels(rng):
    return {s: "DNR"[rng.integers(3)] for s in ("left", "right", "bottom", "top")}


def _meshes_for_lifting():
    sq = unit_square(1, {"left": "D", "right": "N", "bottom": "R", "top": "D"})
    m4 = unit_square(4, {"left": "R", "right": "D", "bottom": "N", "top": "D"})
    ls = l_shape(2, "D")
    ls = refine(ls, [0, 5, 11])
    m16 = unit_square(16, {"left": "D", "right": "R", "bottom": "N", "top": "R"})
    return [sq, m4, ls, m16]


def check_lifting(n_fields=500, seed=SEED, meshes=None, degrees=(1, 2, 3)):
    """Criterion 1: (L(phi), w)_T = sum_F ([[phi]], {{w}}.n_F)_F against every vector basis member."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    coeffs = CoefficientSet(omega=2.0)
    for mesh in meshes or _meshes_for_lifting():
        for p in degrees:
            disc = Discretization(mesh, coeffs, p)
            L = disc.forms.lifting.matrix
            orc = Oracle(mesh, coeffs, p)
            V = rng.standard_normal((disc.broken.dim, n_fields)) + 1j * rng.standard_normal((disc.broken.dim, n_fields))
            lhs = orc.vector_mass() @ (L @ V)
            rhs = orc.lifting_rhs() @ V
            worst = max(worst, np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300))
    return CheckResult(1, "lifting identity, relative max deviation", float(worst), 1e-10, bool(worst <= 1e-10))


def random_coefficients(rng, omega=None):
    def spd():
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        return q @ np.diag(rng.uniform(0.2, 5.0, 2)) @ q.T

    return CoefficientSet(omega=float(omega if omega is not None else rng.uniform(0.5, 10.0)),
                          mu={0: float(rng.uniform(0.2, 5.0)), 1: float(rng.uniform(0.2, 5.0))},
                          A={0: spd(), 1: spd()}, gamma=float(rng.uniform(0.2, 5.0)))


def _two_region_square(n, labels):
    return unit_square(n, labels, regions=lambda c: int(c[0] > 0.5))


def check_form_equivalence(n_configs=10, seed=SEED):
    """Criterion 2: discrete-gradient form with lifted penalty equals the jump form."""
    rng = np.random.default_rng(seed + 1)
    worst_pkg = worst_orc = 0.0
    for _ in range(n_configs):
        coeffs = random_coefficients(rng)
        mesh = _two_region_square(int(rng.integers(2, 5)), _side_labels(rng))
        p = int(rng.integers(1, 4))
        beta0 = float(rng.uniform(5.0, 20.0))
        forms = Discretization(mesh, coeffs, p, penalty=beta0).forms
        a = forms.a_h.toarray()
        scale = np.abs(a).max()
        worst_pkg = max(worst_pkg, np.abs(a - forms.a_h_jump.toarray()).max() / scale)
        worst_orc = max(worst_orc, np.abs(a - Oracle(mesh, coeffs, p).jump_form(beta0)).max() / scale)
    worst = max(worst_pkg, worst_orc)
    return CheckResult(2, "form equivalence, relative max-norm deviation", float(worst), 1e-10, bool(worst <= 1e-10))


def _norm_meshes():
    return [unit_square(4, {"left": "R", "right": "D", "bottom": "N", "top": "R"}),
            l_shape(2, "R"),
            refine(unit_square(3, {"left": "D", "right": "R", "bottom": "R", "top": "N"}), [0, 7])]


def check_norms(n_pairs=1000, seed=SEED, degrees=(1, 2)):
    """Criterion 3: norm duality and norm control on random samples (exact inequalities)."""
    rng = np.random.default_rng(seed + 2)
    worst_dual = worst_ctrl = -np.inf
    for mesh in _norm_meshes():
        coeffs = random_coefficients(rng, omega=4.0)
        coeffs = CoefficientSet(omega=coeffs.omega, mu=coeffs.mu[0], A=coeffs.A[0], gamma=coeffs.gamma)
        for p in degrees:
            disc = Discretization(mesh, coeffs, p)
            bdm = DivConformingSpace(mesh, p + 1)
            ws = NormWorkspace(disc, vector_degree=p + 1, bdm=bdm)
            nb = disc.broken.dim
            phi = rng.standard_normal((nb, n_pairs)) + 1j * rng.standard_normal((nb, n_pairs))
            # half the samples are scaled per element to spread them across the space
            phi[:, ::2] *= np.repeat(10.0 ** rng.uniform(-3, 3, (mesh.n_triangles, 1)), disc.broken.m, axis=0)
            c = rng.standard_normal((bdm.dim, n_pairs)) + 1j * rng.standard_normal((bdm.dim, n_pairs))
            w = bdm.embedding @ c
            pair = np.abs(np.einsum("ij,ij->j", w.conj(), ws.pairing_matrix @ phi))
            n1 = np.sqrt(np.einsum("ij,ij->j", phi.conj(), ws.dagger1_gram @ phi).real)
            nd = np.sqrt(np.einsum("ij,ij->j", w.conj(), ws.daggerdiv_gram @ w).real)
            worst_dual = max(worst_dual, float(np.max(pair / (n1 * nd))))
            ne = np.sqrt(np.einsum("ij,ij->j", phi.conj(), ws.energy_gram @ phi).real)
            worst_ctrl = max(worst_ctrl, float(np.max(ne / n1)))
    return [CheckResult(3, "norm duality, max |pairing| / (norm product)", worst_dual, 1e-12,
                        bool(worst_dual <= 1 + 1e-12), "bound 1 + 1e-12"),
            CheckResult(3, "norm control, max energy / dagger-1", worst_ctrl, 1e-12,
                        bool(worst_ctrl <= 1 + 1e-12), "bound 1 + 1e-12")]


def check_conformity(seed=SEED, degrees=(1, 2, 3)):
    """Criterion 4: G(v) = grad v, s_h(v, .) = 0, zero jumps, and the lifting-error pairing."""
    rng = np.random.default_rng(seed + 3)
    meshes = [unit_square(3, {"left": "D", "right": "R", "bottom": "N", "top": "D"}), l_shape(2, "D")]
    worst_g = worst_s = worst_j = worst_pair = 0.0
    for mesh in meshes:
        coeffs = random_coefficients(rng)
        coeffs = CoefficientSet(omega=coeffs.omega, mu=coeffs.mu[0], A=coeffs.A[0], gamma=coeffs.gamma)
        for p in degrees:
            disc = Discretization(mesh, coeffs, p)
            f = disc.forms
            E = disc.conforming.embedding
            X = rng.standard_normal((disc.conforming.dim, 20))
            V = E @ X
            grad = f.lifting.gradient @ V
            worst_g = max(worst_g, np.abs(f.G @ V - grad).max() / np.abs(grad).max())
            s = f.s_h
            worst_s = max(worst_s, np.abs(s @ V).max() / (abs(s).max() * np.abs(V).max()))
            orc = Oracle(mesh, coeffs, p)
            for col in range(3):
                field = BrokenField(disc.broken, V[:, col])
                for e in range(mesh.n_faces):
                    jc = orc.jump_coeffs(e)
                    if not jc:
                        continue
                    pts, _, _, sides = orc.face_geometry(e)
                    val = sum(c * (eval_phys(orc.scalar, orc.tri(k), pts)[0] @ field.broken()[k])
                              for k, c in zip(sides, jc))
                    worst_j = max(worst_j, np.abs(val).max() / np.abs(V[:, col]).max())
            # pairing of any broken phi against BDM_p, and of conforming phi against BDM_{p+1}
            ws = disc.norms
            B = disc.bdm.embedding @ rng.standard_normal((disc.bdm.dim, 20))
            phi = rng.standard_normal((disc.broken.dim, 20))
            pm = ws.pairing_matrix
            scale = np.abs(B).max() * np.abs(phi).max() * abs(pm).max()
            worst_pair = max(worst_pair, np.abs(B.T @ (pm @ phi)).max() / scale)
            bdm1 = DivConformingSpace(mesh, p + 1)
            ws1 = NormWorkspace(disc, vector_degree=p + 1, bdm=bdm1)
            B1 = bdm1.embedding @ rng.standard_normal((bdm1.dim, 20))
            scale = np.abs(B1).max() * np.abs(V).max() * abs(ws1.pairing_matrix).max()
            worst_pair = max(worst_pair, np.abs(B1.T @ (ws1.pairing_matrix @ V)).max() / scale)
    return [CheckResult(4, "discrete gradient of conforming fields", float(worst_g), 1e-11, bool(worst_g <= 1e-11)),
            CheckResult(4, "s_h on conforming fields", float(worst_s), 1e-11, bool(worst_s <= 1e-11)),
            CheckResult(4, "jumps of conforming fields", float(worst_j), 1e-11, bool(worst_j <= 1e-11)),
            CheckResult(4, "lifting-error pairing", float(worst_pair), 1e-10, bool(worst_pair <= 1e-10))]


GALERKIN_PROBLEMS = (("plane_wave", 5.0, 4, 1), ("plane_wave", 5.0, 4, 2), ("corner_singular", 1.0, 2, 2),
                     ("polynomial", 3.0, 3, 2), ("smooth_source", 2.0, 4, 1), ("constant", 1.5, 2, 1))


def check_galerkin(problems=GALERKIN_PROBLEMS):
    """Criterion 5: conforming residual (f, w_h) - b_h(u_h, w_h) after the solve.

    The right-hand side is the discrete problem's load vector; b_h is
    rebuilt by the pointwise oracle.
    """
    worst = 0.0
    for name, omega, n, p in problems:
        coeffs = CoefficientSet(omega=omega)
        case = manufactured(name, coeffs)
        disc = Discretization(case.mesh(n), coeffs, p)
        uh = solve_ipdg(disc, case, conditioning=False)
        E = disc.conforming.embedding
        rhs = load_vector(disc, case.data())
        B = Oracle(disc.mesh, coeffs, p).helmholtz(disc.penalty)
        res = E.T @ (rhs - B @ uh.coeffs)
        scale = np.abs(E.T @ rhs).max()
        worst = max(worst, np.abs(res).max() / scale)
    return CheckResult(5, "Galerkin orthogonality, conforming residual / rhs scale", float(worst), 1e-9,
                       bool(worst <= 1e-9))


def run_checks(log=None):
    """Run criteria 1-5; returns the list of results and writes one line each to ``log``."""
    results = []
    for fn in (check_lifting, check_form_equivalence, check_norms, check_conformity, check_galerkin):
        out = fn()
        out = out if isinstance(out, list) else [out]
        for r in out:
            if log is not None:
                log(r.line())
        results += out
    return results
