import numpy as np
import pytest
from hypothesis import given, strategies as st

from helmdg.basis import BasisSet, eval_phys
from helmdg.coefficients import CoefficientSet
from helmdg.discretization import Discretization
from helmdg.errors import InputError
from helmdg.factors import ApproximationFactors, DualSampler, sample_gamma_ba
from helmdg.mesh import build_mesh, unit_square
from helmdg.solver import RhsSpec, solve_conforming
from oracles import MeshOracle

MIXED = {"left": "D", "right": "N", "bottom": "R", "top": "R"}
DN = {"left": "D", "right": "N", "bottom": "D", "top": "N"}


def cplx(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=4, max_size=4))
def test_combination_identities(vals):
    f = ApproximationFactors(*vals)
    cg, cd, tg, td = vals
    assert f.gamma_g ** 2 == pytest.approx(4 * cg ** 2 + 2 * tg ** 2, rel=1e-12, abs=1e-300)
    assert f.gamma_d ** 2 == pytest.approx(4 * cd ** 2 + 2 * td ** 2, rel=1e-12, abs=1e-300)
    assert f.gamma_ba ** 2 == pytest.approx(f.gamma_g ** 2 + f.gamma_d ** 2, rel=1e-12, abs=1e-300)
    assert f.gamma_ba ** 2 == pytest.approx(4 * f.check_ba ** 2 + 2 * f.tilde_ba ** 2, rel=1e-12, abs=1e-300)


# -- independent route: fine conforming dual solve, then explicit least squares --------------
class FineRoute:
    """Dual solution from the package's forms on the refined mesh, all norms by loops."""

    def __init__(self, disc):
        self.disc = disc
        self.sampler = DualSampler(disc)
        self.fm = self.sampler.fine_mesh
        self.fd = Discretization(self.fm, disc.coeffs, disc.p + 1)
        self.orc = MeshOracle(self.fm, disc.coeffs, disc.p + 1, n=6)
        self.corc = MeshOracle(disc.mesh, disc.coeffs, disc.p)
        self.cb = BasisSet(disc.p, "scalar_broken")
        self.vb = BasisSet(disc.p, "vector_full")

    def coarse(self, t, x):
        k = int(self.fm.parent[t])
        return k, eval_phys(self.cb, self.corc.tri(k), x, tol=1e-9)

    def prolong(self, s):
        """Fine broken P_{p+1} coefficients of a coarse broken P_p field (exact least squares)."""
        out = []
        for t in range(self.fm.n_triangles):
            x, _ = self.orc.vol_points(t)
            k, (phi, _) = self.coarse(t, x)
            vf, _ = self.orc.phys(t, x)
            out.append(np.linalg.lstsq(vf, phi @ s.reshape(-1, phi.shape[1])[k], rcond=None)[0])
        return np.concatenate(out)

    def dual(self, s):
        psi = self.prolong(s)
        return psi, solve_conforming(self.fd, RhsSpec("dual_volume", coeffs=psi)).broken_vector()

    def weights(self):
        c = self.disc.coeffs.on_mesh(self.disc.mesh)
        mesh, w = self.disc.mesh, self.disc.coeffs.omega
        wk = np.maximum(1.0, (w * mesh.h_K / np.sqrt(c.alpha_K / c.mu_K)) ** 2) * c.alpha_K / mesh.h_K ** 2
        return c, wk

    def q_g(self, s):
        """min over coarse conforming c of ||U - c||^2_{dagger,1} on the working mesh."""
        _, U = self.dual(s)
        c, wk = self.weights()
        mesh, w = self.disc.mesh, self.disc.coeffs.omega
        E = self.disc.conforming.embedding.toarray()
        m = self.cb.dim
        rows, rhs = [], []
        for t in range(self.fm.n_triangles):
            x, wt = self.orc.vol_points(t)
            k, (phi, grad) = self.coarse(t, x)
            u, gu = self.orc.values(U, t, x)
            bv = phi @ E[k * m:(k + 1) * m]
            bg = np.einsum("qmk,mj->qjk", grad, E[k * m:(k + 1) * m])
            sq = np.sqrt(wt * wk[k])
            rows.append(sq[:, None] * bv)
            rhs.append(sq * u)
            L = np.linalg.cholesky(self.orc.A[t])
            for comp in range(2):
                rows.append(np.sqrt(wt)[:, None] * np.einsum("qjk,k->qj", bg, L[:, comp]))
                rhs.append(np.sqrt(wt) * (gu @ L[:, comp]))
        for e in np.flatnonzero(self.fm.face_labels == 3):
            x, wt, _ = self.orc.face(e)
            t = int(self.fm.edge_tris[e, 0])
            ce = int(self.fm.boundary_parent[e])
            hf = mesh.h_F[ce]
            theta = c.alpha_F[ce] / c.gamma_F[ce]
            wf = max(1.0, w * hf / theta) * c.alpha_F[ce] / hf
            k, (phi, _) = self.coarse(t, x)
            u, _ = self.orc.values(U, t, x)
            rows.append(np.sqrt(wt * wf)[:, None] * (phi @ E[k * m:(k + 1) * m]))
            rhs.append(np.sqrt(wt * wf) * u)
        return self._lsq(rows, rhs)

    def q_d(self, s):
        """min over BDM sigma of ||A grad U - sigma||^2_{dagger,div} (no Robin faces)."""
        psi, U = self.dual(s)
        c, _ = self.weights()
        w = self.disc.coeffs.omega
        E = self.disc.bdm.embedding.toarray()
        mv = self.vb.dim
        rows, rhs = [], []
        for t in range(self.fm.n_triangles):
            x, wt = self.orc.vol_points(t)
            k = int(self.fm.parent[t])
            sv, sg = eval_phys(self.vb, self.corc.tri(k), x, tol=1e-9)
            bv = np.einsum("qic,ij->qjc", sv, E[k * mv:(k + 1) * mv])
            bdiv = np.einsum("qicc,ij->qj", sg, E[k * mv:(k + 1) * mv])
            u, gu = self.orc.values(U, t, x)
            ps, _ = self.orc.values(psi, t, x)
            A = self.orc.A[t]
            target = gu @ A.T
            Li = np.linalg.inv(np.linalg.cholesky(A))  # ||z||_{A^-1} = |L^-1 z|
            for comp in range(2):
                rows.append(np.sqrt(wt)[:, None] * np.einsum("qjc,c->qj", bv, Li[comp]))
                rhs.append(np.sqrt(wt) * (target @ Li[comp]))
            mu = self.orc.mu[t]
            dw = np.sqrt(wt * self.disc.mesh.h_K[k] ** 2 / c.alpha_K[k])
            rows.append(dw[:, None] * bdiv)
            rhs.append(dw * (-w ** 2 * mu * u - w * mu * ps))
        return self._lsq(rows, rhs)

    @staticmethod
    def _lsq(rows, rhs):
        Y, y = np.vstack(rows).astype(complex), np.concatenate(rhs)
        c = np.linalg.lstsq(Y, y, rcond=None)[0]
        return float(np.linalg.norm(y - Y @ c) ** 2)


def test_g_form_matches_fine_route(rng):
    disc = Discretization(unit_square(2, MIXED), CoefficientSet(omega=2.5, gamma=0.8), 1)
    route = FineRoute(disc)
    Q = route.sampler.dense_form("g", "vol")
    for _ in range(3):
        s = cplx(rng, disc.broken.dim)
        assert np.vdot(s, Q @ s).real == pytest.approx(route.q_g(s), rel=1e-9)


def test_d_form_matches_fine_route(rng):
    disc = Discretization(unit_square(2, DN), CoefficientSet(omega=1.7, A=np.array([[1.5, 0.2], [0.2, 1.0]])), 1)
    route = FineRoute(disc)
    Q = route.sampler.dense_form("d", "vol")
    for _ in range(3):
        s = cplx(rng, disc.broken.dim)
        assert np.vdot(s, Q @ s).real == pytest.approx(route.q_d(s), rel=1e-9)


@pytest.mark.parametrize("which,source", [("g", "vol"), ("g", "rob"), ("d", "vol"), ("d", "rob")])
def test_apply_matches_dense_form(which, source, rng):
    disc = Discretization(unit_square(2, MIXED), CoefficientSet(omega=3.0, gamma=1.2), 1)
    sm = DualSampler(disc)
    Q = sm.dense_form(which, source)
    n = Q.shape[0]
    s = cplx(rng, n)
    assert np.allclose(sm.apply(which, source, s), Q @ s, rtol=1e-10, atol=1e-12 * np.abs(Q).max())
    assert np.abs(Q - Q.conj().T).max() <= 1e-12 * np.abs(Q).max()
    assert np.linalg.eigvalsh(Q).min() >= -1e-10 * np.abs(Q).max()


@pytest.mark.parametrize("iterative,tol", [("lanczos", 1e-5), ("power", 1e-2)])
def test_iterative_search_matches_dense(iterative, tol):
    disc = Discretization(unit_square(2, MIXED), CoefficientSet(omega=2.0, gamma=1.0), 1)
    dense = sample_gamma_ba(disc)
    it = sample_gamma_ba(disc, dense_limit=0, iterative=iterative)
    for key in ("check_g", "check_d", "tilde_g", "tilde_d"):
        assert dense.info[key]["method"] == "dense"
        assert it.info[key]["method"] == iterative
        assert getattr(it, key) == pytest.approx(getattr(dense, key), rel=tol)
        assert getattr(it, key) <= getattr(dense, key) * (1 + 1e-8)


def test_boundary_factors_vanish_without_robin():
    disc = Discretization(unit_square(3, "D"), CoefficientSet(omega=1.0), 1)
    f = sample_gamma_ba(disc)
    assert f.tilde_g == 0.0 and f.tilde_d == 0.0
    assert f.check_g > 0 and f.check_d > 0
    assert f.gamma_ba == pytest.approx(2 * f.check_ba, rel=1e-14)


def test_factors_decrease_under_refinement():
    vals = [sample_gamma_ba(Discretization(unit_square(n, "D"), CoefficientSet(omega=1.0), 1)) for n in (2, 4)]
    assert vals[1].check_g < vals[0].check_g and vals[1].check_d < vals[0].check_d


def test_trivial_conforming_space_rejected():
    mesh = build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)], lambda m, n: "D")
    with pytest.raises(InputError):
        sample_gamma_ba(Discretization(mesh, CoefficientSet(omega=1.0), 1))


def test_zero_source_has_zero_form():
    disc = Discretization(unit_square(2, MIXED), CoefficientSet(omega=1.0), 1)
    sm = DualSampler(disc)
    assert np.abs(sm.apply("g", "vol", np.zeros(disc.broken.dim))).max() == 0
