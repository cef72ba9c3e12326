import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from helmdg.basis import BasisSet, eval_phys
from helmdg.coefficients import CoefficientSet
from helmdg.discretization import Discretization
from helmdg.measure import best_bdm_flux
from helmdg.mesh import build_mesh, l_shape, uniform_refine, unit_square
from helmdg.norms import (averaging_J, dagger1_norm, daggerdiv_norm, duality_pairing, energy_norm, project_d,
                          project_g)
from helmdg.solver import manufactured
from helmdg.spaces import BrokenField, interpolate
from helmdg.studies import fit_slope
from oracles import MeshOracle

MIXED = {"left": "D", "right": "N", "bottom": "R", "top": "R"}


def two_triangles(label):
    return build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)], lambda mid, n: label)


def disc_on(mesh, p=1, omega=3.0, **kw):
    return Discretization(mesh, CoefficientSet(omega=omega, **kw), p)


def cplx(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


# -- norms -----------------------------------------------------------------------
def test_zero_fields():
    d = disc_on(unit_square(2, MIXED))
    ws = d.norms
    assert energy_norm(np.zeros(d.broken.dim), ws) == 0
    assert dagger1_norm(np.zeros(d.broken.dim), ws) == 0
    assert daggerdiv_norm(np.zeros(ws.daggerdiv_gram.shape[0]), ws) == 0
    assert duality_pairing(np.zeros(d.broken.dim), np.ones(ws.daggerdiv_gram.shape[0]), ws) == 0


def test_constant_energy_neumann():
    d = disc_on(unit_square(3, "N"), p=2, omega=2.5)
    one = interpolate(d.conforming, lambda x: np.ones(x.shape[:-1]))
    assert energy_norm(one, d.norms) == pytest.approx(2.5, rel=1e-12)


def test_constant_vector_daggerdiv():
    d = disc_on(l_shape(1, "D"), p=1)
    w = interpolate(d.bdm, lambda x: np.stack([np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], -1))
    assert daggerdiv_norm(w, d.norms) ** 2 == pytest.approx(3.0, rel=1e-12)


def _dagger1_oracle(mesh, coeffs, p, c):
    orc = MeshOracle(mesh, coeffs, p)
    w = coeffs.omega
    tot = 0.0
    for k in range(mesh.n_triangles):
        x, wt = orc.vol_points(k)
        v, g = orc.values(c, k, x)
        h = orc.h(k)
        theta = np.sqrt(orc.alpha[k] / orc.mu[k])
        weight = max(1.0, (w * h / theta) ** 2) * orc.alpha[k] / h ** 2
        tot += weight * np.sum(wt * np.abs(v) ** 2)
        tot += np.sum(wt * np.einsum("qk,kl,ql->q", g.conj(), orc.A[k], g).real)
    for e in np.flatnonzero(mesh.face_labels == 3):
        x, wt, _ = orc.face(e)
        k = int(mesh.edge_tris[e, 0])
        v, _ = orc.values(c, k, x)
        hf = mesh.h_F[e]
        theta_f = orc.alpha_F(e) / orc.gamma_F(e)
        tot += max(1.0, w * hf / theta_f) * orc.alpha_F(e) / hf * np.sum(wt * np.abs(v) ** 2)
    return np.sqrt(tot)


@pytest.mark.parametrize("omega", [0.3, 7.0])
def test_hat_function_dagger1(omega):
    mesh = unit_square(2, {"left": "D", "right": "R", "bottom": "N", "top": "R"})
    coeffs = CoefficientSet(omega=omega, gamma=0.8)
    d = Discretization(mesh, coeffs, 1)
    for j in range(d.conforming.dim):
        x = np.zeros(d.conforming.dim)
        x[j] = 1.0
        hat = BrokenField(d.conforming, x)
        ref = _dagger1_oracle(mesh, coeffs, 1, hat.broken_vector())
        assert dagger1_norm(hat, d.norms) == pytest.approx(ref, rel=1e-12)


def test_small_omega_weights():
    d = disc_on(unit_square(2, "D"), omega=1e-8)
    ws = d.norms
    c = d.coeffs.on_mesh(d.mesh)
    assert np.allclose(ws.element_weights, c.alpha_K / d.mesh.h_K ** 2)


def test_bdm_member_daggerdiv_oracle():
    mesh = unit_square(2, {"left": "N", "right": "R", "bottom": "D", "top": "R"})
    coeffs = CoefficientSet(omega=2.0, A=np.array([[2.0, 0.3], [0.3, 1.0]]), gamma=1.5)
    d = Discretization(mesh, coeffs, 1)
    orc = MeshOracle(mesh, coeffs, 1)
    vb = BasisSet(1, "vector_full")
    E = d.bdm.embedding.toarray()
    for j in range(0, d.bdm.dim, 3):
        c = E[:, j].reshape(mesh.n_triangles, -1)
        tot = 0.0
        for k in range(mesh.n_triangles):
            x, wt = orc.vol_points(k)
            v, g = eval_phys(vb, orc.tri(k), x, tol=1e-9)
            wv = np.einsum("qic,i->qc", v, c[k])
            div = np.einsum("qicc,i->q", g, c[k])
            tot += np.sum(wt * np.einsum("qc,cd,qd->q", wv, np.linalg.inv(orc.A[k]), wv))
            tot += orc.h(k) ** 2 / orc.alpha[k] * np.sum(wt * div ** 2)
        for e in np.flatnonzero(mesh.face_labels == 3):
            x, wt, nrm = orc.face(e)
            k = int(mesh.edge_tris[e, 0])
            v, _ = eval_phys(vb, orc.tri(k), x, tol=1e-9)
            wn = np.einsum("qic,i,c->q", v, c[k], nrm)
            tot += mesh.h_F[e] / orc.alpha_F(e) * np.sum(wt * wn ** 2)
        assert daggerdiv_norm(E[:, j], d.norms) == pytest.approx(np.sqrt(tot), rel=1e-12)


# -- duality ---------------------------------------------------------------------------
def test_pairing_conforming_vanishes(rng):
    d = disc_on(l_shape(1, "R"), p=2)
    phi = BrokenField(d.conforming, cplx(rng, d.conforming.dim))
    for _ in range(5):
        w = BrokenField(d.bdm, cplx(rng, d.bdm.dim))
        scale = dagger1_norm(phi, d.norms) * daggerdiv_norm(w, d.norms)
        assert abs(duality_pairing(phi, w, d.norms)) <= 1e-10 * scale


def test_pairing_constants_against_hand_integrals(rng):
    mesh = unit_square(2, MIXED)
    coeffs = CoefficientSet(omega=1.0)
    d = Discretization(mesh, coeffs, 1)
    orc = MeshOracle(mesh, coeffs, 1)
    vb = BasisSet(1, "vector_full")
    consts = rng.choice([-1.0, 1.0, 2.0], size=mesh.n_triangles)
    unit = interpolate(d.broken, lambda x: np.ones(x.shape[:-1])).broken()
    phi = BrokenField(d.broken, (unit * consts[:, None]).ravel())
    E = d.bdm.embedding.toarray()
    for j in range(d.bdm.dim):
        c = E[:, j].reshape(mesh.n_triangles, -1)
        ref = 0.0
        for k in range(mesh.n_triangles):
            x, wt = orc.vol_points(k)
            _, g = eval_phys(vb, orc.tri(k), x, tol=1e-9)
            ref += consts[k] * np.sum(wt * np.einsum("qicc,i->q", g, c[k]))
        for e in range(mesh.n_faces):
            x, wt, nrm = orc.face(e)
            lab = orc.label(e)
            ks = mesh.edge_tris[e]
            if lab in (0, 1):
                jmp = consts[ks[0]] - (consts[ks[1]] if lab == 0 else 0.0)
                avg = 0.0
                for s, k in enumerate(ks):
                    if k >= 0:
                        v, _ = eval_phys(vb, orc.tri(k), x, tol=1e-9)
                        avg = avg + orc.avg_sign(e, s) * np.einsum("qic,i,c->q", v, c[k], nrm)
                ref -= jmp * np.sum(wt * avg)
            elif lab == 3:
                v, _ = eval_phys(vb, orc.tri(ks[0]), x, tol=1e-9)
                ref -= consts[ks[0]] * np.sum(wt * np.einsum("qic,i,c->q", v, c[ks[0]], nrm))
        assert duality_pairing(phi, E[:, j], d.norms) == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 2]))
def test_norm_duality_and_control(seed, p):
    rng = np.random.default_rng(seed)
    d = disc_on(unit_square(2, MIXED), p=p, omega=rng.uniform(0.5, 20.0), gamma=rng.uniform(0.3, 3.0))
    ws = d.norms
    phi = cplx(rng, d.broken.dim)
    w = BrokenField(d.bdm, cplx(rng, d.bdm.dim))
    assert abs(duality_pairing(phi, w, ws)) <= dagger1_norm(phi, ws) * daggerdiv_norm(w, ws) * (1 + 1e-12)
    assert energy_norm(phi, ws) <= dagger1_norm(phi, ws) * (1 + 1e-12)


# -- projections --------------------------------------------------------------------------
def test_project_g_identity_and_degenerate(rng):
    d = disc_on(unit_square(3, MIXED), p=2)
    v = BrokenField(d.conforming, cplx(rng, d.conforming.dim))
    assert np.allclose(project_g(v, d.norms).coeffs, v.coeffs, atol=1e-11)
    dd = disc_on(two_triangles("D"))
    assert dd.conforming.dim == 0
    assert project_g(cplx(rng, 6), dd.norms).coeffs.size == 0


def test_project_g_checkerboard_dense_oracle():
    mesh = unit_square(2, "N")
    d = disc_on(mesh)
    unit = interpolate(d.broken, lambda x: np.ones(x.shape[:-1])).broken()
    sign = np.where(np.arange(mesh.n_triangles) % 2 == 0, 1.0, -1.0)
    v = (unit * sign[:, None]).ravel()
    G = d.norms.dagger1_gram.toarray()
    E = d.conforming.embedding.toarray()
    c = np.linalg.solve(E.T @ G @ E, E.T @ G @ v)
    got = project_g(v, d.norms).coeffs
    assert np.allclose(got, c, atol=1e-12)
    resid = v - E @ got
    assert np.abs(E.T @ G @ resid).max() <= 1e-10 * np.abs(G @ v).max()


@given(st.integers(0, 2 ** 31 - 1))
def test_projection_optimality(seed):
    rng = np.random.default_rng(seed)
    d = disc_on(unit_square(2, MIXED), p=1, omega=rng.uniform(0.5, 10))
    v = cplx(rng, d.broken.dim)
    best = dagger1_norm(v - project_g(v, d.norms).broken_vector(), d.norms)
    e = d.conforming.embedding
    for _ in range(10):
        cand = e @ cplx(rng, d.conforming.dim)
        assert best <= dagger1_norm(v - cand, d.norms) + 1e-10
    w = cplx(rng, d.norms.daggerdiv_gram.shape[0])
    bestd = daggerdiv_norm(w - project_d(w, d.norms).broken_vector(), d.norms)
    for _ in range(10):
        cand = d.bdm.embedding @ cplx(rng, d.bdm.dim)
        assert bestd <= daggerdiv_norm(w - cand, d.norms) + 1e-10


def test_project_d_members_and_constants(rng):
    d = disc_on(l_shape(1, "R"), p=2)
    w = BrokenField(d.bdm, cplx(rng, d.bdm.dim))
    assert np.allclose(project_d(w, d.norms).coeffs, w.coeffs, atol=1e-11)
    const = interpolate(d.norms.disc.bdm, lambda x: np.stack([np.full(x.shape[:-1], 0.3),
                                                             np.full(x.shape[:-1], -1.2)], -1))
    pc = project_d(const.broken_vector(), d.norms)
    assert daggerdiv_norm(const.broken_vector() - pc.broken_vector(), d.norms) <= 1e-11


def test_flux_projection_converges():
    mesh = unit_square(2, "R")
    hs, errs = [], []
    for _ in range(3):
        d = disc_on(mesh, p=1, omega=4.0)
        case = manufactured("plane_wave", d.coeffs)
        errs.append(best_bdm_flux(d, case)[0])
        hs.append(mesh.h)
        mesh = uniform_refine(mesh, 1)
    assert np.all(np.diff(errs) < 0) and fit_slope(hs, errs) > 0.5


def test_best_approximation_decreases():
    mesh = unit_square(2, MIXED)
    dist = []
    for _ in range(4):
        d = disc_on(mesh, p=1, omega=2.0)
        v = interpolate(d.broken, lambda x: x[..., 0] * np.exp(x[..., 0]) * np.cos(2 * x[..., 1]))
        dist.append(dagger1_norm(v.coeffs - project_g(v, d.norms).broken_vector(), d.norms))
        mesh = uniform_refine(mesh, 1)
    assert np.all(np.diff(dist) <= 1e-12)


# -- averaging -------------------------------------------------------------------------------
def test_averaging_identity_on_conforming(rng):
    d = disc_on(l_shape(1, "D"), p=3)
    v = BrokenField(d.conforming, cplx(rng, d.conforming.dim))
    assert np.allclose(averaging_J(v.broken_vector(), d.norms).coeffs, v.coeffs, atol=1e-12)


def test_averaging_checkerboard():
    for label, expect in (("N", {0: 0.0, 2: 0.0, 1: 1.0, 3: -1.0}),
                          (None, {1: 1.0})):
        spec = label if label else {(0, 1): "N", (1, 2): "N", (2, 3): "D", (3, 0): "D"}
        mesh = two_triangles(spec) if label else build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)],
                                                             [(0, 1, 2), (0, 2, 3)], spec)
        d = disc_on(mesh)
        unit = interpolate(d.broken, lambda x: np.ones(x.shape[:-1])).broken()
        # +1 on the triangle containing vertex 1, -1 on the other
        t1 = [k for k in range(2) if 1 in mesh.triangles[k]][0]
        sign = np.where(np.arange(2) == t1, 1.0, -1.0)
        j = averaging_J((unit * sign[:, None]).ravel(), d.norms)
        cs = d.conforming
        vals = dict(zip(cs.free_nodes.tolist(), j.coeffs.real))
        for node, val in expect.items():
            assert vals[node] == pytest.approx(val, abs=1e-14)
        assert set(vals) == set(expect)


def test_averaging_bound_constant_bounded():
    consts = []
    mesh = unit_square(2, "D")
    for _ in range(3):
        d = disc_on(mesh, omega=1.0)
        ws = d.norms
        I = np.eye(d.broken.dim)
        R = I - ws.averaging_matrix.toarray()
        lhs = R.T @ ws.dagger1_gram.toarray() @ R
        jumps = d.forms.penalty_matrix.toarray() / 10.0
        lam = sla.eigh(0.5 * (lhs + lhs.T), jumps + 1e-10 * np.eye(len(I)), eigvals_only=True)
        consts.append(lam.max())
        mesh = uniform_refine(mesh, 1)
    assert max(consts) <= 1.5 * min(consts)
