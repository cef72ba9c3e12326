import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from helmdg.coefficients import CoefficientSet
from helmdg.discretization import Discretization
from helmdg.errors import InputError, SolverError
from helmdg.measure import error_norms
from helmdg.mesh import uniform_refine, unit_square
from helmdg.solver import (AssembledSystem, ProblemData, RhsSpec, load_vector, manufactured, solve_conforming,
                           solve_ipdg, stability_probe)
from helmdg.studies import fit_slope

MIXED = {"left": "D", "right": "N", "bottom": "R", "top": "R"}


def zero_data():
    return ProblemData(lambda x, mu, A: np.zeros(x.shape[:-1], dtype=complex))


def fd_laplacian(fn, x, h=1e-4):
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    return (fn(x + ex) + fn(x - ex) + fn(x + ey) + fn(x - ey) - 4 * fn(x)) / h ** 2


# -- manufactured cases ------------------------------------------------------------
def test_unknown_case_rejected():
    with pytest.raises(InputError):
        manufactured("nope")


def test_constant_case_residual(rng):
    coeffs = CoefficientSet(omega=1.7, mu=2.0)
    case = manufactured("constant", coeffs, c=3.0)
    x = rng.uniform(size=(20, 2))
    f = case.f(x, 2.0, np.eye(2))
    assert np.allclose(f, -1.7 ** 2 * 2.0 * 3.0)
    assert np.allclose(case.g_neumann(x, np.tile([1.0, 0.0], (20, 1)), np.eye(2)), 0.0)


def test_plane_wave_interior_source_vanishes(rng):
    coeffs = CoefficientSet(omega=4.0, mu=1.5, A=2.0)
    case = manufactured("plane_wave", coeffs)
    x = rng.uniform(size=(30, 2))
    assert np.abs(case.f(x, 1.5, 2.0 * np.eye(2))).max() <= 1e-10
    # analytic derivatives against finite differences
    h = 1e-6
    for k, e in enumerate(np.eye(2)):
        fd = (case.u(x + h * e) - case.u(x - h * e)) / (2 * h)
        assert np.abs(fd - case.grad(x)[:, k]).max() <= 1e-6
    lap = fd_laplacian(case.u, x)
    assert np.abs(lap - np.trace(case.hess(x), axis1=-2, axis2=-1)).max() <= 1e-4 * case.params["k"] ** 2


def test_corner_function_harmonic(rng):
    case = manufactured("corner_singular", CoefficientSet(omega=1.0))
    r = rng.uniform(0.2, 0.9, size=40)
    th = rng.uniform(0.1, 1.5 * np.pi - 0.1, size=40) + np.pi / 2
    x = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert np.abs(fd_laplacian(case.u, x, h=1e-3)).max() <= 1e-4
    assert np.abs(np.trace(case.hess(x), axis1=-2, axis2=-1)).max() <= 1e-10
    # vanishes on both re-entrant edges
    t = np.linspace(0.05, 1.0, 7)
    assert np.abs(case.u(np.column_stack([t, 0 * t]))).max() <= 1e-12
    assert np.abs(case.u(np.column_stack([0 * t, -t]))).max() <= 1e-12


def test_cutoff_corner_consistent(rng):
    case = manufactured("corner_singular", CoefficientSet(omega=1.0), cutoff=True)
    x = rng.uniform(-0.9, 0.9, size=(40, 2))
    x = x[~((x[:, 0] > 0) & (x[:, 1] < 0))]
    lap = fd_laplacian(case.u, x, h=1e-3)
    assert np.abs(lap - np.trace(case.hess(x), axis1=-2, axis2=-1)).max() <= 1e-3


def test_assembled_system_checks_dimensions():
    d = Discretization(unit_square(1, "D"), CoefficientSet(omega=1.0), 1)
    with pytest.raises(InputError):
        AssembledSystem(d.forms.b_h, np.zeros(3), d.broken)


# -- IPDG solve ---------------------------------------------------------------------
def test_zero_source_zero_solution():
    d = Discretization(unit_square(4, "D"), CoefficientSet(omega=1.0), 2)
    uh = solve_ipdg(d, zero_data())
    assert np.abs(uh.coeffs).max() == 0


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 2]))
def test_residual_and_galerkin_orthogonality(seed, p):
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.5, 8.0)
    d = Discretization(unit_square(3, MIXED), CoefficientSet(omega=omega, gamma=rng.uniform(0.5, 2)), p)
    case = manufactured("plane_wave", d.coeffs, d=tuple(rng.normal(size=2)))
    uh = solve_ipdg(d, case)
    F = load_vector(d, case.data())
    B = d.forms.b_h
    assert np.linalg.norm(B @ uh.coeffs - F) <= 1e-10 * np.linalg.norm(F)
    assert uh.info.residual <= 1e-10
    # b_h(u - u_h, v) = 0 for conforming v, with b_h(u, v) = (f, v) for those v
    e = d.conforming.embedding
    res = e.T @ (B @ uh.coeffs - F)
    assert np.abs(res).max() <= 1e-9 * np.abs(e.T @ F).max()


@pytest.mark.slow
def test_plane_wave_energy_rate():
    coeffs = CoefficientSet(omega=4.0)
    case = manufactured("plane_wave", coeffs)
    mesh = case.mesh(4)
    hs, errs = [], []
    for _ in range(4):
        d = Discretization(mesh, coeffs, 1)
        errs.append(error_norms(d, solve_ipdg(d, case), case).energy)
        hs.append(mesh.h)
        mesh = uniform_refine(mesh, 1)
    assert fit_slope(hs, errs) >= 0.9


def test_coercive_shift():
    d = Discretization(unit_square(3, MIXED), CoefficientSet(omega=1.0), 1)
    s = (d.forms.a_h + d.forms.mass).toarray()
    assert np.linalg.eigvalsh(0.5 * (s + s.T)).min() > 0


@pytest.mark.parametrize("n", [2, 4])
def test_resonance_reported(n):
    # omega^2 at a discrete Dirichlet eigenvalue of the conforming P1 problem
    d0 = Discretization(unit_square(n, "D"), CoefficientSet(omega=1.0), 1)
    e = d0.conforming.embedding
    K = (e.T @ d0.forms.stiffness @ e).toarray().real
    M = (e.T @ d0.forms.mass @ e).toarray().real
    lam = sla.eigh(K, M, eigvals_only=True)[0]
    d = Discretization(unit_square(n, "D"), CoefficientSet(omega=np.sqrt(lam)), 1)
    case = manufactured("smooth_source", d.coeffs)
    with pytest.raises(SolverError) as info:
        solve_conforming(d, case, conditioning=True)
    assert info.value.cond_estimate > 1e12


def test_near_resonance_flag():
    # omega close to the first continuous eigenvalue: flagged, not silently solved
    d = Discretization(unit_square(8, "D"), CoefficientSet(omega=np.pi * np.sqrt(2)), 2)
    ok = Discretization(unit_square(8, "D"), CoefficientSet(omega=1.0), 2)
    case = manufactured("smooth_source", d.coeffs)
    assert solve_ipdg(d, case).info.cond_ratio > 10 * solve_ipdg(ok, case).info.cond_ratio


# -- conforming and dual solves ----------------------------------------------------
def test_dual_zero_sample():
    d = Discretization(unit_square(3, MIXED), CoefficientSet(omega=2.0), 2)
    u = solve_conforming(d, RhsSpec("dual_volume", coeffs=np.zeros(d.broken.dim)))
    assert np.abs(u.coeffs).max() == 0


def test_robin_dual_rejected_without_robin():
    d = Discretization(unit_square(2, "D"), CoefficientSet(omega=2.0), 1)
    with pytest.raises(InputError):
        solve_conforming(d, RhsSpec("dual_robin", coeffs=np.ones(4)))


def test_trivial_conforming_space_rejected():
    from helmdg.mesh import build_mesh
    mesh = build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)], lambda m, n: "D")
    d = Discretization(mesh, CoefficientSet(omega=1.0), 1)
    with pytest.raises(InputError):
        solve_conforming(d, zero_data())
    with pytest.raises(InputError):
        stability_probe(d)


def test_dual_is_adjoint_positioned(rng):
    d = Discretization(unit_square(3, MIXED), CoefficientSet(omega=3.0, gamma=1.3), 1)
    psi = rng.normal(size=d.broken.dim) + 1j * rng.normal(size=d.broken.dim)
    ustar = solve_conforming(d, RhsSpec("dual_volume", coeffs=psi)).broken_vector()
    e = d.conforming.embedding
    f = d.forms
    w = 3.0
    b = -w ** 2 * f.mass - 1j * w * f.robin + f.stiffness
    # b(w_j, u*) = omega (mu w_j, psi) with b sesquilinear: conj on the second slot
    lhs = e.T @ (b.T @ ustar.conj())
    rhs = w * (e.T @ (f.mass @ psi.conj()))
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


@pytest.mark.slow
def test_conforming_plane_wave_rate():
    coeffs = CoefficientSet(omega=4.0)
    case = manufactured("plane_wave", coeffs)
    mesh = case.mesh(4)
    hs, errs = [], []
    for _ in range(4):
        d = Discretization(mesh, coeffs, 2)
        u = solve_conforming(d, case)
        errs.append(error_norms(d, u, case).energy)
        hs.append(mesh.h)
        mesh = uniform_refine(mesh, 1)
    assert fit_slope(hs, errs) >= 1.8


# -- stability probe -----------------------------------------------------------------
def test_probe_coercive_limit():
    d = Discretization(unit_square(6, "D"), CoefficientSet(omega=1e-3), 1)
    assert stability_probe(d).value == pytest.approx(1.0, abs=1e-4)


def test_probe_collapses_near_eigenvalue():
    vals = {}
    for omega in (2.0, np.pi * np.sqrt(2)):
        d = Discretization(unit_square(6, "D"), CoefficientSet(omega=omega), 2)
        vals[omega] = stability_probe(d).value
    assert vals[np.pi * np.sqrt(2)] < 0.05 * vals[2.0]


def test_probe_positive_with_robin():
    d = Discretization(unit_square(6, "R"), CoefficientSet(omega=np.pi * np.sqrt(2)), 2)
    p = stability_probe(d)
    assert p.value > 0 and p.method == "dense" and p.dofs == d.conforming.dim
