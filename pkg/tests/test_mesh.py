import numpy as np
import pytest
from hypothesis import given, strategies as st

from helmdg.coefficients import CoefficientSet
from helmdg.errors import GeometryError, InputError, MeshSpecificationError, MeshStructureError
from helmdg.mesh import (DIRICHLET, INTERIOR, NEUMANN, ROBIN, build_mesh, l_shape, mesh_scalars, read_mesh,
                         refine, uniform_refine, unit_square, write_mesh)

SQUARE_V = [(0, 0), (1, 0), (1, 1), (0, 1)]
SQUARE_T = [(0, 1, 2), (0, 2, 3)]


def two_triangles(label="D"):
    return build_mesh(SQUARE_V, SQUARE_T, lambda mid, n: label)


def assert_valid(mesh, area=None):
    # every edge shared by at most two triangles and matching by sorted keys
    keys = np.sort(np.concatenate([mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]],
                                   mesh.triangles[:, [0, 1]]]), axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    assert counts.max() <= 2
    assert np.all(mesh.area > 0)
    interior = mesh.edge_tris[:, 1] >= 0
    assert np.all(mesh.face_labels[interior] == INTERIOR)
    assert np.all(np.isin(mesh.face_labels[~interior], [DIRICHLET, NEUMANN, ROBIN]))
    assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-14)
    out = mesh.face_midpoints[~interior] - mesh.centroids[mesh.edge_tris[~interior, 0]]
    assert np.all(np.einsum("ij,ij->i", out, mesh.normals[~interior]) > 0)
    # no hanging node: no vertex lies strictly inside a boundary edge of the union
    v = mesh.vertices
    for a, b in mesh.edges[~interior]:
        d = v[b] - v[a]
        rel = v - v[a]
        t = rel @ d / (d @ d)
        cross = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])
        assert not np.any((t > 1e-12) & (t < 1 - 1e-12) & (cross < 1e-12))
    if area is not None:
        assert abs(mesh.area.sum() - area) <= 1e-12 * area


def test_two_triangle_square_faces():
    m = two_triangles()
    assert m.n_faces == 5
    assert np.sum(m.face_labels == DIRICHLET) == 4
    assert np.sum(m.face_labels == INTERIOR) == 1


def test_grid_label_counts():
    m = unit_square(4, boundary={"left": "R", "right": "N", "bottom": "N", "top": "N"})
    # 4 edges per side; 3 Neumann sides
    assert len(m.faces_with_label("R")) == 4
    assert len(m.faces_with_label("N")) == 12
    assert_valid(m, 1.0)
    # an 8 x 8 grid gives 8 Robin and 24 Neumann faces
    m = unit_square(8, boundary={"left": "R", "right": "N", "bottom": "N", "top": "N"})
    assert (len(m.faces_with_label("R")), len(m.faces_with_label("N"))) == (8, 24)


def test_partial_edge_sharing_rejected():
    v = [(0, 0), (2, 0), (1, 1), (1, 0), (0, -1), (2, -1)]
    # triangle (0,1,2) above, two triangles below split at (1,0): vertex 3 hangs on edge 0-1
    with pytest.raises(MeshStructureError):
        build_mesh(v, [(0, 1, 2), (0, 4, 3), (3, 5, 1)], lambda mid, n: "D")


def test_zero_area_rejected():
    with pytest.raises(GeometryError):
        build_mesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)], lambda mid, n: "D")


def test_unlabeled_boundary_rejected():
    with pytest.raises(MeshSpecificationError):
        build_mesh(SQUARE_V, SQUARE_T, {(0, 1): "D"})


def test_refine_all_of_two_triangles_gives_eight():
    m = refine(two_triangles(), [0, 1])
    assert m.n_triangles == 8
    assert_valid(m, 1.0)


def test_refine_empty_rejected():
    with pytest.raises(InputError):
        refine(two_triangles(), [])


def test_refine_single_triangle_closure():
    m = unit_square(3)
    r = refine(m, [4])
    assert r.n_triangles > m.n_triangles + 1
    assert_valid(r, 1.0)


def test_equilateral_scalars():
    m = build_mesh([(0, 0), (1, 0), (0.5, np.sqrt(3) / 2)], [(0, 1, 2)], lambda mid, n: "D")
    assert m.h_K[0] == pytest.approx(1.0)
    # inscribed diameter convention: rho_K = 2 * inradius = 1/sqrt(3)
    assert m.rho_K[0] == pytest.approx(1 / np.sqrt(3))
    assert m.kappa == pytest.approx(np.sqrt(3))


def test_uniform_refinement_halves_h():
    for m in (unit_square(3), l_shape(2)):
        m2 = uniform_refine(m, 1)
        assert m2.h == pytest.approx(m.h / 2, rel=1e-12)


def test_empty_robin_max_is_zero():
    s = mesh_scalars(unit_square(2), CoefficientSet(omega=3.0))
    assert not s.has_robin and s.max_F == 0.0 and s.omega_h_over_theta_F.size == 0
    s = mesh_scalars(unit_square(2, "R"), CoefficientSet(omega=3.0, gamma=2.0))
    # theta_F = alpha_F / gamma_F = 1/2
    assert s.max_F == pytest.approx(3.0 * 0.5 / 0.5)


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4))
def test_random_refinement_invariants(seed, rounds):
    rng = np.random.default_rng(seed)
    m0 = l_shape(1, regions=lambda c: int(c[0] > 0))
    m = m0
    kappas = [m0.kappa]
    for _ in range(rounds):
        k = rng.integers(1, max(2, m.n_triangles // 3))
        marked = rng.choice(m.n_triangles, size=k, replace=False)
        new = refine(m, marked)
        # children inherit region ids
        assert np.array_equal(new.region, m.region[new.parent])
        m = new
        kappas.append(m.kappa)
        assert_valid(m, 3.0)
    # newest-vertex bisection produces finitely many similarity classes
    assert max(kappas) <= 4 * kappas[0]


def test_boundary_labels_inherited(tmp_path):
    m = refine(unit_square(2, {"left": ("R", 1), "right": "D", "bottom": "N", "top": ("R", 2)}), [0, 3])
    left = np.isclose(m.face_midpoints[:, 0], 0) & m.is_boundary
    top = np.isclose(m.face_midpoints[:, 1], 1) & m.is_boundary
    assert np.all(m.face_labels[left] == ROBIN) and np.all(m.face_patch[left] == 1)
    assert np.all(m.face_patch[top] == 2)
    path = tmp_path / "m.mesh"
    write_mesh(m, path)
    r = read_mesh(path)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.face_labels, m.face_labels)
    assert np.array_equal(r.face_patch, m.face_patch)
    assert np.array_equal(r.vertices, m.vertices)


def test_read_mesh_bad_header(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("not a mesh\n")
    with pytest.raises(MeshSpecificationError):
        read_mesh(p)
