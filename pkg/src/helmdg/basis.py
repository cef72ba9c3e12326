"""Polynomial bases on the reference triangle.

Broken spaces use a modal basis: monomials in centred reference
coordinates, orthonormalised on the reference triangle (Cholesky of the
exact Gram matrix).  Conforming spaces use the nodal Lagrange basis on the
equispaced lattice, expressed in modal coefficients so both share one
evaluation path.  The affine map of triangle (v0, v1, v2) is
x = v0 + J xi with J = [v1 - v0, v2 - v0].
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GeometryError, InputError
from .quadrature import triangle_rule

_CENTER = 1.0 / 3.0
KINDS = ("scalar_broken", "scalar_lagrange", "vector_full")


def scalar_dim(p):
    return (p + 1) * (p + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(p):
    return tuple((d - j, j) for d in range(p + 1) for j in range(d + 1))


def _powers(x, n):
    out = np.ones(x.shape + (n + 1,))
    for k in range(1, n + 1):
        out[..., k] = out[..., k - 1] * x
    return out


def monomials(p, ref_points, derivatives=1):
    """Centred monomials and their reference derivatives.

    Returns ``(values, grads, hessians)`` with shapes (..., m), (..., m, 2),
    (..., m, 2, 2); entries beyond ``derivatives`` are None.
    """
    pts = np.asarray(ref_points, dtype=float)
    x = pts[..., 0] - _CENTER
    y = pts[..., 1] - _CENTER
    px, py = _powers(x, p), _powers(y, p)
    exps = monomial_exponents(p)
    a = np.array([e[0] for e in exps])
    b = np.array([e[1] for e in exps])
    vals = px[..., a] * py[..., b]
    grads = hess = None
    if derivatives >= 1:
        am1 = np.maximum(a - 1, 0)
        bm1 = np.maximum(b - 1, 0)
        gx = a * px[..., am1] * py[..., b]
        gy = b * px[..., a] * py[..., bm1]
        grads = np.stack([gx, gy], axis=-1)
    if derivatives >= 2:
        am2 = np.maximum(a - 2, 0)
        bm2 = np.maximum(b - 2, 0)
        hxx = a * (a - 1) * px[..., am2] * py[..., b]
        hyy = b * (b - 1) * px[..., a] * py[..., bm2]
        hxy = a * b * px[..., am1] * py[..., bm1]
        hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return vals, grads, hess


@lru_cache(maxsize=None)
def modal_coefficients(p):
    """Matrix C with phi = monomials @ C orthonormal on the reference triangle."""
    rule = triangle_rule(2 * p)
    v, _, _ = monomials(p, rule.points, derivatives=0)
    gram = v.T @ (rule.weights[:, None] * v)
    r = np.linalg.cholesky(gram).T
    c = np.linalg.inv(r)
    c.setflags(write=False)
    return c


def _apply(c, vals, grads, hess):
    out_v = vals @ c
    out_g = None if grads is None else np.einsum("...mk,mn->...nk", grads, c)
    out_h = None if hess is None else np.einsum("...mkl,mn->...nkl", hess, c)
    return out_v, out_g, out_h


def modal_eval(p, ref_points, derivatives=1):
    """Orthonormal modal basis of P_p at reference points."""
    return _apply(modal_coefficients(p), *monomials(p, ref_points, derivatives))


@lru_cache(maxsize=None)
def lattice(p):
    """Equispaced lattice (i, j), i + j <= p, and reference coordinates (i/p, j/p)."""
    ij = np.array([(i, j) for j in range(p + 1) for i in range(p + 1 - j)], dtype=int)
    ij.setflags(write=False)
    return ij


def lattice_points(p):
    return lattice(p) / float(p)


@lru_cache(maxsize=None)
def lagrange_coefficients(p):
    """Modal coefficients of the nodal Lagrange basis: column k is node k."""
    vander, _, _ = modal_eval(p, lattice_points(p), derivatives=0)
    c = np.linalg.inv(vander)
    c.setflags(write=False)
    return c


@dataclass(frozen=True)
class BasisSet:
    """A reference basis; ``reference_eval`` returns values and gradients.

    For ``vector_full`` the 2m functions are ordered component-major:
    index c*m + i is phi_i times the unit vector e_c.
    """

    degree: int
    kind: str

    def __post_init__(self):
        if self.degree < 1 and self.kind != "scalar_broken":
            raise InputError("degree must be >= 1")
        if self.degree < 0:
            raise InputError("degree must be >= 0")
        if self.kind not in KINDS:
            raise InputError(f"unknown basis kind {self.kind!r}")

    @property
    def dim(self):
        m = scalar_dim(self.degree)
        return 2 * m if self.kind == "vector_full" else m

    def reference_eval(self, ref_points):
        pts = np.asarray(ref_points, dtype=float)
        v, g, _ = modal_eval(self.degree, pts)
        if self.kind == "scalar_lagrange":
            c = lagrange_coefficients(self.degree)
            return v @ c, np.einsum("...mk,mn->...nk", g, c)
        if self.kind == "scalar_broken":
            return v, g
        m = v.shape[-1]
        vals = np.zeros(pts.shape[:-1] + (2 * m, 2))
        grads = np.zeros(pts.shape[:-1] + (2 * m, 2, 2))
        for c in range(2):
            vals[..., c * m:(c + 1) * m, c] = v
            grads[..., c * m:(c + 1) * m, c, :] = g
        return vals, grads


def affine_map(tri):
    """Return (v0, J, detJ, invJ) for one triangle given as a (3, 2) array."""
    tri = np.asarray(tri, dtype=float)
    jac = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    det = np.linalg.det(jac)
    scale = max(np.abs(jac).max(), 1e-300) ** 2
    if abs(det) <= 1e-14 * scale:
        raise GeometryError("degenerate triangle: Jacobian is singular")
    return tri[0], jac, det, np.linalg.inv(jac)


def to_reference(tri, points):
    v0, _, _, inv = affine_map(tri)
    return (np.asarray(points, dtype=float) - v0) @ inv.T


def eval_phys(basis, tri, points, tol=1e-10):
    """Evaluate ``basis`` on the physical triangle ``tri`` at physical points.

    Gradients are pulled back with the inverse-transpose Jacobian.
    """
    ref = to_reference(tri, points)
    bary = np.column_stack([1.0 - ref.sum(axis=1), ref])
    if np.any(bary < -tol):
        raise InputError("evaluation point lies outside the triangle")
    _, _, _, inv = affine_map(tri)
    vals, grads = basis.reference_eval(ref)
    grads = grads @ inv
    return vals, grads
