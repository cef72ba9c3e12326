"""Piecewise-constant coefficients mu, A, gamma and the derived element/face scalars."""
from dataclasses import dataclass, field
from numbers import Real

import numpy as np

from .errors import InputError, MeshSpecificationError
from .mesh import ROBIN


def _as_table(value, name):
    if isinstance(value, dict):
        return {int(k): v for k, v in value.items()}
    return {None: value}


def _lookup(table, key, name):
    if key in table:
        return table[key]
    if None in table:
        return table[None]
    raise MeshSpecificationError(f"no {name} value for region/patch {key}")


def _matrix(value):
    if isinstance(value, Real):
        return float(value) * np.eye(2)
    a = np.asarray(value, dtype=float)
    if a.shape != (2, 2):
        raise InputError("A must be a scalar or a 2x2 matrix")
    return a


@dataclass(frozen=True)
class ElementData:
    """Coefficient arrays aligned with a mesh."""

    mu_K: np.ndarray
    A_K: np.ndarray
    alpha_K: np.ndarray
    theta_K: np.ndarray
    alpha_F: np.ndarray
    gamma_F: np.ndarray
    theta_F: np.ndarray


@dataclass(frozen=True)
class CoefficientSet:
    """Angular frequency and piecewise-constant coefficients.

    ``mu`` and ``A`` are a single value for the whole domain or a dict
    keyed by region id; ``A`` entries may be scalars (multiples of the
    identity) or symmetric positive-definite 2x2 matrices.  ``gamma`` is a
    value or a dict keyed by Robin patch id.
    """

    omega: float
    mu: object = 1.0
    A: object = 1.0
    gamma: object = 1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega <= 0:
            raise InputError("omega must be positive")
        for k, v in _as_table(self.mu, "mu").items():
            if not float(v) > 0:
                raise InputError(f"mu must be positive (region {k})")
        for k, v in _as_table(self.A, "A").items():
            a = _matrix(v)
            if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max())):
                raise InputError(f"A must be symmetric (region {k})")
            if np.linalg.eigvalsh(a).min() <= 0:
                raise InputError(f"A must be positive definite (region {k})")
        for k, v in _as_table(self.gamma, "gamma").items():
            if not float(v) > 0:
                raise InputError(f"gamma must be positive (patch {k})")

    def with_omega(self, omega):
        return CoefficientSet(omega, self.mu, self.A, self.gamma)

    def region_values(self, region):
        mu = float(_lookup(_as_table(self.mu, "mu"), int(region), "mu"))
        a = _matrix(_lookup(_as_table(self.A, "A"), int(region), "A"))
        return mu, a

    def on_mesh(self, mesh):
        key = id(mesh)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is mesh:
            return hit[1]
        regions = np.unique(mesh.region)
        mu_r, a_r = {}, {}
        for r in regions:
            mu_r[r], a_r[r] = self.region_values(r)
        mu_K = np.array([mu_r[r] for r in mesh.region])
        A_K = np.array([a_r[r] for r in mesh.region])
        alpha_K = np.linalg.eigvalsh(A_K)[:, 0]
        theta_K = np.sqrt(alpha_K / mu_K)
        et = mesh.edge_tris
        alpha_F = alpha_K[et[:, 0]].copy()
        inner = et[:, 1] >= 0
        alpha_F[inner] = np.maximum(alpha_F[inner], alpha_K[et[inner, 1]])
        gamma_F = np.zeros(mesh.n_faces)
        rob = mesh.face_labels == ROBIN
        gtab = _as_table(self.gamma, "gamma")
        gamma_F[rob] = [float(_lookup(gtab, int(q), "gamma")) for q in mesh.face_patch[rob]]
        theta_F = np.full(mesh.n_faces, np.inf)
        theta_F[rob] = alpha_F[rob] / gamma_F[rob]
        data = ElementData(mu_K, A_K, alpha_K, theta_K, alpha_F, gamma_F, theta_F)
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = (mesh, data)
        return data
