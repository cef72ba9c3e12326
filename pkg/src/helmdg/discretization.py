"""One mesh, one set of coefficients, one degree: spaces, quadrature, forms and norms."""
from functools import cached_property

from .dg import assemble_forms
from .evaluation import MeshQuadrature
from .spaces import make_spaces


class Discretization:
    """Lazily built bundle shared by the solver, norms and estimator."""

    def __init__(self, mesh, coeffs, p, penalty=10.0, lift_degree=None, penalty_mode="lifted"):
        self.mesh = mesh
        self.coeffs = coeffs
        self.p = int(p)
        self.penalty = penalty
        self.lift_degree = lift_degree
        self.penalty_mode = penalty_mode
        self.broken, self.conforming, self.bdm = make_spaces(mesh, self.p)

    @property
    def spaces(self):
        return self.broken, self.conforming, self.bdm

    @cached_property
    def quad(self):
        return MeshQuadrature.for_degree(self.mesh, self.p)

    @cached_property
    def forms(self):
        return assemble_forms(self.broken, self.coeffs, self.penalty, self.lift_degree,
                              self.penalty_mode, quad=self.quad)

    @cached_property
    def norms(self):
        from .norms import NormWorkspace
        return NormWorkspace(self)
