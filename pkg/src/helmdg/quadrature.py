"""Quadrature rules on the reference triangle and the unit segment.

The reference triangle has vertices (0, 0), (1, 0), (0, 1) and area 1/2.
Triangle rules of order >= 2 are collapsed (Duffy) products of a
Gauss-Jacobi rule and a Gauss-Legendre rule; all weights are positive.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import CapabilityError, InputError

MAX_ORDER = 60


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


def _check_order(order):
    if int(order) != order or order < 0:
        raise InputError(f"quadrature order must be a non-negative integer, got {order!r}")
    if order > MAX_ORDER:
        raise CapabilityError(f"quadrature order {order} exceeds implemented maximum {MAX_ORDER}")


@lru_cache(maxsize=None)
def _edge_rule(order):
    n = max(1, (order + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n - 1)


def edge_rule(order):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of degree ``order``.

    Uses ceil((order + 1) / 2) points; weights sum to one.
    """
    _check_order(order)
    return _edge_rule(int(order))


@lru_cache(maxsize=None)
def _triangle_rule(order):
    if order <= 1:
        pts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        wts = np.array([0.5])
        pts.setflags(write=False)
        wts.setflags(write=False)
        return QuadratureRule(pts, wts, 1)
    n = (order + 2) // 2
    # Jacobi weight (1 - x)^1 absorbs the Duffy Jacobian
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1.0)
    ws = wj / 4.0
    t, wt = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    S, Tt = np.meshgrid(s, t, indexing="ij")
    WS, WT = np.meshgrid(ws, wt, indexing="ij")
    pts = np.column_stack([S.ravel(), ((1.0 - S) * Tt).ravel()])
    wts = (WS * WT).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n - 1)


def triangle_rule(order):
    """Positive-weight rule on the reference triangle exact to degree ``order``."""
    _check_order(order)
    return _triangle_rule(int(order))


def default_order(p):
    """Module-wide quadrature order for degree-p spaces."""
    return 2 * p + 2
