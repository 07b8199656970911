"""Quadrature rules on the reference triangle and the reference edge.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); the reference
edge is the interval [-1, 1].
"""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

# Strang-Fix / Dunavant 6-point rule, exact for degree 4.
_A1, _B1 = 0.445948490915965, 0.091576213509771
_W1, _W2 = 0.223381589678011, 0.109951743655322
_D4_POINTS = np.array([
    [_A1, _A1], [1 - 2 * _A1, _A1], [_A1, 1 - 2 * _A1],
    [_B1, _B1], [1 - 2 * _B1, _B1], [_B1, 1 - 2 * _B1],
])
_D4_WEIGHTS = 0.5 * np.array([_W1, _W1, _W1, _W2, _W2, _W2])


@lru_cache(maxsize=None)
def triangle_rule(degree=4):
    """Return ``(points, weights)`` on the reference triangle.

    Degree <= 4 uses the 6-point symmetric rule; higher degrees use a
    collapsed (Duffy) Gauss-Jacobi x Gauss-Legendre product rule, which has
    positive weights and is exact for polynomials of total degree ``degree``.
    Weights sum to the reference area 1/2.
    """
    if degree <= 4:
        return _D4_POINTS.copy(), _D4_WEIGHTS.copy()
    n = degree // 2 + 1
    # x = (1 + a) / 2 with Jacobi weight (1 - a) absorbing the Duffy Jacobian
    a, wa = roots_jacobi(n, 1.0, 0.0)
    b, wb = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (1.0 + a)
    s = 0.5 * (1.0 + b)
    X = np.repeat(x, n)
    S = np.tile(s, n)
    pts = np.column_stack([X, (1.0 - X) * S])
    w = np.outer(wa, wb).ravel() / 8.0
    return pts, w


@lru_cache(maxsize=None)
def edge_rule(npoints=4):
    """Gauss-Legendre points on [-1, 1] and weights normalised to sum 1.

    Multiply the weights by the physical edge length to integrate.
    """
    x, w = np.polynomial.legendre.leggauss(npoints)
    return x, 0.5 * w
