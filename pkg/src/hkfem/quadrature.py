"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are collapsed (Duffy) tensor products of Gauss-Jacobi and
Gauss-Legendre rules, so every degree uses the same construction and all
weights are positive.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_TRIANGLE_DEGREE = 40
MAX_EDGE_DEGREE = 40


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights of a quadrature rule.

    For triangles ``points`` holds barycentric triples (rows sum to one) and
    the weights sum to 1/2, the area of the reference triangle
    ``(0,0), (1,0), (0,1)``. For edges ``points`` holds parameters in [0, 1]
    and the weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)

    @property
    def xy(self):
        """Cartesian coordinates on the reference triangle (triangle rules only)."""
        return self.points[:, 1:]


def _gauss_legendre01(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials up to ``degree``."""
    if not 1 <= degree <= MAX_EDGE_DEGREE:
        raise ValueError(f"edge rule degree must be in [1, {MAX_EDGE_DEGREE}], got {degree}")
    n = degree // 2 + 1
    t, w = _gauss_legendre01(n)
    return QuadratureRule(t, w, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle, exact up to ``degree``.

    The map ``x = s, y = (1 - s) t`` sends the unit square onto the triangle
    with Jacobian ``1 - s``; that factor is absorbed into a Gauss-Jacobi rule
    with weight ``(1 - s)``.
    """
    if not 1 <= degree <= MAX_TRIANGLE_DEGREE:
        raise ValueError(
            f"triangle rule degree must be in [1, {MAX_TRIANGLE_DEGREE}], got {degree}"
        )
    n = degree // 2 + 1
    # Jacobi weight (1-x)^1 (1+x)^0 on [-1, 1]
    xs, ws = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    ws = ws / 4.0  # dx -> ds and (1-x) -> 2(1-s)
    t, wt = _gauss_legendre01(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    x = S.ravel()
    y = ((1.0 - S) * T).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(bary, W.ravel(), degree)


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of ``x**a * y**b`` over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
