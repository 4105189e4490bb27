"""Modal orthogonal bases and quadrature rules on reference elements.

The basis on each cell type is orthogonal with respect to the reference-cell
L2 inner product and scaled so that

    <phi_i, phi_j> = delta_ij * |ref|,

with ``phi_0 = 1`` exactly.  Under an affine map with constant Jacobian this
yields ``<phi_i, phi_j>_K = delta_ij |K|`` on every physical cell, so the
coefficient of ``phi_0`` is the cell average and the squared L2 norm is
``|K| * sum(c_j^2)``.

Construction is by LDL factorization of the monomial Gram matrix carried out
in exact rational arithmetic, which on quads reproduces tensor Legendre
products and on triangles a Dubiner-type hierarchy, both to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .mesh import QUAD, TRI, REFERENCE_MEASURE

#: Largest supported quadrature exactness degree.
MAX_QUAD_DEGREE = 60


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on a reference element (or reference interval)."""

    points: np.ndarray   # (n, 2) on cells, (n,) on the interval [-1, 1]
    weights: np.ndarray  # (n,)
    degree: int          # guaranteed polynomial exactness


@dataclass(frozen=True)
class ReferenceBasis:
    """Orthogonal modal basis stored as monomial expansions."""

    cell_type: str
    p: int
    num_dofs: int
    exponents: np.ndarray  # (n_terms, 2) int
    coeffs: np.ndarray     # (num_dofs, n_terms)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Basis values at reference points; shape (n_points, num_dofs)."""
        pts = np.atleast_2d(points)
        mono = pts[:, 0:1] ** self.exponents[:, 0] \
            * pts[:, 1:2] ** self.exponents[:, 1]
        return mono @ self.coeffs.T

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients at points; shape (n_points, num_dofs, 2)."""
        pts = np.atleast_2d(points)
        ex, ey = self.exponents[:, 0], self.exponents[:, 1]
        dx = ex * pts[:, 0:1] ** np.maximum(ex - 1, 0) * pts[:, 1:2] ** ey
        dy = ey * pts[:, 0:1] ** ex * pts[:, 1:2] ** np.maximum(ey - 1, 0)
        out = np.empty((pts.shape[0], self.num_dofs, 2))
        out[:, :, 0] = dx @ self.coeffs.T
        out[:, :, 1] = dy @ self.coeffs.T
        return out


def _monomial_exponents(cell_type: str, p: int) -> np.ndarray:
    if cell_type == QUAD:
        return np.array([(i, j) for j in range(p + 1) for i in range(p + 1)],
                        dtype=np.intp)
    return np.array([(i, d - i) for d in range(p + 1) for i in range(d, -1, -1)],
                    dtype=np.intp)


def _monomial_moment(cell_type: str, a: int, b: int) -> Fraction:
    """Exact integral of x^a y^b over the reference element."""
    if cell_type == QUAD:
        def g(n):
            return Fraction(0) if n % 2 else Fraction(2, n + 1)
        return g(a) * g(b)
    return Fraction(math.factorial(a) * math.factorial(b),
                    math.factorial(a + b + 2))


def _ldl_inverse(gram):
    """Exact LDL^T of a rational SPD matrix; returns (L^-1, diag of D)."""
    n = len(gram)
    L = [[Fraction(0)] * n for _ in range(n)]
    D = [Fraction(0)] * n
    for i in range(n):
        for j in range(i):
            s = gram[i][j] - sum(L[i][k] * L[j][k] * D[k] for k in range(j))
            L[i][j] = s / D[j]
        L[i][i] = Fraction(1)
        D[i] = gram[i][i] - sum(L[i][k] ** 2 * D[k] for k in range(i))
    # Invert the unit lower-triangular factor by forward substitution.
    Linv = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        Linv[i][i] = Fraction(1)
        for j in range(i):
            Linv[i][j] = -sum(L[i][k] * Linv[k][j] for k in range(j, i))
    return Linv, D


def make_basis(cell_type: str, p: int) -> ReferenceBasis:
    """Orthogonal modal basis of order p with <phi_i, phi_j> = delta_ij |ref|."""
    if cell_type not in (QUAD, TRI):
        raise ValueError(f"unsupported cell type {cell_type!r}")
    if p < 0:
        raise ValueError(f"polynomial order must be >= 0, got {p}")
    exps = _monomial_exponents(cell_type, p)
    n = len(exps)
    gram = [[_monomial_moment(cell_type, int(exps[i, 0] + exps[j, 0]),
                              int(exps[i, 1] + exps[j, 1]))
             for j in range(n)] for i in range(n)]
    linv, diag = _ldl_inverse(gram)
    ref = Fraction(REFERENCE_MEASURE[cell_type]).limit_denominator()
    coeffs = np.array([[float(c) for c in row] for row in linv])
    scale = np.array([math.sqrt(float(ref / d)) for d in diag])
    coeffs *= scale[:, None]
    # phi_0 must be identically one: Linv[0][0] = 1 and D[0] = |ref| exactly.
    coeffs[0, :] = 0.0
    coeffs[0, 0] = 1.0
    return ReferenceBasis(cell_type, p, n, exps, coeffs)


def num_dofs(cell_type: str, p: int) -> int:
    return (p + 1) ** 2 if cell_type == QUAD else (p + 1) * (p + 2) // 2


def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def make_quadrature(cell_type: str, degree: int) -> QuadratureRule:
    """Volume rule exact for polynomials up to ``degree`` on the reference cell."""
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if degree > MAX_QUAD_DEGREE:
        raise ValueError(
            f"quadrature degree {degree} beyond implemented maximum "
            f"{MAX_QUAD_DEGREE}")
    if cell_type == QUAD:
        n = degree // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n)
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return QuadratureRule(pts, W.ravel(), 2 * n - 1)
    if cell_type == TRI:
        # Duffy transform of a tensor Gauss rule: x = u (1 - v), y = v with
        # Jacobian (1 - v); the v-degree of a degree-d integrand is d + 1.
        nu = degree // 2 + 1
        nv = (degree + 1) // 2 + 1
        u, wu = _gauss01(nu)
        v, wv = _gauss01(nv)
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv) * (1.0 - V)
        pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
        return QuadratureRule(pts, W.ravel(), degree)
    raise ValueError(f"unsupported cell type {cell_type!r}")


def make_face_quadrature(degree: int) -> QuadratureRule:
    """Gauss rule on the reference interval [-1, 1]."""
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if degree > MAX_QUAD_DEGREE:
        raise ValueError(
            f"face quadrature degree {degree} beyond implemented maximum "
            f"{MAX_QUAD_DEGREE}")
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(x, w, 2 * n - 1)
