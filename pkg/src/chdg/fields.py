"""Broken polynomial fields: storage, projections, evaluation, mass.

A :class:`DiscreteField` stores one modal coefficient row per cell.  Because
the basis is orthogonal with ``<phi_i, phi_j>_K = delta_ij |K|`` and
``phi_0 = 1``, the leading coefficient of each cell is its cell average and
Parseval gives ``||f||_{L2(K)}^2 = |K| sum_j c_{K,j}^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import ReferenceBasis, make_quadrature, make_basis
from .mesh import MeshTopology


@dataclass
class DiscreteField:
    """A member of the broken polynomial space V_h^p."""

    mesh: MeshTopology
    basis: ReferenceBasis
    coeffs: np.ndarray  # (n_cells, num_dofs)

    def copy(self) -> "DiscreteField":
        return replace(self, coeffs=self.coeffs.copy())

    def cell_averages(self) -> np.ndarray:
        return self.coeffs[:, 0]

    def l2_norm(self) -> float:
        """Global L2 norm via Parseval in the scaled modal basis."""
        return float(np.sqrt(
            (self.mesh.cell_measures[:, None] * self.coeffs ** 2).sum()))


@dataclass
class CoupledState:
    """Phase-field and chemical potential at one time level."""

    phi: DiscreteField
    mu: DiscreteField
    t: float = 0.0
    n: int = 0

    def __post_init__(self):
        if (self.phi.mesh is not self.mu.mesh
                or self.phi.basis is not self.mu.basis):
            raise ValueError("phi and mu must share mesh and basis")


def zero_field(mesh: MeshTopology, basis: ReferenceBasis) -> DiscreteField:
    return DiscreteField(mesh, basis,
                         np.zeros((mesh.num_cells, basis.num_dofs)))


def constant_field(mesh: MeshTopology, basis: ReferenceBasis,
                   value: float) -> DiscreteField:
    f = zero_field(mesh, basis)
    f.coeffs[:, 0] = value
    return f


def cell_average(field: DiscreteField, K: int) -> float:
    """|K|^-1 int_K field, which is the leading modal coefficient."""
    if not 0 <= K < field.mesh.num_cells:
        raise IndexError(f"cell index {K} out of range")
    return float(field.coeffs[K, 0])


def project_p0(field: DiscreteField) -> DiscreteField:
    """Cell-averaged projection onto the piecewise constants V_h^0."""
    basis0 = make_basis(field.mesh.cell_type, 0)
    return DiscreteField(field.mesh, basis0, field.coeffs[:, :1].copy())


def physical_points(mesh: MeshTopology, ref_points: np.ndarray) -> np.ndarray:
    """Map reference points into every cell; shape (n_cells, n_points, 2)."""
    return mesh.cell_origins[:, None, :] \
        + np.einsum("cde,qe->cqd", mesh.cell_jacobians, ref_points)


def project_l2(f, mesh: MeshTopology, basis: ReferenceBasis,
               quad_degree: int | None = None) -> DiscreteField:
    """L2 projection of an analytic scalar function onto V_h^p.

    ``f`` is called with arrays ``x, y`` of physical quadrature coordinates.
    Exact (to round-off) for piecewise polynomials of degree <= p when the
    quadrature degree is at least 2p.
    """
    if quad_degree is None:
        quad_degree = 2 * basis.p + 4
    rule = make_quadrature(mesh.cell_type, quad_degree)
    phi = basis.values(rule.points)                       # (q, n)
    X = physical_points(mesh, rule.points)                # (c, q, 2)
    fv = np.asarray(f(X[:, :, 0], X[:, :, 1]), dtype=float)
    fv = np.broadcast_to(fv, X.shape[:2])
    # c_j = <f, phi_j>_K / |K|; the |detJ| of the affine map cancels.
    ref = rule.weights.sum()
    coeffs = np.einsum("q,cq,qj->cj", rule.weights / ref, fv, phi)
    return DiscreteField(mesh, basis, coeffs)


def evaluate(field: DiscreteField, K: int, ref_point) -> float:
    """Point value sum_j c_{K,j} phi_j at a reference coordinate."""
    vals = field.basis.values(np.atleast_2d(ref_point))
    return float(vals[0] @ field.coeffs[K])


def evaluate_at(field: DiscreteField, ref_points: np.ndarray) -> np.ndarray:
    """Values at the same reference points in all cells; (n_cells, n_points)."""
    return field.coeffs @ field.basis.values(ref_points).T


def sample_extrema(field: DiscreteField, ref_points: np.ndarray):
    """(min, max) of the field over a reference sampling set in every cell."""
    vals = evaluate_at(field, ref_points)
    return float(vals.min()), float(vals.max())


def mass(field: DiscreteField) -> float:
    """Domain-averaged phase-field mass |T_h|^-1 sum_K |K| c_{K,0}."""
    m = field.mesh.cell_measures
    return float((m * field.coeffs[:, 0]).sum() / m.sum())
