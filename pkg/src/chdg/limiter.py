"""Zhang-Shu scaling limiter on modal coefficients.

Each cell's deviation from its cell average is scaled by a factor
``alpha_K`` in [0, 1] chosen so the field stays in ``[phi_min, phi_max]`` at
a finite sampling set.  With the modal basis this is a pure coefficient
operation: the leading coefficient is untouched (the cell average, and hence
the mass, is preserved bitwise) and all zero-mean modes are multiplied by
``alpha_K``, so the per-cell L2 norm never increases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import ReferenceBasis, make_quadrature, make_face_quadrature
from .fields import DiscreteField
from .mesh import QUAD

#: Sampling modes: volume + face quadrature points, or face points only.
SAMPLE_ALL = "all"
SAMPLE_FACES = "faces"


@dataclass(frozen=True)
class LimiterConfig:
    phi_min: float = -1.0
    phi_max: float = 1.0
    tol_lim: float = 5e-16   # guards divisions by a vanishing deviation
    tol_avg: float = 1e-14   # flatten cells whose average sits on the bound
    sample_mode: str = SAMPLE_ALL

    def __post_init__(self):
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be below phi_max")
        if self.tol_lim <= 0 or self.tol_avg <= 0:
            raise ValueError("tolerances must be positive")


def reference_sample_points(cell_type: str, p: int,
                            mode: str = SAMPLE_ALL) -> np.ndarray:
    """Sampling set on the reference element: quadrature and edge points."""
    fq = make_face_quadrature(2 * p + 2)
    t = 0.5 * (fq.points + 1.0)
    if cell_type == QUAD:
        s = fq.points
        edges = [np.column_stack([s, np.full_like(s, -1.0)]),
                 np.column_stack([np.full_like(s, 1.0), s]),
                 np.column_stack([s, np.full_like(s, 1.0)]),
                 np.column_stack([np.full_like(s, -1.0), s])]
    else:
        edges = [np.column_stack([t, np.zeros_like(t)]),
                 np.column_stack([1.0 - t, t]),
                 np.column_stack([np.zeros_like(t), 1.0 - t])]
    pts = np.vstack(edges)
    if mode == SAMPLE_ALL:
        vq = make_quadrature(cell_type, max(4 * p, 2 * p + 2))
        pts = np.vstack([vq.points, pts])
    elif mode != SAMPLE_FACES:
        raise ValueError(f"unknown sample mode {mode!r}")
    return pts


_SAMPLE_CACHE: dict = {}


def sample_matrix(basis: ReferenceBasis, cfg: LimiterConfig) -> np.ndarray:
    """Basis values at the sampling set; (n_samples, num_dofs), cached."""
    key = (id(basis), cfg.sample_mode)
    entry = _SAMPLE_CACHE.get(key)
    if entry is None or entry[0] is not basis:
        pts = reference_sample_points(basis.cell_type, basis.p,
                                      cfg.sample_mode)
        entry = (basis, basis.values(pts))
        _SAMPLE_CACHE[key] = entry
    return entry[1]


def _alphas(avg, vmin, vmax, cfg: LimiterConfig):
    lo = np.abs(avg - cfg.phi_min) / (np.abs(avg - vmin) + cfg.tol_lim)
    hi = np.abs(avg - cfg.phi_max) / (np.abs(avg - vmax) + cfg.tol_lim)
    alpha = np.minimum(1.0, np.minimum(lo, hi))
    on_bound = (avg >= cfg.phi_max - cfg.tol_avg) \
        | (avg <= cfg.phi_min + cfg.tol_avg)
    return np.where(on_bound, 0.0, alpha)


def limit_cell(coeffs: np.ndarray, basis: ReferenceBasis,
               cfg: LimiterConfig = LimiterConfig()):
    """Limit one cell's modal coefficients; returns (new_coeffs, alpha)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if basis.p == 0 or coeffs.shape[0] == 1:
        return coeffs.copy(), 1.0
    vals = sample_matrix(basis, cfg) @ coeffs
    alpha = float(_alphas(coeffs[0], vals.min(), vals.max(), cfg))
    out = coeffs.copy()
    out[1:] *= alpha
    return out, alpha


def limit_field(field: DiscreteField,
                cfg: LimiterConfig = LimiterConfig()) -> DiscreteField:
    """Apply the scaling limiter cell by cell; identity on V_h^0."""
    if field.basis.p == 0:
        return field.copy()
    vals = field.coeffs @ sample_matrix(field.basis, cfg).T
    alpha = _alphas(field.coeffs[:, 0], vals.min(axis=1), vals.max(axis=1),
                    cfg)
    out = field.coeffs.copy()
    out[:, 1:] *= alpha[:, None]
    return DiscreteField(field.mesh, field.basis, out)
