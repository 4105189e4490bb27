"""Structure-preservation diagnostics: energy, mass, bounds, coercivity.

The discrete energy is ``Cn^-1 int W(phi) + (Cn / 2) a(phi, phi)`` with the
same Laplacian penalty the scheme uses.  Extrema are reported both over a
pointwise sampling set and over cell averages, because the scheme constrains
the averages while the limiter constrains the samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forms
from .basis import ReferenceBasis
from .fields import DiscreteField, mass
from .forms import (MobilityCoefficients, SchemeParams, get_operators,
                    mobility, harmonic_average, trace_constant)
from .limiter import LimiterConfig, sample_matrix
from .mesh import MeshTopology


@dataclass
class DiagnosticsRow:
    """One per-step record of conserved/dissipated quantities."""

    n: int
    t: float
    energy: float
    mass: float
    min_sample: float
    max_sample: float
    min_avg: float
    max_avg: float
    newton_iters: int
    residual_norm: float
    violation: float  # max distance of sampled values outside [-1, 1]


def energy(phi: DiscreteField, params: SchemeParams) -> float:
    """Discrete energy Cn^-1 int W(phi) + (Cn / 2) a(phi, phi).

    This is Cn^-1 times the functional the convex-splitting step provably
    decreases, int W + (Cn^2 / 2) a, so it is monotone non-increasing along
    the scheme up to the nonlinear solve tolerance.
    """
    ops = get_operators(phi.mesh, phi.basis)
    u = phi.coeffs @ ops.phi_v.T
    w_total = float((ops.wq * forms.potential_terms(u)[0]).sum())
    quad = ops.laplace_matrix(params.eta_laplace) @ phi.coeffs.ravel()
    a_val = float(phi.coeffs.ravel() @ quad)
    return w_total / params.cn + 0.5 * params.cn * a_val


def dg_seminorm(mu: DiscreteField, mob: MobilityCoefficients) -> float:
    """Squared mobility-weighted DG semi-norm of the chemical potential."""
    ops = get_operators(mu.mesh, mu.basis)
    c = mu.coeffs
    vol = float(np.einsum("c,cnm,cn,cm->", mob.cell_values, ops.kvol, c, c))
    jumps = np.einsum("fki,fi->fk", ops.face_jump,
                      c.ravel()[ops.face_dofs])
    w = mob.face_values / mu.mesh.interior_h
    face = float((w[:, None] * ops.wf * jumps ** 2).sum())
    return vol + face


def bound_report(field: DiscreteField,
                 cfg: LimiterConfig = LimiterConfig()):
    """(max violation of [-1, 1], (cell, sample index) where it occurs)."""
    vals = field.coeffs @ sample_matrix(field.basis, cfg).T
    viol = np.maximum(np.abs(vals) - 1.0, 0.0)
    k = int(np.argmax(viol))
    loc = np.unravel_index(k, viol.shape)
    return float(viol.flat[k]), (int(loc[0]), int(loc[1]))


@dataclass
class CoercivityReport:
    trials: int
    worst_margin: float
    jump_constant: float  # eta - max_K m_K * C_T
    failures: int         # margins below -1e-10


def coercivity_probe(mesh: MeshTopology, basis: ReferenceBasis,
                     params: SchemeParams, trials: int,
                     seed: int = 0) -> CoercivityReport:
    """Randomized check of the lower bound

    b(M, v, v) >= 1/2 ||sqrt(M) grad v||^2
                  + (eta - m_K C_T) sum_e (<<M>>/h_e) int [v]^2.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ops = get_operators(mesh, basis)
    rng = np.random.default_rng(seed)
    c2 = params.eta - mesh.cell_face_counts.max() * trace_constant(basis.p)
    worst = np.inf
    failures = 0
    for _ in range(trials):
        phibar = rng.uniform(-1.2, 1.2, mesh.num_cells)
        m = mobility(phibar)
        w = np.asarray(harmonic_average(m[mesh.interior_minus],
                                        m[mesh.interior_plus]))
        v = rng.standard_normal(ops.n_dofs)
        b_val = ops.bilinear_value(m, w, params.eta, v, v)
        vc = v.reshape(mesh.num_cells, -1)
        vol = float(np.einsum("c,cnm,cn,cm->", m, ops.kvol, vc, vc))
        jumps = np.einsum("fki,fi->fk", ops.face_jump, v[ops.face_dofs])
        face = float(((w / mesh.interior_h)[:, None]
                      * ops.wf * jumps ** 2).sum())
        margin = b_val - (0.5 * vol + c2 * face)
        worst = min(worst, margin)
        if margin < -1e-10:
            failures += 1
    return CoercivityReport(trials, worst, float(c2), failures)


def field_extrema(field: DiscreteField, cfg: LimiterConfig = LimiterConfig()):
    """((min, max) over sample points, (min, max) over cell averages)."""
    vals = field.coeffs @ sample_matrix(field.basis, cfg).T
    avgs = field.coeffs[:, 0]
    return (float(vals.min()), float(vals.max())), \
        (float(avgs.min()), float(avgs.max()))


def make_row(n: int, t: float, phi: DiscreteField, params: SchemeParams,
             newton_iters: int, residual_norm: float,
             cfg: LimiterConfig = LimiterConfig()) -> DiagnosticsRow:
    (smin, smax), (amin, amax) = field_extrema(phi, cfg)
    viol = max(smax - 1.0, -1.0 - smin, 0.0)
    return DiagnosticsRow(n, t, energy(phi, params), mass(phi),
                          smin, smax, amin, amax,
                          newton_iters, residual_norm, viol)
