"""DG forms for the degenerate Cahn-Hilliard system.

This module evaluates and assembles:

* the SIPG Laplacian form ``a(phi, xi)``,
* the mobility-weighted SWIP form ``b(M(P0 phi), mu, psi)`` whose face terms
  carry the harmonic average of the cell-averaged mobility,
* the upwind advection form ``c(u, P0 phi, psi)``,
* the quartic potential with its convex/concave splitting, and
* the coupled implicit residual and its exact Jacobian for one time step.

All face sums run over interior faces only; the homogeneous Neumann boundary
conditions are imposed naturally by dropping boundary face terms.  Faces whose
harmonic mobility average vanishes contribute exactly nothing.

Assembly is vectorized: a :class:`DGOperators` workspace precomputes per-cell
stiffness blocks and per-face penalty/consistency blocks once per
(mesh, basis) pair, after which forms and Jacobians reduce to scaling and
scattering those blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import ReferenceBasis, make_quadrature, make_face_quadrature
from .fields import CoupledState, DiscreteField, physical_points
from .mesh import MeshTopology

#: Below this, the harmonic average is treated as fully degenerate when
#: differentiating (the converged residual is unaffected).
DEGENERACY_EPS = 1e-14


# ---------------------------------------------------------------------------
# Scalar building blocks
# ---------------------------------------------------------------------------

def mobility(s):
    """Degenerate mobility max(1 - s^2, 0)."""
    return np.maximum(1.0 - np.asarray(s, dtype=float) ** 2, 0.0)


def mobility_derivative(s):
    """One-sided derivative of the mobility: -2s inside (-1, 1), 0 outside."""
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, -2.0 * s, 0.0)


def harmonic_average(a, b):
    """2ab / (a + b) with the degenerate limit 0 when a + b = 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("harmonic_average requires non-negative arguments")
    denom = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0.0, 2.0 * a * b / np.where(denom > 0, denom, 1.0), 0.0)
    return out if out.ndim else float(out)


def harmonic_average_da(a, b):
    """d/da of the harmonic average, clamped to 0 at full degeneracy."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = a + b
    safe = np.where(denom >= DEGENERACY_EPS, denom, 1.0)
    return np.where(denom >= DEGENERACY_EPS, 2.0 * b ** 2 / safe ** 2, 0.0)


def potential_terms(s):
    """Quartic well: returns (W, W', Phi_plus, Phi_minus) with W' = s^3 - s."""
    s = np.asarray(s, dtype=float)
    w = 0.25 * (s ** 2 - 1.0) ** 2
    phi_plus = s ** 3
    phi_minus = -s
    return w, phi_plus + phi_minus, phi_plus, phi_minus


def trace_constant(p: int) -> float:
    """Discrete trace inequality constant k(k + d - 1)/d in d = 2."""
    return p * (p + 1) / 2.0


def auto_penalty(mesh: MeshTopology, p: int, floor: float = 1.0) -> float:
    """Smallest coercivity-safe penalty max_K m_K * C_T, floored."""
    m_k = int(mesh.cell_face_counts.max()) if mesh.num_cells else 0
    return max(float(floor), m_k * trace_constant(p))


@dataclass
class SchemeParams:
    """Physical and discretization parameters of one scheme instance."""

    pe: float
    cn: float
    tau: float
    eta: float
    p: int
    eta_laplace: float | None = None
    source_enabled: bool = False
    advection_enabled: bool = False

    def __post_init__(self):
        for name in ("pe", "cn", "tau", "eta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eta_laplace is None:
            self.eta_laplace = self.eta
        if self.eta_laplace < self.eta:
            raise ValueError("eta_laplace must be >= eta")


@dataclass
class MobilityCoefficients:
    """Cell-averaged mobility values and their per-face harmonic averages."""

    cell_values: np.ndarray  # (n_cells,)
    face_values: np.ndarray  # (n_interior_faces,)


def mobility_coefficients(phi: DiscreteField) -> MobilityCoefficients:
    mesh = phi.mesh
    m = mobility(phi.coeffs[:, 0])
    w = harmonic_average(m[mesh.interior_minus], m[mesh.interior_plus])
    return MobilityCoefficients(m, np.asarray(w))


# ---------------------------------------------------------------------------
# Precomputed assembly workspace
# ---------------------------------------------------------------------------

class DGOperators:
    """Quadrature tables and block operators for one mesh/basis pair."""

    def __init__(self, mesh: MeshTopology, basis: ReferenceBasis,
                 vol_degree: int | None = None,
                 face_degree: int | None = None):
        p = basis.p
        # The Newton residual contains <phi^3, xi> of degree 4p; the face
        # integrands need 2p + 2.
        if vol_degree is None:
            vol_degree = max(4 * p, 2 * p + 2)
        if face_degree is None:
            face_degree = 2 * p + 2
        self.mesh = mesh
        self.basis = basis
        n = basis.num_dofs
        self.n_dofs = mesh.num_cells * n

        vq = make_quadrature(mesh.cell_type, vol_degree)
        self.vol_rule = vq
        jinv = mesh.inverse_jacobians()
        det = np.abs(np.linalg.det(mesh.cell_jacobians))
        self.phi_v = basis.values(vq.points)                    # (q, n)
        gref = basis.gradients(vq.points)                       # (q, n, 2)
        self.wq = vq.weights[None, :] * det[:, None]            # (c, q)
        self.grad_v = np.einsum("qne,ced->cqnd", gref, jinv)    # (c, q, n, 2)
        self.kvol = np.einsum("cq,cqnd,cqmd->cnm",
                              self.wq, self.grad_v, self.grad_v)
        self.x_vol = physical_points(mesh, vq.points)           # (c, q, 2)

        fq = make_face_quadrature(face_degree)
        self.face_rule = fq
        im, ip = mesh.interior_minus, mesh.interior_plus
        va = mesh.vertices[mesh.interior_vertex_ids[:, 0]]
        vb = mesh.vertices[mesh.interior_vertex_ids[:, 1]]
        s = fq.points
        self.x_face = (0.5 * (va + vb)[:, None, :]
                       + 0.5 * (vb - va)[:, None, :] * s[None, :, None])
        self.wf = 0.5 * mesh.interior_lengths[:, None] * fq.weights[None, :]
        self.face_normals = mesh.interior_normals

        def traces(cells):
            rel = self.x_face - mesh.cell_origins[cells][:, None, :]
            ref = np.einsum("fde,fke->fkd", jinv[cells], rel)
            flat = ref.reshape(-1, 2)
            vals = basis.values(flat).reshape(ref.shape[0], -1, n)
            grads = basis.gradients(flat).reshape(ref.shape[0], -1, n, 2)
            t = np.einsum("fed,fd->fe", jinv[cells], mesh.interior_normals)
            gn = np.einsum("fkne,fe->fkn", grads, t)
            return vals, gn

        bm, gm = traces(im)
        bp, gp = traces(ip)
        self.trace_minus, self.trace_plus = bm, bp
        jump = np.concatenate([bm, -bp], axis=2)                # (f, k, 2n)
        avg_gn = 0.5 * np.concatenate([gm, gp], axis=2)
        self.face_jump = jump
        self.face_avg_gn = avg_gn
        w_over_h = self.wf / mesh.interior_h[:, None]
        self.face_penalty = np.einsum("fk,fki,fkj->fij", w_over_h, jump, jump)
        con = np.einsum("fk,fki,fkj->fij", self.wf, jump, avg_gn)
        self.face_consistency = con + con.transpose(0, 2, 1)

        # Global dof index maps.
        self.cell_dofs = (np.arange(mesh.num_cells, dtype=np.intp)[:, None] * n
                          + np.arange(n, dtype=np.intp))
        self.face_dofs = np.concatenate(
            [self.cell_dofs[im], self.cell_dofs[ip]], axis=1)   # (f, 2n)
        self._rows_vol = np.broadcast_to(
            self.cell_dofs[:, :, None], (mesh.num_cells, n, n)).ravel()
        self._cols_vol = np.broadcast_to(
            self.cell_dofs[:, None, :], (mesh.num_cells, n, n)).ravel()
        nf = mesh.num_interior_faces
        self._rows_face = np.broadcast_to(
            self.face_dofs[:, :, None], (nf, 2 * n, 2 * n)).ravel()
        self._cols_face = np.broadcast_to(
            self.face_dofs[:, None, :], (nf, 2 * n, 2 * n)).ravel()

        self.measures_rep = np.repeat(mesh.cell_measures, n)
        self._laplace_cache: dict = {}
        self._swip_cache = (None, None)

    # -- block evaluation -------------------------------------------------

    def face_blocks(self, eta: float) -> np.ndarray:
        """Per-face SWIP blocks eta * penalty - consistency; (f, 2n, 2n)."""
        return eta * self.face_penalty - self.face_consistency

    def bilinear_value(self, cell_w, face_w, eta, u, v) -> float:
        """v^T B u for the weighted form with the given cell/face weights."""
        n = self.basis.num_dofs
        uc = u.reshape(-1, n)
        vc = v.reshape(-1, n)
        val = np.einsum("c,cnm,cn,cm->", cell_w, self.kvol, vc, uc)
        uf = u[self.face_dofs]
        vf = v[self.face_dofs]
        fb = self.face_blocks(eta)
        live = np.asarray(face_w) != 0.0
        if live.any():
            val += np.einsum("f,fij,fi,fj->", np.asarray(face_w)[live],
                             fb[live], vf[live], uf[live])
        return float(val)

    def assemble_weighted(self, cell_w, face_w, eta) -> sp.csr_matrix:
        """Sparse matrix of the weighted SWIP bilinear form."""
        data_vol = (np.asarray(cell_w)[:, None, None] * self.kvol).ravel()
        face_w = np.asarray(face_w, dtype=float)
        fb = self.face_blocks(eta)
        scaled = face_w[:, None, None] * fb
        scaled[face_w == 0.0] = 0.0  # degenerate faces are skipped outright
        rows = np.concatenate([self._rows_vol, self._rows_face])
        cols = np.concatenate([self._cols_vol, self._cols_face])
        data = np.concatenate([data_vol, scaled.ravel()])
        d = self.n_dofs
        return sp.coo_matrix((data, (rows, cols)), shape=(d, d)).tocsr()

    def laplace_matrix(self, eta: float) -> sp.csr_matrix:
        if eta not in self._laplace_cache:
            ones_c = np.ones(self.mesh.num_cells)
            ones_f = np.ones(self.mesh.num_interior_faces)
            self._laplace_cache[eta] = self.assemble_weighted(
                ones_c, ones_f, eta)
        return self._laplace_cache[eta]

    def swip_matrix(self, phibar: np.ndarray, eta: float):
        """(MobilityCoefficients, csr matrix) for M evaluated at cell averages.

        Memoized on the cell-average vector; Newton calls the residual and
        the Jacobian at the same iterate back to back.
        """
        key = (phibar.tobytes(), eta)
        if self._swip_cache[0] != key:
            m = mobility(phibar)
            w = np.asarray(harmonic_average(m[self.mesh.interior_minus],
                                            m[self.mesh.interior_plus]))
            mat = self.assemble_weighted(m, w, eta)
            self._swip_cache = (key, (MobilityCoefficients(m, w), mat))
        return self._swip_cache[1]

    def inner_with_function(self, f) -> np.ndarray:
        """Vector of <f, phi_j> over all cells, shape (n_dofs,)."""
        fv = np.asarray(f(self.x_vol[:, :, 0], self.x_vol[:, :, 1]),
                        dtype=float)
        fv = np.broadcast_to(fv, self.wq.shape)
        return np.einsum("cq,cq,qj->cj", self.wq, fv, self.phi_v).ravel()

    def cubic_inner(self, coeffs: np.ndarray) -> np.ndarray:
        """Vector of <phi^3, phi_j> for the field with the given coefficients."""
        u = coeffs @ self.phi_v.T
        return np.einsum("cq,cq,qj->cj", self.wq, u ** 3, self.phi_v).ravel()

    def cubic_inner_jacobian(self, coeffs: np.ndarray) -> np.ndarray:
        """Per-cell blocks d<phi^3, phi_j>/dc_i = <3 phi^2 phi_i, phi_j>."""
        u = coeffs @ self.phi_v.T
        return np.einsum("cq,qi,qj->cji", 3.0 * self.wq * u ** 2,
                         self.phi_v, self.phi_v)


_OPERATOR_CACHE: dict = {}


def get_operators(mesh: MeshTopology, basis: ReferenceBasis) -> DGOperators:
    """Workspace for a mesh/basis pair, built once and reused."""
    key = (id(mesh), id(basis))
    ops = _OPERATOR_CACHE.get(key)
    if ops is None or ops.mesh is not mesh or ops.basis is not basis:
        ops = DGOperators(mesh, basis)
        _OPERATOR_CACHE[key] = ops
    return ops


def _check_shared_space(*fields):
    f0 = fields[0]
    for f in fields[1:]:
        if f.mesh is not f0.mesh or f.basis is not f0.basis:
            raise ValueError("fields must share mesh and basis")


# ---------------------------------------------------------------------------
# Form evaluation
# ---------------------------------------------------------------------------

def apply_laplace(phi: DiscreteField, xi: DiscreteField,
                  params: SchemeParams) -> float:
    """SIPG Laplacian form a(phi, xi) with penalty eta_laplace."""
    _check_shared_space(phi, xi)
    ops = get_operators(phi.mesh, phi.basis)
    ones_c = np.ones(phi.mesh.num_cells)
    ones_f = np.ones(phi.mesh.num_interior_faces)
    return ops.bilinear_value(ones_c, ones_f, params.eta_laplace,
                              phi.coeffs.ravel(), xi.coeffs.ravel())


def assemble_laplace(mesh: MeshTopology, basis: ReferenceBasis,
                     params: SchemeParams) -> sp.csr_matrix:
    """Sparse operator of a(., .)."""
    return get_operators(mesh, basis).laplace_matrix(params.eta_laplace)


def apply_swip(mob: MobilityCoefficients, mu: DiscreteField,
               psi: DiscreteField, params: SchemeParams) -> float:
    """SWIP form b(M, mu, psi); fully degenerate faces contribute nothing."""
    _check_shared_space(mu, psi)
    ops = get_operators(mu.mesh, mu.basis)
    return ops.bilinear_value(mob.cell_values, mob.face_values, params.eta,
                              mu.coeffs.ravel(), psi.coeffs.ravel())


def _velocity_at(u, x, y):
    if callable(u):
        ux, uy = u(x, y)
        return np.broadcast_to(np.asarray(ux, float), x.shape), \
            np.broadcast_to(np.asarray(uy, float), x.shape)
    u = np.asarray(u, dtype=float)
    return np.broadcast_to(u[0], x.shape), np.broadcast_to(u[1], x.shape)


def apply_advection(u, phibar: np.ndarray, psi: DiscreteField,
                    params: SchemeParams) -> float:
    """Upwind advection form c(u, P0 phi, psi)."""
    if not params.advection_enabled:
        raise ValueError("advection is disabled in the scheme parameters")
    ops = get_operators(psi.mesh, psi.basis)
    vec = advection_residual(ops, u, np.asarray(phibar, dtype=float))
    return float(vec @ psi.coeffs.ravel())


def advection_residual(ops: DGOperators, u, phibar: np.ndarray) -> np.ndarray:
    """Vector of c(u, P0 phi, phi_j) over all test functions."""
    ux, uy = _velocity_at(u, ops.x_vol[:, :, 0], ops.x_vol[:, :, 1])
    vec = np.einsum("cq,cq,cqn->cn", ops.wq * phibar[:, None],
                    ux, ops.grad_v[:, :, :, 0])
    vec += np.einsum("cq,cq,cqn->cn", ops.wq * phibar[:, None],
                     uy, ops.grad_v[:, :, :, 1])
    out = vec.ravel()

    fx, fy = _velocity_at(u, ops.x_face[:, :, 0], ops.x_face[:, :, 1])
    un = fx * ops.face_normals[:, 0:1] + fy * ops.face_normals[:, 1:2]
    mesh = ops.mesh
    upwind = (np.maximum(un, 0.0) * phibar[mesh.interior_minus][:, None]
              + np.minimum(un, 0.0) * phibar[mesh.interior_plus][:, None])
    flux = np.einsum("fk,fki->fi", ops.wf * upwind, ops.face_jump)
    np.subtract.at(out, ops.face_dofs.ravel(), flux.ravel())
    return out


def _advection_flux_columns(ops: DGOperators, u):
    """Face flux split by upwind side, for the Jacobian in phibar."""
    fx, fy = _velocity_at(u, ops.x_face[:, :, 0], ops.x_face[:, :, 1])
    un = fx * ops.face_normals[:, 0:1] + fy * ops.face_normals[:, 1:2]
    minus_part = np.einsum("fk,fki->fi", ops.wf * np.maximum(un, 0.0),
                           ops.face_jump)
    plus_part = np.einsum("fk,fki->fi", ops.wf * np.minimum(un, 0.0),
                          ops.face_jump)
    return minus_part, plus_part


# ---------------------------------------------------------------------------
# Coupled residual and Jacobian
# ---------------------------------------------------------------------------

def residual(state_new: CoupledState, phi_old: DiscreteField,
             params: SchemeParams, source=None, velocity=None,
             source_potential=None) -> np.ndarray:
    """Residual of the fully implicit step, length 2 * n_cells * n_dofs.

    Block layout: phase-field equations first, chemical-potential equations
    second.  The mobility is evaluated at the cell averages of the *new*
    phase-field iterate.

    A forcing can be supplied in two ways.  ``source`` is an analytic
    function integrated by quadrature.  ``source_potential`` is a discrete
    field holding the chemical potential of the forced steady state; its
    flux is removed through the same weighted form the scheme uses, so the
    projected steady state stays (near-)stationary instead of drifting by
    the flux consistency error.
    """
    phi, mu = state_new.phi, state_new.mu
    _check_shared_space(phi, mu, phi_old)
    ops = get_operators(phi.mesh, phi.basis)
    meas = ops.measures_rep
    cphi = phi.coeffs.ravel()
    cmu = mu.coeffs.ravel()
    cold = phi_old.coeffs.ravel()

    _, bmat = ops.swip_matrix(phi.coeffs[:, 0].copy(), params.eta)
    if params.source_enabled and source_potential is not None:
        cmu_drive = cmu - source_potential.coeffs.ravel()
    else:
        cmu_drive = cmu
    r_phi = meas * (cphi - cold) / params.tau + (bmat @ cmu_drive) / params.pe
    if params.source_enabled and source is not None:
        r_phi = r_phi - ops.inner_with_function(source)
    if params.advection_enabled and velocity is not None:
        r_phi = r_phi + advection_residual(ops, velocity, phi.coeffs[:, 0])

    amat = ops.laplace_matrix(params.eta_laplace)
    r_mu = (meas * cmu - ops.cubic_inner(phi.coeffs) + meas * cold
            - params.cn ** 2 * (amat @ cphi))
    return np.concatenate([r_phi, r_mu])


def jacobian(state_new: CoupledState, phi_old: DiscreteField,
             params: SchemeParams, velocity=None,
             source_potential=None) -> sp.csr_matrix:
    """Exact derivative of :func:`residual` in all new-state coefficients."""
    phi, mu = state_new.phi, state_new.mu
    _check_shared_space(phi, mu, phi_old)
    ops = get_operators(phi.mesh, phi.basis)
    mesh = ops.mesh
    n = ops.basis.num_dofs
    d = ops.n_dofs
    phibar = phi.coeffs[:, 0].copy()
    mob, bmat = ops.swip_matrix(phibar, params.eta)

    rows, cols, data = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r, dtype=np.intp).ravel())
        cols.append(np.asarray(c, dtype=np.intp).ravel())
        data.append(np.asarray(v, dtype=float).ravel())

    inv_tau = 1.0 / params.tau
    inv_pe = 1.0 / params.pe
    diag = np.arange(d, dtype=np.intp)
    col0 = ops.cell_dofs[:, 0]

    # d(r_phi)/d(phi): time term plus the mobility dependence of b.
    add(diag, diag, inv_tau * ops.measures_rep)
    dm = mobility_derivative(phibar)
    if params.source_enabled and source_potential is not None:
        mu_c = mu.coeffs - source_potential.coeffs
    else:
        mu_c = mu.coeffs
    vol_dir = np.einsum("cnm,cm->cn", ops.kvol, mu_c)  # (c, n)
    add(ops.cell_dofs,
        np.broadcast_to(col0[:, None], ops.cell_dofs.shape),
        inv_pe * dm[:, None] * vol_dir)
    if mesh.num_interior_faces:
        im, ip = mesh.interior_minus, mesh.interior_plus
        fb = ops.face_blocks(params.eta)
        mu_f = mu_c.ravel()[ops.face_dofs]
        y = np.einsum("fij,fj->fi", fb, mu_f)  # (f, 2n)
        mm, mp = mob.cell_values[im], mob.cell_values[ip]
        dwd_m = harmonic_average_da(mm, mp) * dm[im]
        dwd_p = harmonic_average_da(mp, mm) * dm[ip]
        add(ops.face_dofs,
            np.broadcast_to(col0[im][:, None], ops.face_dofs.shape),
            inv_pe * dwd_m[:, None] * y)
        add(ops.face_dofs,
            np.broadcast_to(col0[ip][:, None], ops.face_dofs.shape),
            inv_pe * dwd_p[:, None] * y)

    if params.advection_enabled and velocity is not None:
        ux, uy = _velocity_at(velocity, ops.x_vol[:, :, 0],
                              ops.x_vol[:, :, 1])
        adv_col = np.einsum("cq,cqn->cn", ops.wq * ux,
                            ops.grad_v[:, :, :, 0])
        adv_col += np.einsum("cq,cqn->cn", ops.wq * uy,
                             ops.grad_v[:, :, :, 1])
        add(ops.cell_dofs,
            np.broadcast_to(col0[:, None], ops.cell_dofs.shape), adv_col)
        if mesh.num_interior_faces:
            minus_part, plus_part = _advection_flux_columns(ops, velocity)
            add(ops.face_dofs,
                np.broadcast_to(col0[mesh.interior_minus][:, None],
                                ops.face_dofs.shape), -minus_part)
            add(ops.face_dofs,
                np.broadcast_to(col0[mesh.interior_plus][:, None],
                                ops.face_dofs.shape), -plus_part)

    # d(r_phi)/d(mu) = Pe^-1 B(M).
    bcoo = bmat.tocoo()
    add(bcoo.row, bcoo.col + d, inv_pe * bcoo.data)

    # d(r_mu)/d(phi) = -<3 phi^2 phi_i, phi_j> - Cn^2 A.
    c3 = ops.cubic_inner_jacobian(phi.coeffs)  # (c, n_test, n_trial)
    add(np.broadcast_to(ops.cell_dofs[:, :, None] + d,
                        (mesh.num_cells, n, n)),
        np.broadcast_to(ops.cell_dofs[:, None, :],
                        (mesh.num_cells, n, n)),
        -c3)
    acoo = ops.laplace_matrix(params.eta_laplace).tocoo()
    add(acoo.row + d, acoo.col, -params.cn ** 2 * acoo.data)

    # d(r_mu)/d(mu) = mass matrix.
    add(diag + d, diag + d, ops.measures_rep)

    mat = sp.coo_matrix(
        (np.concatenate(data),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * d, 2 * d))
    return mat.tocsr()
