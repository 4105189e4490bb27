import numpy as np
import pytest
import scipy.sparse as sp

from chdg.basis import make_basis
from chdg.fields import CoupledState, constant_field, zero_field
from chdg.forms import SchemeParams, jacobian, residual
from chdg.mesh import TRI, build_tri_mesh
from chdg.solver import (DENSE_FALLBACK_SIZE, LinearSolveError, NewtonConfig,
                         NewtonError, advance, linear_solve, newton_solve,
                         run)


def small_setup(p=1, n=4):
    mesh = build_tri_mesh(n, n)
    basis = make_basis(TRI, p)
    params = SchemeParams(pe=1.0, cn=0.05, tau=1e-4, eta=6.0, p=p)
    return mesh, basis, params


# ---------------------------------------------------------------------------
# Linear solver
# ---------------------------------------------------------------------------

def test_linear_solve_identity():
    rhs = np.arange(1.0, 6.0)
    x = linear_solve(sp.eye(5, format="csr"), rhs)
    assert np.allclose(x, rhs, atol=1e-12)


def test_linear_solve_zero_rhs():
    A = sp.eye(7, format="csr")
    assert (linear_solve(A, np.zeros(7)) == 0.0).all()


def test_linear_solve_dense_oracle():
    rng = np.random.default_rng(1)
    n = 40
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    rhs = rng.standard_normal(n)
    x = linear_solve(sp.csr_matrix(A), rhs)
    assert np.allclose(x, np.linalg.solve(A, rhs), atol=1e-9)


def test_linear_solve_singular_raises():
    A = sp.csr_matrix(np.zeros((4, 4)))
    with pytest.raises(LinearSolveError):
        linear_solve(A, np.ones(4))


def test_linear_solve_krylov_path():
    rng = np.random.default_rng(2)
    n = DENSE_FALLBACK_SIZE + 64
    diag = rng.uniform(2.0, 3.0, n)
    off = 0.1 * rng.standard_normal(n - 1)
    A = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    rhs = rng.standard_normal(n)
    x = linear_solve(A, rhs, tol=1e-10)
    assert np.linalg.norm(A @ x - rhs) <= 1e-8 * np.linalg.norm(rhs)


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------

def test_newton_zero_iterations_at_a_root():
    # The uniform zero state with matching history is an exact steady
    # state, so the initial residual already meets the tolerance.
    mesh, basis, params = small_setup()
    phi = zero_field(mesh, basis)
    mu = zero_field(mesh, basis)
    state = CoupledState(phi, mu)
    res = lambda s: residual(s, phi, params)
    jac = lambda s: jacobian(s, phi, params)
    out, report = newton_solve(res, jac, state, NewtonConfig(tol=1e-12))
    assert report.iterations == 0
    assert report.residual_norm <= 1e-12


def test_newton_converges_on_one_implicit_step():
    mesh, basis, params = small_setup()
    rng = np.random.default_rng(3)
    phi_old = zero_field(mesh, basis)
    phi_old.coeffs[:, 0] = 0.3 + rng.uniform(-0.01, 0.01, mesh.num_cells)
    state, report = advance(CoupledState(phi_old, zero_field(mesh, basis)),
                            params, newton_cfg=NewtonConfig(tol=1e-12))
    assert report.residual_norm <= 1e-12
    assert 0 < report.iterations <= 10
    assert state.n == 1
    assert state.t == pytest.approx(params.tau)
    # History is monotone overall from start to finish.
    assert report.history[-1] < report.history[0]


def test_newton_unreachable_tolerance_raises():
    mesh, basis, params = small_setup(n=2)
    rng = np.random.default_rng(4)
    phi_old = zero_field(mesh, basis)
    phi_old.coeffs[:, 0] = rng.uniform(-0.5, 0.5, mesh.num_cells)
    with pytest.raises(NewtonError):
        advance(CoupledState(phi_old, zero_field(mesh, basis)), params,
                newton_cfg=NewtonConfig(tol=1e-30, max_iters=12))


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(tol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(linear_solver="cg")


# ---------------------------------------------------------------------------
# Time stepping driver
# ---------------------------------------------------------------------------

def test_run_collects_rows_and_snapshots():
    mesh, basis, params = small_setup()
    rng = np.random.default_rng(5)
    phi0 = zero_field(mesh, basis)
    phi0.coeffs[:, 0] = 0.3 + rng.uniform(-0.01, 0.01, mesh.num_cells)
    state0 = CoupledState(phi0, zero_field(mesh, basis))
    rows, snaps, state = run(state0, params, 3, limiter_enabled=True,
                             newton_cfg=NewtonConfig(tol=1e-11),
                             snapshot_steps=(0, 2))
    assert len(rows) == 4
    assert [r.n for r in rows] == [0, 1, 2, 3]
    assert set(snaps) == {0, 2}
    assert state.n == 3
    # Mass is conserved along the run.
    assert abs(rows[-1].mass - rows[0].mass) < 1e-12


def test_run_keeps_averages_bounded_from_extreme_start():
    # Averages near the well edges stay inside [-1, 1] even with a large
    # time step.
    mesh, basis, params = small_setup(p=0)
    params = SchemeParams(pe=1.0, cn=0.05, tau=1e-2, eta=6.0, p=0)
    rng = np.random.default_rng(6)
    phi0 = zero_field(mesh, basis)
    phi0.coeffs[:, 0] = rng.uniform(-0.999, 0.999, mesh.num_cells)
    state0 = CoupledState(phi0, zero_field(mesh, basis))
    rows, _, _ = run(state0, params, 5, newton_cfg=NewtonConfig(tol=1e-11))
    for r in rows:
        assert max(abs(r.min_avg), abs(r.max_avg)) <= 1.0 + 1e-12


def test_run_attaches_partial_rows_on_failure():
    from chdg.solver import SolverFailure
    mesh, basis, params = small_setup(n=2)
    rng = np.random.default_rng(7)
    phi0 = zero_field(mesh, basis)
    phi0.coeffs[:, 0] = rng.uniform(-0.5, 0.5, mesh.num_cells)
    state0 = CoupledState(phi0, zero_field(mesh, basis))
    with pytest.raises(SolverFailure) as exc_info:
        run(state0, params, 3, newton_cfg=NewtonConfig(tol=1e-30,
                                                       max_iters=8))
    assert len(exc_info.value.rows) >= 1
    assert exc_info.value.rows[0].n == 0


def test_run_subdivides_failed_steps(monkeypatch):
    # A step that cannot be solved at the full step size is retried as two
    # half steps landing on the same output time; the reported iteration
    # count aggregates the substeps.
    import chdg.solver as solver_mod
    mesh, basis, params = small_setup(n=2)
    rng = np.random.default_rng(8)
    phi0 = zero_field(mesh, basis)
    phi0.coeffs[:, 0] = rng.uniform(-0.5, 0.5, mesh.num_cells)
    state0 = CoupledState(phi0, zero_field(mesh, basis))

    real_advance = solver_mod.advance

    def flaky_advance(state, p, *args, **kwargs):
        if p.tau > 0.6 * params.tau:
            raise NewtonError("fabricated failure", 1.0, 1)
        return real_advance(state, p, *args, **kwargs)

    monkeypatch.setattr(solver_mod, "advance", flaky_advance)
    rows, _, state = solver_mod.run(state0, params, 3,
                                    newton_cfg=NewtonConfig(tol=1e-11))
    assert state.n == 3
    assert state.t == pytest.approx(3 * params.tau, rel=1e-12)
    assert len(rows) == 4
    assert all(r.newton_iters >= 2 for r in rows[1:])

    # Exhausted subdivision budget surfaces as a SolverFailure.
    from chdg.solver import SolverFailure

    def always_fail(state, p, *args, **kwargs):
        raise NewtonError("fabricated failure", 1.0, 1)

    monkeypatch.setattr(solver_mod, "advance", always_fail)
    with pytest.raises(SolverFailure):
        solver_mod.run(state0, params, 1, max_subdivisions=2)
