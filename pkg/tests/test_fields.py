import numpy as np
import pytest

from chdg.basis import make_basis, make_quadrature
from chdg.fields import (CoupledState, DiscreteField, cell_average,
                         constant_field, evaluate, evaluate_at, mass,
                         physical_points, project_l2, project_p0,
                         sample_extrema, zero_field)
from chdg.mesh import QUAD, TRI, build_quad_mesh, build_tri_mesh


def random_field(mesh, basis, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return DiscreteField(
        mesh, basis,
        scale * rng.standard_normal((mesh.num_cells, basis.num_dofs)))


@pytest.mark.parametrize("cell_type,build", [(QUAD, build_quad_mesh),
                                             (TRI, build_tri_mesh)])
def test_cell_average_against_quadrature(cell_type, build):
    mesh = build(3, 2)
    basis = make_basis(cell_type, 2)
    f = random_field(mesh, basis, seed=1)
    rule = make_quadrature(cell_type, 2 * basis.p)
    vals = f.coeffs @ basis.values(rule.points).T
    ref = rule.weights.sum()
    for K in range(mesh.num_cells):
        avg = (rule.weights * vals[K]).sum() / ref
        assert abs(cell_average(f, K) - avg) < 1e-13


def test_cell_average_out_of_range():
    mesh = build_quad_mesh(2, 2)
    f = zero_field(mesh, make_basis(QUAD, 1))
    with pytest.raises(IndexError):
        cell_average(f, 4)


def test_p0_projection_hand_values():
    # f(x, y) = x on [0, 1]^2 split into two vertical strips: the cell
    # averages are 0.25 and 0.75.
    mesh = build_quad_mesh(2, 1)
    basis = make_basis(QUAD, 2)
    f = project_l2(lambda x, y: x, mesh, basis)
    p0 = project_p0(f)
    assert p0.basis.p == 0
    assert np.allclose(p0.coeffs[:, 0], [0.25, 0.75], atol=1e-14)


def test_p0_projection_idempotent():
    mesh = build_tri_mesh(2, 2)
    f = random_field(mesh, make_basis(TRI, 2), seed=2)
    once = project_p0(f)
    twice = project_p0(once)
    assert (once.coeffs == twice.coeffs).all()


@pytest.mark.parametrize("cell_type,build", [(QUAD, build_quad_mesh),
                                             (TRI, build_tri_mesh)])
def test_projection_reproduces_polynomials(cell_type, build):
    mesh = build(3, 3, (0.0, 1.0, 0.0, 2.0))
    basis = make_basis(cell_type, 2)

    def poly(x, y):
        return 1.0 - 2.0 * x + 0.5 * y + x * y - 0.25 * y ** 2

    f = project_l2(poly, mesh, basis)
    pts = make_quadrature(cell_type, 5).points
    X = physical_points(mesh, pts)
    vals = evaluate_at(f, pts)
    assert np.abs(vals - poly(X[:, :, 0], X[:, :, 1])).max() < 1e-13


def test_projection_convergence_rate():
    # L2 error of the p = 1 projection of sin(2 pi x) halves twice per
    # mesh doubling.
    errs = []
    for n in (8, 16, 32):
        mesh = build_quad_mesh(n, n)
        basis = make_basis(QUAD, 1)
        f = project_l2(lambda x, y: np.sin(2.0 * np.pi * x), mesh, basis,
                       quad_degree=10)
        rule = make_quadrature(QUAD, 10)
        X = physical_points(mesh, rule.points)
        det = np.abs(np.linalg.det(mesh.cell_jacobians))
        wq = rule.weights[None, :] * det[:, None]
        diff = evaluate_at(f, rule.points) - np.sin(2.0 * np.pi * X[:, :, 0])
        errs.append(np.sqrt((wq * diff ** 2).sum()))
    eoc = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(eoc - 2.0) < 0.1)


def test_parseval_norm():
    mesh = build_tri_mesh(3, 3)
    basis = make_basis(TRI, 2)
    f = random_field(mesh, basis, seed=4)
    rule = make_quadrature(TRI, 2 * basis.p)
    det = np.abs(np.linalg.det(mesh.cell_jacobians))
    wq = rule.weights[None, :] * det[:, None]
    vals = evaluate_at(f, rule.points)
    quad_norm = np.sqrt((wq * vals ** 2).sum())
    assert abs(f.l2_norm() - quad_norm) <= 1e-12 * quad_norm


def test_constant_field_and_mass():
    mesh = build_tri_mesh(4, 4)
    basis = make_basis(TRI, 1)
    f = constant_field(mesh, basis, 0.3)
    assert mass(f) == pytest.approx(0.3, rel=1e-14)
    g = zero_field(mesh, basis)
    assert mass(g) == 0.0


def test_mass_weighs_cells_by_measure():
    mesh = build_quad_mesh(2, 1, (0.0, 3.0, 0.0, 1.0))
    basis = make_basis(QUAD, 0)
    f = zero_field(mesh, basis)
    f.coeffs[:, 0] = [1.0, -1.0]
    # Equal cell measures: the average is zero.
    assert mass(f) == pytest.approx(0.0, abs=1e-15)


def test_evaluate_and_extrema():
    mesh = build_quad_mesh(1, 1)
    basis = make_basis(QUAD, 1)
    f = project_l2(lambda x, y: x, mesh, basis)
    assert evaluate(f, 0, (0.0, 0.0)) == pytest.approx(0.5, abs=1e-14)
    corners = np.array([[-1.0, -1.0], [1.0, 1.0]])
    lo, hi = sample_extrema(f, corners)
    assert lo == pytest.approx(0.0, abs=1e-14)
    assert hi == pytest.approx(1.0, abs=1e-14)


def test_coupled_state_space_check():
    mesh = build_quad_mesh(2, 2)
    basis1 = make_basis(QUAD, 1)
    basis2 = make_basis(QUAD, 2)
    with pytest.raises(ValueError):
        CoupledState(zero_field(mesh, basis1), zero_field(mesh, basis2))
