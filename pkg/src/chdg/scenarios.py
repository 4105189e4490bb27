"""Experiment setups: trigonometric convergence study, spinodal
decomposition, and merging bubbles.

Each scenario builder turns a :class:`ScenarioConfig` into mesh, basis,
initial state, scheme parameters, and (for the convergence study) the
manufactured source that makes the trigonometric profile a steady state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import forms, solver
from .basis import make_basis, make_quadrature
from .fields import (CoupledState, DiscreteField, physical_points,
                     project_l2, zero_field)
from .limiter import LimiterConfig, limit_field
from .mesh import QUAD, TRI, build_quad_mesh, build_tri_mesh

SCENARIOS = ("trig_eoc", "spinodal", "merging")

#: Caption-style time step rule for the convergence study, selected with
#: ``tau_rule = "caption"``: tau = T * 2^(-(N - 20) / 20).
TAU_RULE_HALVING = "halving"
TAU_RULE_CAPTION = "caption"


@dataclass
class ScenarioConfig:
    scenario: str = "spinodal"
    cell_type: str = TRI
    nx: int = 32
    ny: int = 32
    p: int = 1
    pe: float = 1.0
    cn: float = 0.01
    tau: float = 1e-4
    t_end: float = 0.05
    eta: float | str = 6.0  # a number or "auto"
    limiter: bool = True
    newton_tol: float = 1e-10
    seed: int = 0
    amplitude: float = 0.1    # A1 for trig_eoc, A2 for merging
    out_dir: str = "out"
    snapshot_times: tuple = ()
    tau_rule: str = TAU_RULE_HALVING
    linear_solver: str = "lu"
    sample_mode: str = "all"
    source_mode: str = "operator"  # "operator" or "quadrature"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.cell_type not in (QUAD, TRI):
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        for name in ("pe", "cn", "tau", "t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.nx < 1 or self.ny < 1 or self.p < 0:
            raise ValueError("resolution and order must be non-negative")
        if self.scenario == "trig_eoc" and not 0.0 < self.amplitude <= 1.0:
            raise ValueError("trig amplitude must lie in (0, 1]")
        if self.scenario == "merging" and not 0.0 <= self.amplitude < 1.0:
            raise ValueError("merging scale must lie in [0, 1)")
        if self.tau_rule not in (TAU_RULE_HALVING, TAU_RULE_CAPTION):
            raise ValueError(f"unknown tau rule {self.tau_rule!r}")
        if self.source_mode not in ("operator", "quadrature"):
            raise ValueError(f"unknown source mode {self.source_mode!r}")

    def resolve_eta(self, mesh) -> float:
        if self.eta == "auto":
            return forms.auto_penalty(mesh, self.p)
        return float(self.eta)


#: Built-in parameter sets matching the three experiments.  The spinodal and
#: merging resolutions are desk-scale; pass paper_scale=True for the full ones.
def default_config(scenario: str, p: int = 1,
                   paper_scale: bool = False) -> ScenarioConfig:
    if scenario == "trig_eoc":
        return ScenarioConfig(
            scenario="trig_eoc", cell_type=QUAD, nx=40, ny=40, p=p,
            pe=0.3, cn=0.1, tau=1e-3, t_end=1e-4,
            eta=max(1.0, 3.0 * p * (p + 1)), limiter=(p > 0),
            amplitude=0.1 if p == 0 else 0.99)
    if scenario == "spinodal":
        n = 64 if paper_scale else 32
        return ScenarioConfig(
            scenario="spinodal", cell_type=TRI, nx=n, ny=n, p=p,
            pe=1.0, cn=0.01, tau=1e-4, t_end=0.05, eta=6.0,
            limiter=(p > 0), amplitude=0.0,
            snapshot_times=(0.025, 0.0375, 0.05))
    if scenario == "merging":
        n = 256 if paper_scale else 64
        return ScenarioConfig(
            scenario="merging", cell_type=TRI, nx=n, ny=n, p=p,
            pe=1.0, cn=1.0 / 64.0, tau=5e-5, t_end=0.04, eta=6.0,
            limiter=(p > 0), amplitude=1e-8)
    raise ValueError(f"unknown scenario {scenario!r}")


def _build_mesh(cfg: ScenarioConfig):
    build = build_quad_mesh if cfg.cell_type == QUAD else build_tri_mesh
    return build(cfg.nx, cfg.ny, (0.0, 1.0, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Trigonometric steady state and its manufactured source
# ---------------------------------------------------------------------------

def trig_profile(a1: float):
    """phi_I(x, y) = A1 cos(4 pi x) cos(4 pi y)."""
    def phi_i(x, y):
        return a1 * np.cos(4.0 * np.pi * x) * np.cos(4.0 * np.pi * y)
    return phi_i


def trig_gradient(a1: float):
    def grad(x, y):
        k = 4.0 * np.pi
        gx = -a1 * k * np.sin(k * x) * np.cos(k * y)
        gy = -a1 * k * np.cos(k * x) * np.sin(k * y)
        return gx, gy
    return grad


def trig_source(a1: float, pe: float, cn: float):
    """Source that freezes the trigonometric profile.

    With mu_I = phi_I^3 + gamma phi_I, gamma = 32 pi^2 Cn^2 - 1 (the profile
    is an eigenfunction of the Laplacian with eigenvalue -32 pi^2), the
    source is S = -Pe^-1 div(M(phi_I) grad mu_I) expanded by the chain rule.
    """
    gamma = 32.0 * np.pi ** 2 * cn ** 2 - 1.0
    k = 4.0 * np.pi

    def source(x, y):
        c1, c2 = np.cos(k * x), np.cos(k * y)
        s1, s2 = np.sin(k * x), np.sin(k * y)
        u = a1 * c1 * c2
        grad2 = k ** 2 * a1 ** 2 * (s1 ** 2 * c2 ** 2 + c1 ** 2 * s2 ** 2)
        q = 3.0 * u ** 2 + gamma
        div = ((1.0 - u ** 2) * (q * (-2.0 * k ** 2 * u) + 6.0 * u * grad2)
               - 2.0 * u * q * grad2)
        return -div / pe
    return source


# ---------------------------------------------------------------------------
# Initial states
# ---------------------------------------------------------------------------

def initial_state(cfg: ScenarioConfig, mesh, basis) -> CoupledState:
    if cfg.scenario == "trig_eoc":
        phi0 = project_l2(trig_profile(cfg.amplitude), mesh, basis,
                          quad_degree=2 * basis.p + 8)
    elif cfg.scenario == "spinodal":
        rng = np.random.default_rng(cfg.seed)
        phi0 = zero_field(mesh, basis)
        phi0.coeffs[:, 0] = 0.3 + rng.uniform(-0.01, 0.01, mesh.num_cells)
    else:
        phi0 = project_l2(merging_profile(cfg.amplitude, cfg.cn), mesh,
                          basis, quad_degree=2 * basis.p + 8)
    return CoupledState(phi0, zero_field(mesh, basis), t=0.0, n=0)


def merging_profile(a2: float, cn: float):
    """Two-droplet tanh profile of radius 0.2, scaled by (1 - A2)."""
    r = 0.2
    centers = ((0.3, 0.5), (0.7, 0.5))

    def phi0(x, y):
        acc = 1.0
        for cx, cy in centers:
            dist = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
            acc = acc + 0.5 * np.tanh((r - dist) / (np.sqrt(2.0) * cn))
        return (1.0 - a2) * (2.0 * np.minimum(acc, 1.0) - 1.0)
    return phi0


def scheme_params(cfg: ScenarioConfig, mesh) -> forms.SchemeParams:
    return forms.SchemeParams(
        pe=cfg.pe, cn=cfg.cn, tau=cfg.tau, eta=cfg.resolve_eta(mesh),
        p=cfg.p, source_enabled=(cfg.scenario == "trig_eoc"))


def _step_plan(tau: float, t_end: float):
    """(n_steps, effective tau) so the run lands exactly on t_end."""
    tau = min(tau, t_end)
    n_steps = max(1, round(t_end / tau))
    if not math.isclose(n_steps * tau, t_end, rel_tol=1e-9):
        n_steps = math.ceil(t_end / tau - 1e-12)
    return n_steps, t_end / n_steps


def trig_potential(a1: float, cn: float):
    """Chemical potential of the trigonometric steady state."""
    gamma = 32.0 * np.pi ** 2 * cn ** 2 - 1.0

    def mu_i(x, y):
        u = trig_profile(a1)(x, y)
        return u ** 3 + gamma * u
    return mu_i


def run_scenario(cfg: ScenarioConfig, on_step=None):
    """Run one configured experiment; returns (rows, snapshots, state).

    The convergence forcing defaults to operator form: the flux of the
    projected steady-state potential is removed through the scheme's own
    weighted form.  ``source_mode = "quadrature"`` switches to integrating
    the closed-form source function instead.
    """
    mesh = _build_mesh(cfg)
    basis = make_basis(cfg.cell_type, cfg.p)
    state0 = initial_state(cfg, mesh, basis)
    limiter_cfg = LimiterConfig(sample_mode=cfg.sample_mode)
    if cfg.limiter and cfg.p > 0:
        # The limited scheme evolves inside the admissible set, so the
        # projected initial datum is limited as well; projection overshoot
        # of steep profiles would otherwise start the run outside [-1, 1].
        state0 = CoupledState(limit_field(state0.phi, limiter_cfg),
                              state0.mu, state0.t, state0.n)
    n_steps, tau_eff = _step_plan(cfg.tau, cfg.t_end)
    params = replace(scheme_params(cfg, mesh), tau=tau_eff)
    source = source_potential = None
    if cfg.scenario == "trig_eoc":
        if cfg.source_mode == "operator":
            source_potential = project_l2(
                trig_potential(cfg.amplitude, cfg.cn), mesh, basis,
                quad_degree=2 * basis.p + 8)
        else:
            source = trig_source(cfg.amplitude, cfg.pe, cfg.cn)
    snap_steps = sorted({min(n_steps, max(0, round(t / tau_eff)))
                         for t in cfg.snapshot_times})
    newton_cfg = solver.NewtonConfig(tol=cfg.newton_tol,
                                     linear_solver=cfg.linear_solver)
    return solver.run(state0, params, n_steps,
                      limiter_enabled=cfg.limiter and cfg.p > 0,
                      newton_cfg=newton_cfg, limiter_cfg=limiter_cfg,
                      source=source, source_potential=source_potential,
                      snapshot_steps=snap_steps, on_step=on_step)


def run_spinodal(cfg: ScenarioConfig, on_step=None):
    if cfg.scenario != "spinodal":
        raise ValueError("config is not a spinodal setup")
    if cfg.cell_type != TRI:
        raise ValueError("spinodal decomposition runs on triangle meshes")
    return run_scenario(cfg, on_step)


def run_merging(cfg: ScenarioConfig, on_step=None):
    if cfg.scenario != "merging":
        raise ValueError("config is not a merging-bubbles setup")
    if cfg.cell_type != TRI:
        raise ValueError("merging bubbles runs on triangle meshes")
    return run_scenario(cfg, on_step)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass
class EocRow:
    n: int
    l2_error: float
    l2_eoc: float | None
    h1_error: float
    h1_eoc: float | None
    failed: bool = False


@dataclass
class EocTable:
    p: int
    amplitude: float
    rows: list = field(default_factory=list)


def errors_vs(phi: DiscreteField, exact, exact_grad,
              quad_degree: int | None = None):
    """(L2 error, broken H1 seminorm error) of phi against an analytic field."""
    if quad_degree is None:
        quad_degree = 2 * phi.basis.p + 8
    rule = make_quadrature(phi.mesh.cell_type, quad_degree)
    X = physical_points(phi.mesh, rule.points)
    x, y = X[:, :, 0], X[:, :, 1]
    det = np.abs(np.linalg.det(phi.mesh.cell_jacobians))
    wq = rule.weights[None, :] * det[:, None]

    bvals = phi.basis.values(rule.points)
    uh = phi.coeffs @ bvals.T
    diff = uh - exact(x, y)
    l2 = float(np.sqrt((wq * diff ** 2).sum()))

    gref = phi.basis.gradients(rule.points)
    jinv = phi.mesh.inverse_jacobians()
    gphys = np.einsum("qne,ced->cqnd", gref, jinv)
    gh = np.einsum("cn,cqnd->cqd", phi.coeffs, gphys)
    gex, gey = exact_grad(x, y)
    dx = gh[:, :, 0] - gex
    dy = gh[:, :, 1] - gey
    h1 = float(np.sqrt((wq * (dx ** 2 + dy ** 2)).sum()))
    return l2, h1


def run_trig_eoc(cfg: ScenarioConfig, levels: int) -> EocTable:
    """Convergence table: double N and halve the base tau per level."""
    if levels < 2:
        raise ValueError("need at least two refinement levels")
    if cfg.scenario != "trig_eoc":
        raise ValueError("config is not a trigonometric convergence setup")
    table = EocTable(cfg.p, cfg.amplitude)
    exact = trig_profile(cfg.amplitude)
    exact_grad = trig_gradient(cfg.amplitude)
    prev = None
    for lev in range(levels):
        n = cfg.nx * 2 ** lev
        if cfg.tau_rule == TAU_RULE_CAPTION:
            tau = cfg.t_end * 2.0 ** (-(n - 20) / 20.0)
        else:
            tau = cfg.tau / 2 ** lev
        level_cfg = replace(cfg, nx=n, ny=n, tau=tau)
        try:
            _, _, state = run_scenario(level_cfg)
        except solver.SolverFailure:
            table.rows.append(EocRow(n, float("nan"), None,
                                     float("nan"), None, failed=True))
            prev = None
            continue
        l2, h1 = errors_vs(state.phi, exact, exact_grad)
        l2_eoc = h1_eoc = None
        if prev is not None:
            l2_eoc = float(np.log2(prev[0] / l2))
            h1_eoc = float(np.log2(prev[1] / h1))
        table.rows.append(EocRow(n, l2, l2_eoc, h1, h1_eoc))
        prev = (l2, h1)
    return table
