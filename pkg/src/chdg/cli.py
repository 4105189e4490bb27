"""Command line entry point.

``chdg run <config>`` runs one scenario and writes diagnostics, snapshots,
and (on failure) whatever was computed before the abort.  ``chdg eoc``
drives the convergence study, ``chdg check`` runs the randomized coercivity
and limiter probes.  Exit codes: 0 success, 2 solver failure, 3 a check
or acceptance tolerance was missed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import diagnostics, io, scenarios, solver
from .basis import make_basis
from .fields import DiscreteField
from .forms import SchemeParams, auto_penalty
from .limiter import LimiterConfig, limit_field, sample_matrix
from .mesh import build_quad_mesh, build_tri_mesh

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 2
EXIT_CHECK_FAILURE = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chdg",
        description="DG solver for the degenerate Cahn-Hilliard system")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario from a config file")
    run_p.add_argument("config", help="key=value configuration file")
    run_p.add_argument("--param", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry")

    eoc_p = sub.add_parser("eoc", help="run the convergence study")
    eoc_p.add_argument("config", help="key=value configuration file")
    eoc_p.add_argument("--levels", type=int, default=3,
                       help="number of refinement levels (default 3)")
    eoc_p.add_argument("--param", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry")

    chk_p = sub.add_parser(
        "check", help="randomized coercivity and limiter probes")
    chk_p.add_argument("--trials", type=int, default=100)
    chk_p.add_argument("--seed", type=int, default=0)
    return parser


def _ensure_out_dir(cfg):
    out = io.resolve_out_dir(cfg)
    os.makedirs(out, exist_ok=True)
    return out


def _cmd_run(args) -> int:
    cfg = io.load_config(args.config, args.param)
    out = _ensure_out_dir(cfg)
    csv_path = os.path.join(out, f"{cfg.scenario}_diagnostics.csv")
    try:
        rows, snapshots, state = scenarios.run_scenario(cfg)
    except solver.SolverFailure as exc:
        io.write_csv(exc.rows, csv_path)
        print(f"solver failure: {exc}", file=sys.stderr)
        print(f"partial diagnostics written to {csv_path}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    io.write_csv(rows, csv_path)
    for step, snap in snapshots.items():
        io.write_vtk(snap, os.path.join(
            out, f"{cfg.scenario}_step{step:06d}.vtk"))
    io.write_vtk(state, os.path.join(out, f"{cfg.scenario}_final.vtk"))
    last = rows[-1]
    print(f"{cfg.scenario}: {last.n} steps to t = {last.t:g}, "
          f"energy {last.energy:.6e}, mass {last.mass:.12e}")
    print(f"diagnostics written to {csv_path}")
    return EXIT_OK


def _cmd_eoc(args) -> int:
    cfg = io.load_config(args.config, args.param)
    out = _ensure_out_dir(cfg)
    table = scenarios.run_trig_eoc(cfg, args.levels)
    path = os.path.join(out, f"eoc_p{cfg.p}.txt")
    io.write_eoc(table, path)
    with open(path) as fh:
        sys.stdout.write(fh.read())
    if any(r.failed for r in table.rows):
        return EXIT_SOLVER_FAILURE
    return EXIT_OK


def _cmd_check(args) -> int:
    ok = True

    # Coercivity of the weighted interior-penalty form on both cell types.
    for cell_type, build in (("quad", build_quad_mesh),
                             ("tri", build_tri_mesh)):
        for p in (0, 1, 2):
            mesh = build(4, 4, (0.0, 1.0, 0.0, 1.0))
            basis = make_basis(cell_type, p)
            params = SchemeParams(pe=1.0, cn=0.1, tau=1e-3,
                                  eta=auto_penalty(mesh, p) + 1.0, p=p)
            rep = diagnostics.coercivity_probe(mesh, basis, params,
                                               args.trials, seed=args.seed)
            good = rep.failures == 0
            ok &= good
            print(f"coercivity {cell_type} p={p}: "
                  f"worst margin {rep.worst_margin:+.3e} over "
                  f"{rep.trials} trials "
                  f"[{'ok' if good else 'FAIL'}]")

    # Limiter: bounds at the sample set, average preservation, contraction.
    rng = np.random.default_rng(args.seed)
    lim_cfg = LimiterConfig()
    mesh = build_tri_mesh(16, 16, (0.0, 1.0, 0.0, 1.0))
    basis = make_basis("tri", 2)
    smat = sample_matrix(basis, lim_cfg)
    coeffs = np.empty((mesh.num_cells, basis.num_dofs))
    coeffs[:, 0] = rng.uniform(-1.0, 1.0, mesh.num_cells)
    coeffs[:, 1:] = rng.normal(0.0, 1.0, (mesh.num_cells, basis.num_dofs - 1))
    field = DiscreteField(mesh, basis, coeffs)
    limited = limit_field(field, lim_cfg)
    vals = limited.coeffs @ smat.T
    in_bounds = bool((np.abs(vals) <= 1.0 + 1e-13).all())
    avg_kept = bool((limited.coeffs[:, 0] == coeffs[:, 0]).all())
    contract = bool((np.abs(limited.coeffs[:, 1:])
                     <= np.abs(coeffs[:, 1:]) + 1e-300).all())
    for name, good in (("sample bounds", in_bounds),
                       ("averages bitwise preserved", avg_kept),
                       ("deviation contraction", contract)):
        ok &= good
        print(f"limiter {name}: [{'ok' if good else 'FAIL'}]")

    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "eoc":
            return _cmd_eoc(args)
        return _cmd_check(args)
    except solver.SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
