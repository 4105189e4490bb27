"""Artifact writers and the flat key=value configuration format.

Diagnostics go to CSV with a fixed header, field snapshots to legacy ASCII
VTK unstructured grids, and convergence tables to aligned plain text.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .diagnostics import DiagnosticsRow
from .fields import CoupledState, evaluate_at
from .mesh import QUAD
from .scenarios import EocTable, ScenarioConfig

CSV_HEADER = ("step,time,energy,mass,min_sample,max_sample,"
              "min_avg,max_avg,newton_iters,residual,violation")


def write_csv(series, path) -> None:
    """Write diagnostics rows; an empty series yields a header-only file."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER.split(","))
            for r in series:
                writer.writerow([
                    r.n, repr(r.t), repr(r.energy), repr(r.mass),
                    repr(r.min_sample), repr(r.max_sample),
                    repr(r.min_avg), repr(r.max_avg),
                    r.newton_iters, repr(r.residual_norm), repr(r.violation)])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics CSV {path!r}: {exc}") from exc


def read_csv(path):
    """Parse a diagnostics CSV back into DiagnosticsRow objects."""
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER.split(","):
                raise ValueError(f"unexpected CSV header in {path!r}")
            for rec in reader:
                rows.append(DiagnosticsRow(
                    int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]),
                    float(rec[4]), float(rec[5]), float(rec[6]),
                    float(rec[7]), int(rec[8]), float(rec[9]),
                    float(rec[10])))
    except OSError as exc:
        raise OSError(f"cannot read diagnostics CSV {path!r}: {exc}") from exc
    return rows


def write_vtk(state: CoupledState, path) -> None:
    """Legacy ASCII VTK unstructured grid of one snapshot.

    Cell data holds the cell averages of both fields; for p >= 1 the fields
    are also evaluated at cell corners and stored as point data (corners are
    duplicated per cell, keeping the traces discontinuous).
    """
    mesh = state.phi.mesh
    p = state.phi.basis.p
    nv = 4 if mesh.cell_type == QUAD else 3
    if mesh.cell_type == QUAD:
        ref_corners = np.array([[-1.0, -1.0], [1.0, -1.0],
                                [1.0, 1.0], [-1.0, 1.0]])
        vtk_type = 9
    else:
        ref_corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        vtk_type = 5
    corners = mesh.vertices[mesh.cell_vertices]  # (c, nv, 2)
    nc = mesh.num_cells
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"phase field snapshot t={state.t!r} step={state.n}\n")
            fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {nc * nv} double\n")
            for cell in corners:
                for x, y in cell:
                    fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
            fh.write(f"\nCELLS {nc} {nc * (nv + 1)}\n")
            base = np.arange(nc) * nv
            for b in base:
                ids = " ".join(str(b + j) for j in range(nv))
                fh.write(f"{nv} {ids}\n")
            fh.write(f"\nCELL_TYPES {nc}\n")
            fh.writelines(f"{vtk_type}\n" for _ in range(nc))
            fh.write(f"\nCELL_DATA {nc}\n")
            for name, f in (("phi", state.phi), ("mu", state.mu)):
                fh.write(f"SCALARS {name}_avg double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{float(v)!r}\n" for v in f.coeffs[:, 0])
            if p >= 1:
                fh.write(f"\nPOINT_DATA {nc * nv}\n")
                for name, f in (("phi", state.phi), ("mu", state.mu)):
                    vals = evaluate_at(f, ref_corners)  # (c, nv)
                    fh.write(f"SCALARS {name} double 1\n"
                             "LOOKUP_TABLE default\n")
                    fh.writelines(f"{float(v)!r}\n" for v in vals.ravel())
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path!r}: {exc}") from exc


def write_eoc(table: EocTable, path) -> None:
    """Aligned plain-text convergence table."""
    def fmt(x):
        return "   --   " if x is None else f"{x:8.2f}"

    lines = [f"p = {table.p}, amplitude = {table.amplitude}",
             f"{'N':>6} {'L2 error':>12} {'L2 EOC':>8} "
             f"{'H1 error':>12} {'H1 EOC':>8}"]
    for r in table.rows:
        if r.failed:
            lines.append(f"{r.n:>6} {'FAILED':>12}")
            continue
        lines.append(f"{r.n:>6} {r.l2_error:>12.4e} {fmt(r.l2_eoc)} "
                     f"{r.h1_error:>12.4e} {fmt(r.h1_eoc)}")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write EOC table {path!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Flat key=value configuration files
# ---------------------------------------------------------------------------

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False, "on": True, "off": False}

_FIELD_PARSERS = {
    "scenario": str, "cell_type": str, "tau_rule": str,
    "linear_solver": str, "sample_mode": str, "source_mode": str,
    "out_dir": str,
    "nx": int, "ny": int, "p": int, "seed": int,
    "pe": float, "cn": float, "tau": float, "t_end": float,
    "newton_tol": float, "amplitude": float,
}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "eta":
        return "auto" if raw == "auto" else float(raw)
    if key == "limiter":
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"cannot parse boolean {raw!r} for 'limiter'")
    if key == "snapshot_times":
        return tuple(float(t) for t in raw.split()) if raw else ()
    try:
        parser = _FIELD_PARSERS[key]
    except KeyError:
        raise ValueError(f"unknown configuration key {key!r}")
    return parser(raw)


def parse_config_text(text: str, overrides=()) -> ScenarioConfig:
    """Build a ScenarioConfig from key=value lines plus override strings.

    Lines starting with '#' and blank lines are ignored.  Overrides use the
    same key=value syntax and win over file entries.
    """
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must be key=value")
        key, _, raw = item.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw)
    return ScenarioConfig(**values)


def load_config(path, overrides=()) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config file {path!r}: {exc}") from exc
    return parse_config_text(text, overrides)


def write_config(cfg: ScenarioConfig, path) -> None:
    """Serialize a config in the same key=value format."""
    lines = []
    for key in _FIELD_PARSERS:
        lines.append(f"{key}={getattr(cfg, key)}")
    lines.append(f"eta={cfg.eta}")
    lines.append(f"limiter={'true' if cfg.limiter else 'false'}")
    lines.append("snapshot_times="
                 + " ".join(repr(t) for t in cfg.snapshot_times))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def resolve_out_dir(cfg: ScenarioConfig, env=os.environ) -> str:
    """Output directory, overridable through CHDG_OUT_DIR."""
    return env.get("CHDG_OUT_DIR", cfg.out_dir)
