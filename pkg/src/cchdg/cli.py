"""Command line interface.

Subcommands: run (coupled phase-field experiment), transport (linear
transport experiment), converge (self-convergence study) and mesh-info.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cch, harness, transport
from .mesh import MeshError, read_mesh


def _add_common(p):
    p.add_argument("--output-dir", default=".", help="directory for artifacts")
    p.add_argument("--seed", type=int, default=None,
                   help="override the RNG seed of the config")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cch",
        description="Upwind DG solver for the convective Cahn-Hilliard equation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a coupled phase-field experiment")
    p_run.add_argument("config", help="JSON experiment configuration")
    _add_common(p_run)

    p_tr = sub.add_parser("transport", help="run a linear transport experiment")
    p_tr.add_argument("config", help="JSON experiment configuration")
    _add_common(p_tr)

    p_cv = sub.add_parser("converge", help="run a self-convergence study")
    p_cv.add_argument("config", help="JSON study configuration")
    _add_common(p_cv)

    p_mi = sub.add_parser("mesh-info", help="print mesh statistics")
    p_mi.add_argument("meshfile", help="mesh file (see read_mesh format)")
    p_mi.add_argument("--quiet", action="store_true")
    return parser


def _run_experiment(args, expected_kind):
    cfg = harness.load_config(args.config)
    if cfg.kind != expected_kind:
        raise harness.ConfigError(
            f"config kind is {cfg.kind!r} but the subcommand expects "
            f"{expected_kind!r}"
        )
    if args.seed is not None:
        cfg.seed = args.seed
    records = harness.run_experiment(cfg, output_dir=args.output_dir,
                                     quiet=args.quiet)
    if not args.quiet:
        last = records[-1]
        print(f"done: {last.step} steps to t={last.time:.6g}, "
              f"min_u={last.min_u:.3e}, max_u={last.max_u:.3e}")
    return 0


def _parse_converge_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise harness.ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise harness.ConfigError(f"invalid JSON in {path}: {exc}") from exc
    top = harness._take(
        doc, "config",
        required=("kind", "t_final", "family", "initial", "velocity", "solver"),
        optional={"output": {}, "seed": 0},
    )
    if top["kind"] != "cch":
        raise harness.ConfigError("converge: only kind 'cch' is supported")
    fam = harness._take(
        dict(top["family"]), "family",
        required=("type", "base_nx", "base_ny"),
        optional={"corners": [[0.0, 0.0], [1.0, 1.0]],
                  "refinements": [1, 2, 4], "reference": 8},
    )
    if fam["type"] != "rect":
        raise harness.ConfigError("converge: only rect mesh families are supported")
    out = harness._take(dict(top["output"]), "output",
                        optional={"table_csv": "orders.csv"})
    solver_doc = {"kind": "cch", "t_final": top["t_final"],
                  "mesh": {"type": "rect", "nx": 1, "ny": 1},
                  "initial": top["initial"], "velocity": top["velocity"],
                  "solver": top["solver"]}
    parsed = harness.parse_config(solver_doc)
    return top, fam, out, parsed


def _converge(args):
    from .mesh import build_rect_mesh

    top, fam, out, parsed = _parse_converge_config(args.config)
    corners = (tuple(fam["corners"][0]), tuple(fam["corners"][1]))
    meshes = [build_rect_mesh(fam["base_nx"] * r, fam["base_ny"] * r, corners)
              for r in fam["refinements"]]
    reference = build_rect_mesh(fam["base_nx"] * fam["reference"],
                                fam["base_ny"] * fam["reference"], corners)
    seed = top["seed"] if args.seed is None else args.seed

    def make_initial(mesh):
        return harness.build_initial_field(top["initial"], mesh, seed,
                                           default_eps=parsed.solver.eps)

    velocity = harness.build_velocity(top["velocity"])
    table = harness.convergence_study(meshes, reference, make_initial, velocity,
                                      parsed.solver, top["t_final"])
    os.makedirs(args.output_dir, exist_ok=True)
    table.to_csv(os.path.join(args.output_dir, out["table_csv"]))
    if not args.quiet:
        print(table.to_markdown())
    return 0


def _mesh_info(args):
    mesh = read_mesh(args.meshfile)
    euler = mesh.n_vertices - (mesh.n_interior_edges + mesh.n_boundary_edges) \
        + mesh.n_cells
    print(f"vertices:       {mesh.n_vertices}")
    print(f"cells:          {mesh.n_cells}")
    print(f"interior edges: {mesh.n_interior_edges}")
    print(f"boundary edges: {mesh.n_boundary_edges}")
    print(f"h:              {mesh.h:.6e}")
    print(f"area:           {mesh.area:.12e}")
    print(f"euler (V-E+F):  {euler}")
    print(f"min cell area:  {mesh.cell_areas.min():.6e}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run_experiment(args, "cch")
        if args.command == "transport":
            return _run_experiment(args, "transport")
        if args.command == "converge":
            return _converge(args)
        return _mesh_info(args)
    except (harness.ConfigError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (harness.SolverFailure, cch.NewtonDiverged, cch.LinearSolveFailed,
            cch.BoundsViolated, transport.LinearSolveFailed,
            transport.PicardDiverged) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
