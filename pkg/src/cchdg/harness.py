"""Experiment presets, diagnostics, convergence studies and file output.

Experiments are described by a single JSON document (see ExperimentConfig);
unknown keys are rejected so silently misspelled options cannot change a
run.  Each run writes one diagnostics CSV row per step (plus the initial
row) and optional legacy-VTK snapshots.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from . import cch, fespace, transport, vtkio
from .mesh import TriMesh, build_disk_mesh, build_rect_mesh, read_mesh

__all__ = [
    "ConfigError",
    "SolverFailure",
    "DiagnosticsRecord",
    "CSV_HEADER",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
    "ic_two_circles",
    "ic_random_spinodal",
    "ic_gaussian_bump",
    "velocity_preset",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "build_mesh",
    "build_initial_field",
    "build_velocity",
    "run_experiment",
    "ConvergenceRow",
    "ConvergenceTable",
    "convergence_study",
]


class ConfigError(ValueError):
    """Bad experiment configuration (unknown keys, missing files, ...)."""


class SolverFailure(RuntimeError):
    """A run aborted mid-way; partial diagnostics were written."""

    def __init__(self, message, step, cause):
        super().__init__(message)
        self.step = step
        self.cause = cause


# ---------------------------------------------------------------------------
# diagnostics

CSV_HEADER = "step,time,min_u,max_u,mass,energy,dynamics,newton_iters,residual"


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    min_u: float
    max_u: float
    mass: float
    energy: float
    dynamics: float          # |u_new - u_old|_inf / |u_old|_inf
    newton_iters: int
    residual: float

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.time:.16e},{self.min_u:.16e},{self.max_u:.16e},"
            f"{self.mass:.16e},{self.energy:.16e},{self.dynamics:.16e},"
            f"{self.newton_iters},{self.residual:.16e}"
        )


def write_diagnostics_csv(path, records) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def read_diagnostics_csv(path):
    records = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected diagnostics header in {path}")
        for line in fh:
            if not line.strip():
                continue
            parts = line.split(",")
            records.append(DiagnosticsRecord(
                step=int(parts[0]),
                time=float(parts[1]),
                min_u=float(parts[2]),
                max_u=float(parts[3]),
                mass=float(parts[4]),
                energy=float(parts[5]),
                dynamics=float(parts[6]),
                newton_iters=int(parts[7]),
                residual=float(parts[8]),
            ))
    return records


# ---------------------------------------------------------------------------
# initial conditions and velocity presets

def ic_two_circles(centers, radius: float, eps: float):
    """Two diffuse circular inclusions as a pointwise function.

    Each circle contributes (tanh((radius - dist)/(sqrt(2) eps)) + 1)/2, the
    standard interface profile of width O(eps); the sum stays within [0, 1]
    for non-overlapping circles up to rounding (cell averages are clamped
    after projection).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = [np.asarray(c, dtype=float) for c in centers]
    scale = math.sqrt(2.0) * eps

    def f(x, y):
        total = np.zeros_like(np.asarray(x, dtype=float))
        for c in centers:
            d = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2)
            total = total + 0.5 * (np.tanh((radius - d) / scale) + 1.0)
        return total

    return f


def ic_random_spinodal(mesh: TriMesh, seed: int, mean: float = 0.5,
                       amplitude: float = 0.01) -> np.ndarray:
    """Per-cell i.i.d. uniform values in [mean - amplitude, mean + amplitude]."""
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    rng = np.random.default_rng(seed)
    return rng.uniform(mean - amplitude, mean + amplitude, size=mesh.n_cells)


def ic_gaussian_bump(center, width: float, amplitude: float = 1.0):
    """Smooth nonnegative bump, handy as transport initial data."""
    cx, cy = center

    def f(x, y):
        return amplitude * np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / width ** 2))

    return f


def velocity_preset(preset_id: str, **params):
    """Pointwise velocity field by name: 'zero' or 'rotation' (omega, center)."""
    if preset_id == "zero":
        if params:
            raise ConfigError("velocity preset 'zero' takes no parameters")

        def zero(x, y):
            z = np.zeros_like(np.asarray(x, dtype=float))
            return z, z.copy()

        return zero
    if preset_id == "rotation":
        omega = float(params.pop("omega", 1.0))
        cx, cy = params.pop("center", (0.0, 0.0))
        if params:
            raise ConfigError(f"unknown rotation parameters: {sorted(params)}")

        def rotation(x, y):
            return omega * (np.asarray(y, dtype=float) - cy), -omega * (
                np.asarray(x, dtype=float) - cx
            )

        return rotation
    raise ConfigError(f"unknown velocity preset {preset_id!r}")


# ---------------------------------------------------------------------------
# experiment configuration

def _take(d: dict, context: str, required=(), optional=None):
    """Pop known keys from a config dict, rejecting anything unknown."""
    optional = optional or {}
    out = {}
    d = dict(d)
    for key in required:
        if key not in d:
            raise ConfigError(f"{context}: missing required key {key!r}")
        out[key] = d.pop(key)
    for key, default in optional.items():
        out[key] = d.pop(key, default)
    if d:
        raise ConfigError(f"{context}: unknown keys {sorted(d)}")
    return out


@dataclass
class ExperimentConfig:
    kind: str                    # "cch" or "transport"
    t_final: float
    mesh: dict
    initial: dict
    velocity: dict
    solver: object               # CCHConfig or TransportConfig
    scheme: str = "linear"       # transport only: "linear" or "truncated"
    seed: int = 0
    vtk_every: int | None = None
    csv: str = "diagnostics.csv"


def parse_config(doc: dict) -> ExperimentConfig:
    top = _take(
        doc, "config",
        required=("kind", "t_final", "mesh", "initial", "velocity", "solver"),
        optional={"seed": 0, "output": {}, "scheme": "linear"},
    )
    kind = top["kind"]
    if kind not in ("cch", "transport"):
        raise ConfigError(f"config: kind must be 'cch' or 'transport', got {kind!r}")
    if top["t_final"] < 0:
        raise ConfigError("config: t_final must be nonnegative")

    mesh_spec = dict(top["mesh"])
    mtype = mesh_spec.get("type")
    if mtype == "rect":
        _take(mesh_spec, "mesh", required=("type", "nx", "ny"),
              optional={"corners": [[0.0, 0.0], [1.0, 1.0]]})
    elif mtype == "disk":
        _take(mesh_spec, "mesh", required=("type", "n_rings", "n_sectors"))
    elif mtype == "file":
        checked = _take(mesh_spec, "mesh", required=("type", "path"))
        if not os.path.exists(checked["path"]):
            raise ConfigError(f"mesh: file {checked['path']!r} does not exist")
    else:
        raise ConfigError(f"mesh: unknown type {mtype!r}")

    init_spec = dict(top["initial"])
    itype = init_spec.get("type")
    if itype == "two_circles":
        _take(init_spec, "initial", required=("type", "centers", "radius"),
              optional={"eps": None})
    elif itype == "spinodal":
        _take(init_spec, "initial", required=("type",),
              optional={"mean": 0.5, "amplitude": 0.01})
    elif itype == "constant":
        _take(init_spec, "initial", required=("type", "value"))
    elif itype == "gaussian":
        _take(init_spec, "initial", required=("type", "center", "width"),
              optional={"amplitude": 1.0})
    else:
        raise ConfigError(f"initial: unknown type {itype!r}")

    vel_spec = dict(top["velocity"])
    vtype = vel_spec.get("type")
    if vtype == "zero":
        _take(vel_spec, "velocity", required=("type",))
    elif vtype == "rotation":
        _take(vel_spec, "velocity", required=("type", "omega"),
              optional={"center": [0.0, 0.0]})
    else:
        raise ConfigError(f"velocity: unknown type {vtype!r}")

    if kind == "cch":
        allowed = {f.name for f in dc_fields(cch.CCHConfig)}
        solver_args = _take(dict(top["solver"]), "solver",
                            required=("eps", "dt"),
                            optional={k: None for k in allowed - {"eps", "dt"}})
        solver_args = {k: v for k, v in solver_args.items() if v is not None}
        try:
            solver = cch.CCHConfig(**solver_args)
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc
    else:
        allowed = {f.name for f in dc_fields(transport.TransportConfig)}
        solver_args = _take(dict(top["solver"]), "solver", required=("dt",),
                            optional={k: None for k in allowed - {"dt"}})
        solver_args = {k: v for k, v in solver_args.items() if v is not None}
        try:
            solver = transport.TransportConfig(**solver_args)
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc
    if top["scheme"] not in ("linear", "truncated"):
        raise ConfigError(f"config: unknown transport scheme {top['scheme']!r}")

    out_spec = _take(dict(top["output"]), "output",
                     optional={"vtk_every": None, "csv": "diagnostics.csv"})
    if out_spec["vtk_every"] is not None and int(out_spec["vtk_every"]) < 1:
        raise ConfigError("output: vtk_every must be >= 1")

    return ExperimentConfig(
        kind=kind,
        t_final=float(top["t_final"]),
        mesh=dict(top["mesh"]),
        initial=dict(top["initial"]),
        velocity=dict(top["velocity"]),
        solver=solver,
        scheme=top["scheme"],
        seed=int(top["seed"]),
        vtk_every=None if out_spec["vtk_every"] is None else int(out_spec["vtk_every"]),
        csv=str(out_spec["csv"]),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return parse_config(doc)


def build_mesh(spec: dict) -> TriMesh:
    if spec["type"] == "rect":
        corners = spec.get("corners", [[0.0, 0.0], [1.0, 1.0]])
        return build_rect_mesh(int(spec["nx"]), int(spec["ny"]),
                               corners=(tuple(corners[0]), tuple(corners[1])))
    if spec["type"] == "disk":
        return build_disk_mesh(int(spec["n_rings"]), int(spec["n_sectors"]))
    return read_mesh(spec["path"])


def build_initial_field(spec: dict, mesh: TriMesh, seed: int,
                        default_eps: float | None = None) -> np.ndarray:
    kind = spec["type"]
    if kind == "two_circles":
        eps = spec.get("eps") or default_eps
        if eps is None:
            raise ConfigError("initial: two_circles needs 'eps' for transport runs")
        f = ic_two_circles(spec["centers"], float(spec["radius"]), float(eps))
        return np.clip(fespace.project_p0(mesh, f), 0.0, 1.0)
    if kind == "spinodal":
        return ic_random_spinodal(mesh, seed, mean=float(spec.get("mean", 0.5)),
                                  amplitude=float(spec.get("amplitude", 0.01)))
    if kind == "constant":
        return np.full(mesh.n_cells, float(spec["value"]))
    f = ic_gaussian_bump(tuple(spec["center"]), float(spec["width"]),
                         float(spec.get("amplitude", 1.0)))
    return fespace.project_p0(mesh, f)


def build_velocity(spec: dict):
    """Velocity callable from a config spec; None for the zero preset."""
    if spec["type"] == "zero":
        return None
    return velocity_preset("rotation", omega=float(spec["omega"]),
                           center=tuple(spec.get("center", (0.0, 0.0))))


# ---------------------------------------------------------------------------
# experiment runner

def _dynamics(u_new, u_prev) -> float:
    denom = float(np.max(np.abs(u_prev)))
    if denom == 0.0:
        return 0.0
    return float(np.max(np.abs(u_new - u_prev)) / denom)


def run_experiment(cfg: ExperimentConfig, output_dir=".", quiet: bool = True,
                   progress_every: int = 100):
    """Run a configured experiment, writing CSV diagnostics and VTK snapshots.

    Returns the list of DiagnosticsRecord.  On solver failure the partial
    diagnostics and a final state dump are written before SolverFailure is
    raised (the CLI maps it to exit code 3).
    """
    os.makedirs(output_dir, exist_ok=True)
    mesh = build_mesh(cfg.mesh)
    velocity = build_velocity(cfg.velocity)
    default_eps = cfg.solver.eps if cfg.kind == "cch" else None
    u = build_initial_field(cfg.initial, mesh, cfg.seed, default_eps=default_eps)

    dt = cfg.solver.dt
    n_steps = int(round(cfg.t_final / dt)) if cfg.t_final > 0 else 0
    csv_path = os.path.join(output_dir, cfg.csv)

    records: list[DiagnosticsRecord] = []

    def snapshot(step, u_field, mu=None, w=None):
        if cfg.vtk_every is None:
            return
        if step % cfg.vtk_every != 0 and step != n_steps:
            return
        point_data = {}
        if mu is not None:
            point_data["mu"] = mu
        if w is not None:
            point_data["w"] = w
        vtkio.write_vtk(os.path.join(output_dir, f"snap_{step}.vtk"), mesh,
                        cell_data={"u": u_field}, point_data=point_data,
                        title=f"step {step}")

    def log(msg):
        if not quiet:
            print(msg)

    if cfg.kind == "transport":
        def sink(rec):
            records.append(rec)
            if rec.step % progress_every == 0:
                log(f"step {rec.step:6d} t={rec.time:.6g} "
                    f"min={rec.min_u:.3e} max={rec.max_u:.3e}")

        try:
            trajectory = transport.run_transport(
                u, velocity or velocity_preset("zero"), cfg.t_final, mesh,
                cfg.solver, sink=sink, scheme=cfg.scheme)
        except (transport.LinearSolveFailed, transport.PicardDiverged) as exc:
            write_diagnostics_csv(csv_path, records)
            snapshot(len(records) - 1, u)
            raise SolverFailure(f"transport failed at step {len(records)}: {exc}",
                                step=len(records), cause=exc) from exc
        write_diagnostics_csv(csv_path, records)
        for step, field_m in enumerate(trajectory):
            snapshot(step, field_m)
        return records

    solver = cch.CCHSolver(mesh, cfg.solver, velocity=velocity)
    w = cch.regularized_phase(mesh, u, lumped=cfg.solver.lump_w)
    mu = np.zeros(mesh.n_vertices)
    records.append(DiagnosticsRecord(
        step=0, time=0.0, min_u=float(u.min()), max_u=float(u.max()),
        mass=mass0, energy=solver.energy(w), dynamics=0.0,
        newton_iters=0, residual=0.0,
    ))
    snapshot(0, u, mu, w)

    mu_prev = None
    w_prev = None
    time = 0.0
    for m in range(n_steps):
        try:
            state, stats = solver.step(u, mu_prev=mu_prev, w_prev=w_prev, time=time)
        except (cch.NewtonDiverged, cch.LinearSolveFailed, cch.BoundsViolated) as exc:
            write_diagnostics_csv(csv_path, records)
            snapshot(m, u, mu_prev, w_prev)
            raise SolverFailure(f"cch solve failed at step {m + 1}: {exc}",
                                step=m + 1, cause=exc) from exc
        records.append(DiagnosticsRecord(
            step=m + 1, time=state.time,
            min_u=float(state.u.min()), max_u=float(state.u.max()),
            mass=float(np.sum(mesh.cell_areas * state.u)),
            energy=solver.energy(state.w),
            dynamics=_dynamics(state.u, u),
            newton_iters=stats.iterations, residual=stats.residual_norm,
        ))
        u, mu_prev, w_prev, time = state.u, state.mu, state.w, state.time
        snapshot(m + 1, u, mu_prev, w_prev)
        if (m + 1) % progress_every == 0:
            rec = records[-1]
            log(f"step {rec.step:6d} t={rec.time:.6g} min={rec.min_u:.3e} "
                f"max={rec.max_u:.3e} E={rec.energy:.6e} its={rec.newton_iters}")

    write_diagnostics_csv(csv_path, records)
    return records


# ---------------------------------------------------------------------------
# convergence study

@dataclass
class ConvergenceRow:
    h: float
    err_l2_u: float
    order_l2_u: float
    err_l2_w: float
    order_l2_w: float
    err_h1_w: float
    order_h1_w: float
    degenerate: bool = False


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)
    reference_h: float = float("nan")

    def orders(self, which: str):
        return [getattr(r, f"order_{which}") for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("h,err_l2_u,order_l2_u,err_l2_w,order_l2_w,"
                     "err_h1_w,order_h1_w\n")
            for r in self.rows:
                fh.write(f"{r.h:.6e},{r.err_l2_u:.6e},{r.order_l2_u:.4f},"
                         f"{r.err_l2_w:.6e},{r.order_l2_w:.4f},"
                         f"{r.err_h1_w:.6e},{r.order_h1_w:.4f}\n")

    def to_markdown(self) -> str:
        lines = [
            "| h | L2(u) error | order | L2(w) error | order | H1(w) error | order |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.h:.4e} | {r.err_l2_u:.4e} | {r.order_l2_u:.2f} "
                f"| {r.err_l2_w:.4e} | {r.order_l2_w:.2f} "
                f"| {r.err_h1_w:.4e} | {r.order_h1_w:.2f} |"
            )
        return "\n".join(lines)


def _check_nested(meshes):
    """Every coarse vertex must reappear in the next finer mesh."""
    for coarse, fine in zip(meshes, meshes[1:]):
        tree_pts = {tuple(np.round(p, 12)) for p in fine.vertices}
        missing = [p for p in coarse.vertices if tuple(np.round(p, 12)) not in tree_pts]
        if missing:
            raise ValueError(
                f"meshes are not nested: h={coarse.h:.3e} vertex "
                f"{tuple(missing[0])} missing from the h={fine.h:.3e} mesh"
            )


def _run_cch_to_time(mesh, u0, velocity, cfg: cch.CCHConfig, t_final):
    solver = cch.CCHSolver(mesh, cfg, velocity=velocity)
    n_steps = int(round(t_final / cfg.dt))
    u, mu, w, t = u0, None, None, 0.0
    for _ in range(n_steps):
        state, _ = solver.step(u, mu_prev=mu, w_prev=w, time=t)
        u, mu, w, t = state.u, state.mu, state.w, state.time
    if w is None:
        w = cch.regularized_phase(mesh, u, lumped=cfg.lump_w)
    return u, w


def convergence_study(meshes, reference_mesh, make_initial, velocity,
                      cfg: cch.CCHConfig, t_final,
                      require_nested: bool = True) -> ConvergenceTable:
    """Self-convergence orders against a finer reference run.

    All runs share the time grid, so the measured differences isolate the
    spatial discretization.  Errors are sampled at the coarse meshes'
    interior quadrature points: the P0 phase against the reference phase
    (cell lookup), the regularized phase and its gradient by P1 evaluation
    on the reference mesh.  Orders follow from consecutive (h, error) pairs.

    make_initial(mesh) must return the projected initial phase.
    """
    if len(meshes) < 3:
        raise ValueError("need at least 3 mesh resolutions plus the reference")
    hs = [m.h for m in meshes]
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        raise ValueError("mesh resolutions must be strictly refining")
    if require_nested:
        _check_nested(list(meshes))

    u_ref, w_ref = _run_cch_to_time(reference_mesh, make_initial(reference_mesh),
                                    velocity, cfg, t_final)
    locator = fespace.CellLocator(reference_mesh)
    ref_grads = fespace.p1_basis_gradients(reference_mesh)

    rows = []
    prev = None
    for mesh in meshes:
        u, w = _run_cch_to_time(mesh, make_initial(mesh), velocity, cfg, t_final)
        pts, wts = fespace.cell_quadrature(mesh, rule="interior")
        flat_pts = pts.reshape(-1, 2)
        ref_cells = locator.locate(flat_pts)
        lam = locator.barycentric(ref_cells, flat_pts)

        u_ref_q = u_ref[ref_cells]
        w_ref_q = np.einsum("ni,ni->n", lam, w_ref[reference_mesh.cells[ref_cells]])
        gw_ref_q = np.einsum("ni,nid->nd", w_ref[reference_mesh.cells[ref_cells]],
                             ref_grads[ref_cells])

        u_q = np.repeat(u, 3)
        cell_bary = fespace._INTERIOR_BARY
        w_q = np.einsum("qi,ki->kq", cell_bary, w[mesh.cells]).ravel()
        gw = np.einsum("ki,kid->kd", w[mesh.cells], fespace.p1_basis_gradients(mesh))
        gw_q = np.repeat(gw, 3, axis=0)

        wq = wts.ravel()
        err_l2_u = float(np.sqrt(np.sum(wq * (u_q - u_ref_q) ** 2)))
        err_l2_w = float(np.sqrt(np.sum(wq * (w_q - w_ref_q) ** 2)))
        err_h1_w = float(np.sqrt(np.sum(wq * ((gw_q - gw_ref_q) ** 2).sum(axis=1))))

        def order(err, prev_err, prev_h):
            if prev_err is None:
                return float("nan")
            if err <= 0.0 or prev_err <= 0.0:
                return float("nan")
            return math.log(prev_err / err) / math.log(prev_h / mesh.h)

        degenerate = (err_l2_u == 0.0)
        rows.append(ConvergenceRow(
            h=mesh.h,
            err_l2_u=err_l2_u,
            order_l2_u=order(err_l2_u, prev and prev[1], prev and prev[0]),
            err_l2_w=err_l2_w,
            order_l2_w=order(err_l2_w, prev and prev[2], prev and prev[0]),
            err_h1_w=err_h1_w,
            order_h1_w=order(err_h1_w, prev and prev[3], prev and prev[0]),
            degenerate=degenerate,
        ))
        prev = (mesh.h, err_l2_u, err_l2_w, err_h1_w)
    return ConvergenceTable(rows=rows, reference_h=reference_mesh.h)
