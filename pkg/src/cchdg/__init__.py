"""Bound-preserving upwind DG solver for the convective Cahn-Hilliard equation.

The pieces: `mesh` builds conforming triangulations with oriented edges,
`fespace` provides P0/P1 operators, `upwind` the monotone edge forms,
`transport` the linear bound-preserving transport scheme, `cch` the coupled
phase-field solver, and `harness` experiments, diagnostics and convergence
studies.  The `cch` console script drives everything from JSON configs.
"""

from .cch import (
    BoundsViolated,
    CCHConfig,
    CCHSolver,
    CCHState,
    LinearSolveFailed,
    NewtonDiverged,
    potential_F,
    regularized_phase,
    solve_timestep,
    splitting_f,
)
from .fespace import (
    CellLocator,
    norms,
    p0_mass,
    p1_eval_at,
    p1_mass,
    p1_stiffness,
    project_p0,
)
from .harness import (
    ConfigError,
    ConvergenceTable,
    DiagnosticsRecord,
    ExperimentConfig,
    convergence_study,
    ic_random_spinodal,
    ic_two_circles,
    load_config,
    run_experiment,
    velocity_preset,
)
from .mesh import MeshError, TriMesh, build_disk_mesh, build_rect_mesh, read_mesh, write_mesh
from .transport import PicardDiverged, TransportConfig, run_transport, step_linear, step_truncated
from .upwind import (
    EdgeFlux,
    MobilitySplit,
    assemble_upwind_generalized,
    assemble_upwind_linear,
    mobility,
    mobility_pos,
    mobility_split,
    neg_part,
    pos_part,
    velocity_edge_flux,
)

__version__ = "0.1.0"
