"""Backward-Euler P0 solvers for linear conservative transport.

step_linear solves the untruncated scheme

    (M/dt + A_upw) u_new = (M/dt) u_old

in increment form, which keeps u_new == u_old bitwise when the velocity
vanishes.  step_truncated solves the positivity-truncated variant (transport
of max(u, 0)) by Picard iteration on the active set; on nonnegative data the
two coincide, which is how the truncated scheme inherits uniqueness from the
linear one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .mesh import TriMesh
from .upwind import EdgeFlux, upwind_matrix

__all__ = [
    "TransportConfig",
    "LinearSolveFailed",
    "PicardDiverged",
    "step_linear",
    "step_truncated",
    "run_transport",
]


class LinearSolveFailed(RuntimeError):
    def __init__(self, message, residual_norm=np.nan):
        super().__init__(message)
        self.residual_norm = residual_norm


class PicardDiverged(RuntimeError):
    def __init__(self, message, last_delta=np.nan):
        super().__init__(message)
        self.last_delta = last_delta


@dataclass
class TransportConfig:
    dt: float
    linear_tol: float = 1e-12
    picard_tol: float = 1e-12
    picard_max: int = 50

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("linear_tol", "picard_tol"):
            tol = getattr(self, name)
            if not 0.0 < tol < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")


def _solve_checked(A, rhs, tol, what):
    x = spla.spsolve(A.tocsc(), rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailed(f"{what}: non-finite solution")
    scale = np.linalg.norm(rhs)
    res = np.linalg.norm(A @ x - rhs)
    if scale > 0 and res > tol * scale:
        raise LinearSolveFailed(
            f"{what}: relative residual {res / scale:.3e} exceeds tolerance",
            residual_norm=res,
        )
    return x


def step_linear(u_old, flux: EdgeFlux, mesh: TriMesh, cfg: TransportConfig) -> np.ndarray:
    """One implicit Euler step of the linear upwind scheme."""
    u_old = np.asarray(u_old, dtype=float)
    A = upwind_matrix(mesh, flux)
    Mdt = sps.diags(mesh.cell_areas / cfg.dt)
    rhs = -(A @ u_old)
    if not np.any(rhs):
        return u_old.copy()
    delta = _solve_checked((Mdt + A).tocsc(), rhs, cfg.linear_tol, "transport step")
    return u_old + delta


def step_truncated(u_old, flux: EdgeFlux, mesh: TriMesh, cfg: TransportConfig) -> np.ndarray:
    """One implicit Euler step of the positivity-truncated upwind scheme.

    Picard iteration freezes the active set of the truncation, solves the
    resulting linear scheme and repeats until successive iterates agree to
    picard_tol in the max norm.  Requires nonnegative input, for which the
    converged result is nonnegative.
    """
    u_old = np.asarray(u_old, dtype=float)
    if u_old.min() < 0.0:
        raise ValueError("step_truncated requires a nonnegative field")
    z = step_linear(u_old, flux, mesh, cfg)
    if (z > 0.0).all():
        # full active set: the truncated and linear schemes coincide
        return z
    A = upwind_matrix(mesh, flux)
    Mdt = sps.diags(mesh.cell_areas / cfg.dt)
    rhs = Mdt @ u_old
    delta = np.inf
    for _ in range(cfg.picard_max):
        active = sps.diags((z > 0.0).astype(float))
        u = _solve_checked((Mdt + A @ active).tocsc(), rhs, cfg.linear_tol,
                           "truncated transport step")
        delta = np.max(np.abs(u - z))
        z = u
        if delta <= cfg.picard_tol:
            return z
    raise PicardDiverged(
        f"no fixed point after {cfg.picard_max} iterations (delta={delta:.3e})",
        last_delta=delta,
    )


def run_transport(u0, velocity, t_final, mesh: TriMesh, cfg: TransportConfig,
                  sink=None, scheme: str = "linear"):
    """March the transport scheme to t_final, returning the trajectory.

    velocity is a pointwise function (x, y) -> (vx, vy); its edge trace is
    built once.  Each step emits a DiagnosticsRecord through `sink` when
    given; the returned list includes the initial field, so t_final = 0
    yields just [u0].
    """
    from .harness import DiagnosticsRecord
    from .upwind import velocity_edge_flux

    if scheme not in ("linear", "truncated"):
        raise ValueError(f"unknown transport scheme {scheme!r}")
    u = np.asarray(u0, dtype=float).copy()
    n_steps = int(round(t_final / cfg.dt)) if t_final > 0 else 0
    flux = velocity_edge_flux(mesh, velocity)

    def record(step, time, u_new, u_prev):
        denom = np.max(np.abs(u_prev))
        dyn = float(np.max(np.abs(u_new - u_prev)) / denom) if denom > 0 else 0.0
        return DiagnosticsRecord(
            step=step,
            time=time,
            min_u=float(u_new.min()),
            max_u=float(u_new.max()),
            mass=float(np.sum(mesh.cell_areas * u_new)),
            energy=float("nan"),
            dynamics=dyn if step > 0 else 0.0,
            newton_iters=0,
            residual=0.0,
        )

    trajectory = [u.copy()]
    if sink is not None:
        sink(record(0, 0.0, u, u))
    step_fn = step_linear if scheme == "linear" else step_truncated
    for m in range(n_steps):
        u_new = step_fn(u, flux, mesh, cfg)
        if sink is not None:
            sink(record(m + 1, (m + 1) * cfg.dt, u_new, u))
        u = u_new
        trajectory.append(u.copy())
    return trajectory
