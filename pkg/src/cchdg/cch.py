"""Fully discrete upwind DG scheme for the convective Cahn-Hilliard equation.

One implicit Euler step couples three unknowns: the P0 phase u, the P1
chemical potential mu and the P1 regularized phase w,

    (u - u_old, t)/dt + (1/Pe) a_upw(-grad mu; M(u)+, t) + a_upw(v; u, t) = 0
    (mu, p) = eps^2 (grad w, grad p) + (f(u, u_old), p)
    (w, q)  = (u, q)                 [optionally mass-lumped]

for P0 tests t and P1 tests p, q.  The potential is the quartic double well
truncated to quadratic growth outside [0, 1] and split convex/concave in
time (implicit convex part, explicit concave part), so f is linear in the
new iterate.  The coupled system is solved by a semismooth Newton method;
for phases starting in [0, 1] the converged step provably stays in [0, 1],
which is asserted after every solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import fespace
from .mesh import TriMesh
from .upwind import (
    mobility_split,
    mobility_split_derivatives,
    neg_part,
    pos_part,
    upwind_matrix,
    velocity_edge_flux,
)

__all__ = [
    "CCHConfig",
    "CCHState",
    "NewtonStats",
    "PotentialEval",
    "NewtonDiverged",
    "LinearSolveFailed",
    "BoundsViolated",
    "potential_F",
    "potential_F_convex",
    "potential_F_concave",
    "splitting_f",
    "evaluate_potential",
    "CCHSolver",
    "solve_timestep",
    "regularized_phase",
]


class NewtonDiverged(RuntimeError):
    def __init__(self, message, residual_norm=np.nan):
        super().__init__(message)
        self.residual_norm = residual_norm


class LinearSolveFailed(RuntimeError):
    def __init__(self, message, residual_norm=np.nan):
        super().__init__(message)
        self.residual_norm = residual_norm


class BoundsViolated(RuntimeError):
    """Converged step left the physical range [0, 1] beyond tolerance."""


@dataclass
class CCHConfig:
    eps: float                    # interface width parameter
    dt: float                     # time step
    pe: float = 1.0               # Peclet number; 1/pe scales the mobility flux
    newton_abs_tol: float = 1e-10
    newton_rel_tol: float = 1e-8
    newton_max_iter: int = 30
    lump_w: bool = True           # mass-lump the w projection (bounds carry to w)
    linear_tol: float = 1e-12

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.pe <= 0:
            raise ValueError("pe must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")


@dataclass
class CCHState:
    u: np.ndarray   # P0 phase
    mu: np.ndarray  # P1 chemical potential
    w: np.ndarray   # P1 regularized phase
    time: float


@dataclass
class NewtonStats:
    iterations: int
    residual_norm: float


# ---------------------------------------------------------------------------
# truncated double-well potential and its convex/concave split

def potential_F(u):
    """Double well (1/4) u^2 (1-u)^2 on [0, 1], extended quadratically.

    The extension keeps F nonnegative and C^2 across 0 and 1, so Newton
    never meets quartic growth outside the physical range.
    """
    u = np.asarray(u, dtype=float)
    inner = 0.25 * u * u * (1.0 - u) ** 2
    low = 0.25 * u * u
    high = 0.25 * (u - 1.0) ** 2
    return np.where(u < 0.0, low, np.where(u > 1.0, high, inner))


def potential_F_convex(u):
    """Convex part (3/8) u^2, treated implicitly."""
    u = np.asarray(u, dtype=float)
    return 0.375 * u * u


def potential_F_concave(u):
    """Concave remainder F - F_convex, treated explicitly."""
    u = np.asarray(u, dtype=float)
    inner = 0.25 * (u ** 4 - 2.0 * u ** 3 - 0.5 * u * u)
    low = -0.125 * u * u
    high = 0.25 * (1.0 - 2.0 * u - 0.5 * u * u)
    return np.where(u < 0.0, low, np.where(u > 1.0, high, inner))


def _concave_slope(u_old):
    u_old = np.asarray(u_old, dtype=float)
    inner = 4.0 * u_old ** 3 - 6.0 * u_old ** 2 - u_old
    low = -u_old
    high = -(u_old + 2.0)
    return np.where(u_old < 0.0, low, np.where(u_old > 1.0, high, inner))


def splitting_f(u_new, u_old):
    """Convex-implicit / concave-explicit approximation of F'.

    f(a, b) = F_convex'(a) + F_concave'(b) = (3/4) a + (1/4) g(b); linear in
    the new iterate, which is what makes the mu-equation rows of the Newton
    system constant.
    """
    u_new = np.asarray(u_new, dtype=float)
    return 0.75 * u_new + 0.25 * _concave_slope(u_old)


@dataclass
class PotentialEval:
    F: np.ndarray
    F_convex: np.ndarray
    F_concave: np.ndarray
    f: np.ndarray


def evaluate_potential(u_new, u_old) -> PotentialEval:
    return PotentialEval(
        F=potential_F(u_new),
        F_convex=potential_F_convex(u_new),
        F_concave=potential_F_concave(u_new),
        f=splitting_f(u_new, u_old),
    )


def regularized_phase(mesh: TriMesh, u, lumped: bool = True) -> np.ndarray:
    """P1 projection w of a P0 phase: (w, q) = (u, q) for all P1 tests q.

    With lumping, w at a vertex is the area-weighted average of the adjacent
    cell values and therefore inherits the bounds of u.
    """
    B = fespace.p0_p1_mass(mesh)
    rhs = B @ np.asarray(u, dtype=float)
    Mw = fespace.p1_mass(mesh, lumped=lumped)
    if lumped:
        return rhs / Mw.diagonal()
    return spla.spsolve(Mw.tocsc(), rhs)


# ---------------------------------------------------------------------------

class CCHSolver:
    """Coupled solver for one mesh/config/velocity combination.

    All constant operators (mass matrices, stiffness, the edge tables of the
    upwind forms and the linear convection matrix) are assembled once; each
    Newton iteration only rebuilds the two phase-dependent Jacobian blocks.
    """

    def __init__(self, mesh: TriMesh, cfg: CCHConfig, velocity=None):
        self.mesh = mesh
        self.cfg = cfg
        nc, nv = mesh.n_cells, mesh.n_vertices
        self.n_dofs = nc + 2 * nv

        self.Mp1 = fespace.p1_mass(mesh)
        self.S = fespace.p1_stiffness(mesh)
        self.B = fespace.p0_p1_mass(mesh)
        self.Mw = fespace.p1_mass(mesh, lumped=cfg.lump_w)
        if velocity is not None:
            self.flux_v = velocity_edge_flux(mesh, velocity)
            self.Av = upwind_matrix(mesh, self.flux_v)
        else:
            self.flux_v = None
            self.Av = None

        self.K = mesh.edge_cells[:, 0]
        self.L = mesh.edge_cells[:, 1]
        self.elen = mesh.edge_lengths

        # b_e = -({grad mu}.n_e) is linear in the vertex values of mu; its
        # coefficients live on the six vertices of the two adjacent cells
        g = fespace.p1_basis_gradients(mesh)
        n = mesh.edge_normals
        coef_K = -0.5 * np.einsum("eid,ed->ei", g[self.K], n)
        coef_L = -0.5 * np.einsum("eid,ed->ei", g[self.L], n)
        self._b_cols = np.hstack([mesh.cells[self.K], mesh.cells[self.L]])
        self._b_coef = np.hstack([coef_K, coef_L])

        # constant Jacobian blocks: mu and w equations are linear
        self._J_mu_u = (-0.75) * self.B
        self._J_mu_w = (-cfg.eps ** 2) * self.S

    # -- residual -----------------------------------------------------------

    def edge_direction(self, mu):
        """Edge-constant transport direction b_e = -({grad mu}.n_e)."""
        return np.einsum("ek,ek->e", self._b_coef, np.asarray(mu)[self._b_cols])

    def residual(self, u, mu, w, u_old):
        cfg = self.cfg
        b = self.edge_direction(mu)
        up, down = mobility_split(u)
        flux = self.elen * (
            pos_part(b) * (up[self.K] + down[self.L])
            - neg_part(b) * (up[self.L] + down[self.K])
        )
        r_u = self.mesh.cell_areas * (u - u_old) / cfg.dt
        scaled = flux / cfg.pe
        np.add.at(r_u, self.K, scaled)
        np.subtract.at(r_u, self.L, scaled)
        if self.Av is not None:
            r_u += self.Av @ u
        r_mu = self.Mp1 @ mu - cfg.eps ** 2 * (self.S @ w) - self.B @ splitting_f(u, u_old)
        r_w = self.Mw @ w - self.B @ u
        return np.concatenate([r_u, r_mu, r_w])

    # -- Jacobian -----------------------------------------------------------

    def jacobian(self, u, mu) -> sps.csc_matrix:
        cfg = self.cfg
        mesh = self.mesh
        nc = mesh.n_cells
        K, L = self.K, self.L

        b = self.edge_direction(mu)
        bp, bm = pos_part(b), neg_part(b)
        up, down = mobility_split(u)
        d_up, d_down = mobility_split_derivatives(u)
        scale = self.elen / cfg.pe

        dflux_duK = scale * (bp * d_up[K] - bm * d_down[K])
        dflux_duL = scale * (bp * d_down[L] - bm * d_up[L])
        rows = np.concatenate([K, K, L, L, np.arange(nc)])
        cols = np.concatenate([K, L, K, L, np.arange(nc)])
        data = np.concatenate([
            dflux_duK, dflux_duL, -dflux_duK, -dflux_duL,
            mesh.cell_areas / cfg.dt,
        ])
        J_uu = sps.coo_matrix((data, (rows, cols)), shape=(nc, nc)).tocsr()
        if self.Av is not None:
            J_uu = J_uu + self.Av

        # d(flux)/db with the x>0 convention for the parts of b
        dflux_db = scale * (
            (b > 0.0) * (up[K] + down[L]) + (b < 0.0) * (up[L] + down[K])
        )
        mu_rows = np.concatenate([
            np.repeat(K, self._b_cols.shape[1]),
            np.repeat(L, self._b_cols.shape[1]),
        ])
        mu_cols = np.concatenate([self._b_cols.ravel(), self._b_cols.ravel()])
        block = dflux_db[:, None] * self._b_coef
        mu_data = np.concatenate([block.ravel(), -block.ravel()])
        J_umu = sps.coo_matrix(
            (mu_data, (mu_rows, mu_cols)), shape=(nc, mesh.n_vertices)
        ).tocsr()

        return sps.bmat(
            [
                [J_uu, J_umu, None],
                [self._J_mu_u, self.Mp1, self._J_mu_w],
                [-self.B, None, self.Mw],
            ],
            format="csc",
        )

    # -- stepping -----------------------------------------------------------

    def step(self, u_old, mu_prev=None, w_prev=None, time: float = 0.0):
        """Advance one time level with Newton; returns (CCHState, NewtonStats).

        The initial guess is the previous time level (zeros at t=0).  After
        convergence the phase bounds are asserted: the scheme guarantees the
        exact discrete solution stays in [0, 1], so anything further out than
        10x the Newton tolerance is reported instead of silently accepted.
        """
        cfg = self.cfg
        nc, nv = self.mesh.n_cells, self.mesh.n_vertices
        u_old = np.asarray(u_old, dtype=float)
        u = u_old.copy()
        mu = np.zeros(nv) if mu_prev is None else np.array(mu_prev, dtype=float)
        w = np.zeros(nv) if w_prev is None else np.array(w_prev, dtype=float)

        r = self.residual(u, mu, w, u_old)
        norm0 = np.linalg.norm(r)
        norm_r = norm0
        iters = 0
        while norm_r > cfg.newton_abs_tol and norm_r > cfg.newton_rel_tol * norm0:
            if iters >= cfg.newton_max_iter:
                raise NewtonDiverged(
                    f"Newton did not converge in {cfg.newton_max_iter} iterations "
                    f"(|r|={norm_r:.3e})",
                    residual_norm=norm_r,
                )
            J = self.jacobian(u, mu)
            delta = spla.spsolve(J, -r)
            if not np.all(np.isfinite(delta)):
                raise LinearSolveFailed("Newton linear solve returned non-finite values",
                                        residual_norm=norm_r)
            lin_res = np.linalg.norm(J @ delta + r)
            if lin_res > cfg.linear_tol * max(norm_r, 1.0):
                raise LinearSolveFailed(
                    f"Newton linear solve residual {lin_res:.3e} exceeds tolerance",
                    residual_norm=norm_r,
                )
            u += delta[:nc]
            mu += delta[nc:nc + nv]
            w += delta[nc + nv:]
            r = self.residual(u, mu, w, u_old)
            norm_r = np.linalg.norm(r)
            iters += 1

        slack = 10.0 * cfg.newton_abs_tol
        if u.min() < -slack or u.max() > 1.0 + slack:
            raise BoundsViolated(
                f"phase left [0, 1]: min={u.min():.3e}, max={u.max():.3e}"
            )
        if cfg.lump_w and (w.min() < -slack or w.max() > 1.0 + slack):
            raise BoundsViolated(
                f"regularized phase left [0, 1]: min={w.min():.3e}, max={w.max():.3e}"
            )
        state = CCHState(u=u, mu=mu, w=w, time=time + cfg.dt)
        return state, NewtonStats(iterations=iters, residual_norm=float(norm_r))

    def step_semi_implicit(self, u_old, mu_prev, w_prev, time: float = 0.0):
        """Fallback step lagging the upwind coefficients by one level.

        The mobility flux is evaluated at (u_old, mu_prev), making the phase
        update a single sparse solve; mu and w then follow from their linear
        equations.  First order like the full scheme but without the bound
        guarantee, hence only used when Newton fails.
        """
        cfg = self.cfg
        u_old = np.asarray(u_old, dtype=float)
        b = self.edge_direction(mu_prev)
        up, down = mobility_split(u_old)
        flux = self.elen / cfg.pe * (
            pos_part(b) * (up[self.K] + down[self.L])
            - neg_part(b) * (up[self.L] + down[self.K])
        )
        rhs = np.zeros(self.mesh.n_cells)
        np.subtract.at(rhs, self.K, flux)
        np.add.at(rhs, self.L, flux)
        A = sps.diags(self.mesh.cell_areas / cfg.dt)
        if self.Av is not None:
            A = (A + self.Av).tocsc()
            u = spla.spsolve(A, rhs + self.mesh.cell_areas / cfg.dt * u_old)
        else:
            u = u_old + rhs / (self.mesh.cell_areas / cfg.dt)
        if cfg.lump_w:
            w = (self.B @ u) / self.Mw.diagonal()
        else:
            w = spla.spsolve(self.Mw.tocsc(), self.B @ u)
        rhs_mu = cfg.eps ** 2 * (self.S @ w) + self.B @ splitting_f(u, u_old)
        mu = spla.spsolve(self.Mp1.tocsc(), rhs_mu)
        return CCHState(u=u, mu=mu, w=w, time=time + cfg.dt), NewtonStats(0, np.nan)

    # -- diagnostics --------------------------------------------------------

    def energy(self, w) -> float:
        """Discrete free energy (eps^2/2) |grad w|^2 + integral of F(w).

        Evaluated on the regularized phase (the P0 phase has no gradient);
        the double well is integrated with the degree-2 edge-midpoint rule.
        """
        w = np.asarray(w, dtype=float)
        grad_term = 0.5 * self.cfg.eps ** 2 * float(w @ (self.S @ w))
        wc = w[self.mesh.cells]
        w_mid = 0.5 * (wc + wc[:, [1, 2, 0]])
        bulk = float(np.sum(self.mesh.cell_areas / 3.0 * potential_F(w_mid).sum(axis=1)))
        return grad_term + bulk


def solve_timestep(u_old, velocity, mesh: TriMesh, cfg: CCHConfig,
                   mu_prev=None, w_prev=None, time: float = 0.0):
    """Convenience one-shot step; builds a solver and advances one level."""
    solver = CCHSolver(mesh, cfg, velocity=velocity)
    return solver.step(u_old, mu_prev=mu_prev, w_prev=w_prev, time=time)
