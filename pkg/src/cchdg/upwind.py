"""Upwind edge forms for cellwise-constant transport.

Two flavours are assembled against P0 test functions (for which the volume
term of the DG form vanishes identically):

* the linear form for a continuous velocity, donor-cell upwinded through the
  pointwise positive/negative parts of the velocity trace beta.n_e at the
  edge quadrature nodes;
* the generalized form for a degenerate mobility M(u) = u(1-u) transported
  by a discontinuous direction (in practice -grad(mu), averaged across the
  edge), where the nondecreasing part of the mobility is taken from the
  upwind cell and the nonincreasing part from the downwind cell.

Sign conventions: pos(x) = max(x, 0), neg(x) = -min(x, 0), so
x = pos(x) - neg(x) and |x| = pos(x) + neg(x).  Semismooth derivatives use
d pos(x)/dx = 1 only for x > 0; the kinks of the mobility split at
v in {0, 1/2, 1} take the left-limit branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sps

from .fespace import p1_basis_gradients
from .mesh import TriMesh

__all__ = [
    "pos_part",
    "neg_part",
    "mobility",
    "mobility_pos",
    "MobilitySplit",
    "mobility_split",
    "mobility_split_derivatives",
    "EdgeFlux",
    "velocity_edge_flux",
    "assemble_upwind_linear",
    "upwind_matrix",
    "edge_avg_gradient_normal",
    "generalized_edge_flux",
    "assemble_upwind_generalized",
]

# 2-point Gauss positions on [0, 1], degree-3 exact on edges
_GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def pos_part(x):
    """max(x, 0)."""
    return np.maximum(x, 0.0)


def neg_part(x):
    """-min(x, 0), so that pos_part(x) - neg_part(x) == x."""
    return np.maximum(-np.asarray(x), 0.0)


def mobility(v):
    """Degenerate mobility M(v) = v(1 - v), vanishing at the pure phases."""
    v = np.asarray(v)
    return v * (1.0 - v)


def mobility_pos(v):
    """Truncated mobility max(M(v), 0)."""
    return np.maximum(mobility(v), 0.0)


class MobilitySplit(NamedTuple):
    m_up: np.ndarray    # nondecreasing part, in [0, 1/4]
    m_down: np.ndarray  # nonincreasing part, in [-1/4, 0]


def mobility_split(v) -> MobilitySplit:
    """Monotone split of the truncated mobility.

    m_up(v) = max(M(v), 0) for v <= 1/2 and M(1/2) = 1/4 beyond;
    m_down(v) = 0 for v <= 1/2 and max(M(v), 0) - 1/4 beyond.
    By construction m_up + m_down = mobility_pos(v).
    """
    v = np.asarray(v, dtype=float)
    mp = mobility_pos(v)
    m_up = np.where(v <= 0.5, mp, 0.25)
    m_down = mp - m_up
    return MobilitySplit(m_up, m_down)


def mobility_split_derivatives(v):
    """Derivatives of (m_up, m_down); left-limit branch at the kinks."""
    v = np.asarray(v, dtype=float)
    slope = 1.0 - 2.0 * v
    d_up = np.where((v > 0.0) & (v <= 0.5), slope, 0.0)
    d_down = np.where((v > 0.5) & (v <= 1.0), slope, 0.0)
    return d_up, d_down


@dataclass(frozen=True)
class EdgeFlux:
    """Quadrature trace of a transport direction on the interior edges.

    values[e, q] holds beta.n_e at quadrature node q of edge e and
    weights[e, q] the matching quadrature weight; weights sum to the edge
    length.  Boundary edges never appear: the slip condition makes their
    flux vanish in the continuous model.
    """

    values: np.ndarray   # (ne, nq)
    weights: np.ndarray  # (ne, nq)

    def upwind_coefficients(self):
        """Per-edge integrals (c_plus, c_minus) of the positive/negative part
        of the trace; both are nonnegative."""
        c_plus = np.einsum("eq,eq->e", self.weights, pos_part(self.values))
        c_minus = np.einsum("eq,eq->e", self.weights, neg_part(self.values))
        return c_plus, c_minus

    def edge_integrals(self):
        """Per-edge integral of the raw trace."""
        return np.einsum("eq,eq->e", self.weights, self.values)


def velocity_edge_flux(mesh: TriMesh, v) -> EdgeFlux:
    """Trace v.n_e of an analytic velocity at 2-point Gauss nodes per edge."""
    a = mesh.vertices[mesh.edge_vertices[:, 0]]
    b = mesh.vertices[mesh.edge_vertices[:, 1]]
    pts = a[:, None, :] + _GAUSS2[None, :, None] * (b - a)[:, None, :]
    vx, vy = v(pts[..., 0], pts[..., 1])
    vx = np.broadcast_to(np.asarray(vx, dtype=float), pts[..., 0].shape)
    vy = np.broadcast_to(np.asarray(vy, dtype=float), pts[..., 0].shape)
    values = vx * mesh.edge_normals[:, None, 0] + vy * mesh.edge_normals[:, None, 1]
    weights = np.broadcast_to(
        mesh.edge_lengths[:, None] / 2.0, values.shape
    ).copy()
    return EdgeFlux(values=values, weights=weights)


def assemble_upwind_linear(mesh: TriMesh, flux: EdgeFlux, u) -> np.ndarray:
    """Residual of the linear upwind form against P0 indicator tests.

    Each interior edge contributes +integral((beta.n)+ u_K - (beta.n)- u_L)
    to its K cell and the negative to its L cell; entries therefore sum to
    zero, which is mass conservation.
    """
    u = np.asarray(u, dtype=float)
    if len(u) != mesh.n_cells:
        raise ValueError("field length does not match cell count")
    if flux.values.shape[0] != mesh.n_interior_edges:
        raise ValueError("flux does not match mesh interior edge count")
    c_plus, c_minus = flux.upwind_coefficients()
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1]
    edge_flux = c_plus * u[K] - c_minus * u[L]
    r = np.zeros(mesh.n_cells)
    np.add.at(r, K, edge_flux)
    np.subtract.at(r, L, edge_flux)
    return r


def upwind_matrix(mesh: TriMesh, flux: EdgeFlux) -> sps.csr_matrix:
    """Matrix of the linear upwind form on P0 (rows = test cells)."""
    c_plus, c_minus = flux.upwind_coefficients()
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1]
    rows = np.concatenate([K, K, L, L])
    cols = np.concatenate([K, L, K, L])
    data = np.concatenate([c_plus, -c_minus, -c_plus, c_minus])
    A = sps.coo_matrix((data, (rows, cols)), shape=(mesh.n_cells, mesh.n_cells))
    return A.tocsr()


def edge_avg_gradient_normal(mesh: TriMesh, field) -> np.ndarray:
    """Per-interior-edge value of {grad(field)}.n_e for a P1 field.

    The gradient is cellwise constant, so the edge average is the arithmetic
    mean of the two adjacent cell gradients and the result is constant along
    the edge.
    """
    v = np.asarray(field, dtype=float)
    if len(v) != mesh.n_vertices:
        raise ValueError("field length does not match vertex count")
    g = p1_basis_gradients(mesh)
    grad = np.einsum("ki,kid->kd", v[mesh.cells], g)
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1]
    avg = 0.5 * (grad[K] + grad[L])
    return np.einsum("ed,ed->e", avg, mesh.edge_normals)


def generalized_edge_flux(b, u_K, u_L):
    """Upwind mobility flux density for an edge-constant direction b.

    pos(b) (m_up(u_K) + m_down(u_L)) - neg(b) (m_up(u_L) + m_down(u_K));
    with u_K = u_L = v this collapses to b * mobility_pos(v) in magnitude.
    """
    up_K, down_K = mobility_split(u_K)
    up_L, down_L = mobility_split(u_L)
    return pos_part(b) * (up_K + down_L) - neg_part(b) * (up_L + down_K)


def assemble_upwind_generalized(mesh: TriMesh, mu, u, sign: float = -1.0) -> np.ndarray:
    """Residual of the generalized upwind form against P0 indicator tests.

    The transport direction is sign * grad(mu) averaged across each edge
    (sign=-1 gives the mobility flux driven by -grad(mu)); the volume term
    of the general form vanishes for P0 tests and is not assembled.
    """
    u = np.asarray(u, dtype=float)
    if len(u) != mesh.n_cells:
        raise ValueError("field length does not match cell count")
    b = sign * edge_avg_gradient_normal(mesh, mu)
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1]
    edge_flux = mesh.edge_lengths * generalized_edge_flux(b, u[K], u[L])
    r = np.zeros(mesh.n_cells)
    np.add.at(r, K, edge_flux)
    np.subtract.at(r, L, edge_flux)
    return r
