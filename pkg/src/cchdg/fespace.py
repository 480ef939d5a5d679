"""Operators for cellwise-constant (P0) and continuous piecewise-linear (P1) fields.

Field convention: a P0 field is a plain float array with one value per cell,
a P1 field one value per vertex.  Mass, stiffness and the mixed P0/P1 mass
are integrated exactly; the 3-point cell quadrature (degree-2 exact) is used
for projecting pointwise functions and for nonlinear integrands.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from .mesh import TriMesh

__all__ = [
    "p0_mass",
    "p1_mass",
    "p1_stiffness",
    "p0_p1_mass",
    "p1_basis_gradients",
    "p1_gradient_ops",
    "cell_quadrature",
    "project_p0",
    "norms",
    "CellLocator",
    "p1_eval_at",
    "p1_grad_at",
]

# barycentric coordinates of the two degree-2 exact 3-point rules
_MIDPOINT_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_INTERIOR_BARY = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])


def cell_vertex_coords(mesh: TriMesh) -> np.ndarray:
    """Vertex coordinates per cell, shape (nc, 3, 2)."""
    return mesh.vertices[mesh.cells]


def p0_mass(mesh: TriMesh) -> sps.csr_matrix:
    """Diagonal P0 mass matrix diag(|K|)."""
    return sps.diags(mesh.cell_areas).tocsr()


def p1_mass(mesh: TriMesh, lumped: bool = False) -> sps.csr_matrix:
    """Consistent P1 mass matrix, or its row-sum lumped diagonal."""
    if lumped:
        d = np.zeros(mesh.n_vertices)
        np.add.at(d, mesh.cells.ravel(), np.repeat(mesh.cell_areas / 3.0, 3))
        return sps.diags(d).tocsr()
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    data = mesh.cell_areas[:, None, None] * local
    rows = np.broadcast_to(mesh.cells[:, :, None], (mesh.n_cells, 3, 3))
    cols = np.broadcast_to(mesh.cells[:, None, :], (mesh.n_cells, 3, 3))
    M = sps.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return M.tocsr()


def p1_basis_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three barycentric basis functions per cell, (nc, 3, 2).

    For counterclockwise cells, grad(lambda_i) = perp(p_{i+2} - p_{i+1}) / (2|K|)
    with perp(x, y) = (-y, x).
    """
    P = cell_vertex_coords(mesh)
    e = P[:, [2, 0, 1], :] - P[:, [1, 2, 0], :]
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    return g / (2.0 * mesh.cell_areas)[:, None, None]


def p1_stiffness(mesh: TriMesh) -> sps.csr_matrix:
    """P1 stiffness matrix of grad.grad; symmetric, constants in the kernel."""
    g = p1_basis_gradients(mesh)
    local = np.einsum("kid,kjd->kij", g, g) * mesh.cell_areas[:, None, None]
    rows = np.broadcast_to(mesh.cells[:, :, None], local.shape)
    cols = np.broadcast_to(mesh.cells[:, None, :], local.shape)
    S = sps.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return S.tocsr()


def p0_p1_mass(mesh: TriMesh) -> sps.csr_matrix:
    """Mixed mass (nv x nc): integral of P1 test phi_i over cell K is |K|/3."""
    rows = mesh.cells.ravel()
    cols = np.repeat(np.arange(mesh.n_cells), 3)
    data = np.repeat(mesh.cell_areas / 3.0, 3)
    return sps.coo_matrix(
        (data, (rows, cols)), shape=(mesh.n_vertices, mesh.n_cells)
    ).tocsr()


def p1_gradient_ops(mesh: TriMesh):
    """Sparse operators (Gx, Gy), each (nc x nv), mapping a P1 field to its
    cellwise-constant gradient components."""
    g = p1_basis_gradients(mesh)
    rows = np.repeat(np.arange(mesh.n_cells), 3)
    cols = mesh.cells.ravel()
    shape = (mesh.n_cells, mesh.n_vertices)
    Gx = sps.coo_matrix((g[..., 0].ravel(), (rows, cols)), shape=shape).tocsr()
    Gy = sps.coo_matrix((g[..., 1].ravel(), (rows, cols)), shape=shape).tocsr()
    return Gx, Gy


def cell_quadrature(mesh: TriMesh, rule: str = "midpoint"):
    """Degree-2 exact 3-point cell quadrature.

    rule="midpoint" uses the edge midpoints (the default for projections and
    potential integrals); rule="interior" uses the (2/3, 1/6, 1/6) points,
    which never sit on mesh edges and so are safe for sampling cellwise
    quantities of another mesh.  Returns (points (nc, 3, 2), weights (nc, 3)).
    """
    if rule == "midpoint":
        B = _MIDPOINT_BARY
    elif rule == "interior":
        B = _INTERIOR_BARY
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    P = cell_vertex_coords(mesh)
    pts = np.einsum("qi,kid->kqd", B, P)
    wts = np.broadcast_to(mesh.cell_areas[:, None] / 3.0, (mesh.n_cells, 3)).copy()
    return pts, wts


def _eval_pointwise(f, X, Y):
    vals = np.asarray(f(X, Y), dtype=float)
    if vals.shape != X.shape:
        vals = np.broadcast_to(vals, X.shape).copy()
    return vals


def project_p0(mesh: TriMesh, f) -> np.ndarray:
    """Cell-average projection of a pointwise function (exact for quadratics)."""
    pts, _ = cell_quadrature(mesh)
    vals = _eval_pointwise(f, pts[..., 0], pts[..., 1])
    return vals.mean(axis=1)


def norms(field, mesh: TriMesh, space: str | None = None) -> dict:
    """L2, Linf and (for P1) H1-seminorm of a field.

    The space is inferred from the array length; pass space="p0"/"p1" when a
    mesh happens to have as many cells as vertices.
    """
    v = np.asarray(field, dtype=float)
    if space is None:
        if len(v) == mesh.n_cells and len(v) != mesh.n_vertices:
            space = "p0"
        elif len(v) == mesh.n_vertices and len(v) != mesh.n_cells:
            space = "p1"
        else:
            raise ValueError("ambiguous field length; pass space='p0' or 'p1'")
    out = {"linf": float(np.max(np.abs(v))) if len(v) else 0.0}
    if space == "p0":
        if len(v) != mesh.n_cells:
            raise ValueError("P0 field length does not match cell count")
        out["l2"] = float(np.sqrt(np.sum(mesh.cell_areas * v * v)))
    elif space == "p1":
        if len(v) != mesh.n_vertices:
            raise ValueError("P1 field length does not match vertex count")
        out["l2"] = float(np.sqrt(v @ (p1_mass(mesh) @ v)))
        out["h1_semi"] = float(np.sqrt(max(v @ (p1_stiffness(mesh) @ v), 0.0)))
    else:
        raise ValueError(f"unknown space {space!r}")
    return out


class CellLocator:
    """Point-to-cell lookup via nearest cell centroids.

    Candidate cells come from a KD-tree query over centroids with a growing
    neighbor count; the containing cell is the candidate with the largest
    minimum barycentric coordinate.  Points up to `tol` (absolute distance)
    outside the mesh are still accepted.
    """

    def __init__(self, mesh: TriMesh, tol: float = 1e-10):
        self.mesh = mesh
        self.tol = tol
        self._tree = cKDTree(mesh.cell_centroids)
        P = cell_vertex_coords(mesh)
        self._origin = P[:, 0, :]
        T = np.stack([P[:, 1, :] - P[:, 0, :], P[:, 2, :] - P[:, 0, :]], axis=-1)
        self._Tinv = np.linalg.inv(T)  # (nc, 2, 2)
        # tolerance in barycentric units: absolute tol over a local length scale
        self._bary_tol = tol / np.sqrt(mesh.cell_areas.min()) + 1e-12

    def barycentric(self, cells, points):
        """Barycentric coordinates of points (n, 2) in the given cells (n,)."""
        rel = points - self._origin[cells]
        lam12 = np.einsum("nij,nj->ni", self._Tinv[cells], rel)
        lam0 = 1.0 - lam12.sum(axis=1)
        return np.column_stack([lam0, lam12])

    def locate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        found = np.full(n, -1, dtype=np.int64)
        best = np.full(n, -np.inf)
        k = min(8, self.mesh.n_cells)
        while True:
            todo = np.nonzero(found < 0)[0]
            if len(todo) == 0:
                return found
            _, cand = self._tree.query(pts[todo], k=k)
            cand = np.atleast_2d(cand)
            for col in range(cand.shape[1]):
                cells = cand[:, col]
                lam = self.barycentric(cells, pts[todo])
                score = lam.min(axis=1)
                better = score > best[todo]
                ok = better & (score >= -self._bary_tol)
                found[todo[ok]] = cells[ok]
                best[todo[better]] = score[better]
            if k >= self.mesh.n_cells:
                bad = pts[found < 0][0]
                raise ValueError(f"point outside all cells: {tuple(bad)}")
            k = min(4 * k, self.mesh.n_cells)


def p1_eval_at(field, mesh: TriMesh, points, locator: CellLocator | None = None):
    """Evaluate a P1 field at arbitrary points by barycentric interpolation."""
    v = np.asarray(field, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    loc = locator if locator is not None else CellLocator(mesh)
    cells = loc.locate(pts)
    lam = loc.barycentric(cells, pts)
    return np.einsum("ni,ni->n", lam, v[mesh.cells[cells]])


def p1_grad_at(field, mesh: TriMesh, points, locator: CellLocator | None = None):
    """Cellwise-constant gradient of a P1 field sampled at points, (n, 2)."""
    v = np.asarray(field, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    loc = locator if locator is not None else CellLocator(mesh)
    cells = loc.locate(pts)
    g = p1_basis_gradients(mesh)
    return np.einsum("ni,nid->nd", v[mesh.cells[cells]], g[cells])
