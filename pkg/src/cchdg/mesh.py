"""Conforming 2D triangular meshes with oriented edge topology.

Vertices are an (nv, 2) float array and cells an (nc, 3) integer array with
counterclockwise ordering.  Every interior edge stores the pair of cells
(K, L) it separates together with a unit normal pointing from K into L;
boundary edges store their single cell and the outward unit normal.  The
upwind edge terms rely on this orientation, so it is established and checked
at construction time.

Mesh file format (read_mesh / write_mesh): whitespace-delimited ASCII with
'#' comments.  First line "nv nc", then nv lines "x y", then nc lines
"i j k" with 0-based vertex indices.  Clockwise triangles are accepted and
reoriented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeshError",
    "TriMesh",
    "build_tri_mesh",
    "build_rect_mesh",
    "build_disk_mesh",
    "read_mesh",
    "write_mesh",
]


class MeshError(ValueError):
    """Invalid mesh file or broken mesh topology/geometry."""


@dataclass(frozen=True)
class TriMesh:
    """Triangulation with precomputed edge topology and geometry.

    Immutable after construction (arrays are marked read-only), so a mesh
    can be shared freely between solvers and threads.
    """

    vertices: np.ndarray        # (nv, 2)
    cells: np.ndarray           # (nc, 3) int, counterclockwise
    cell_areas: np.ndarray      # (nc,)
    cell_centroids: np.ndarray  # (nc, 2)
    # interior edges
    edge_cells: np.ndarray      # (ne, 2) int, columns (K, L)
    edge_vertices: np.ndarray   # (ne, 2) int endpoints
    edge_normals: np.ndarray    # (ne, 2) unit normal, exterior to K pointing into L
    edge_lengths: np.ndarray    # (ne,)
    # boundary edges
    bedge_cell: np.ndarray      # (nb,) int
    bedge_vertices: np.ndarray  # (nb, 2) int
    bedge_normals: np.ndarray   # (nb, 2) outward unit normal
    bedge_lengths: np.ndarray   # (nb,)
    h: float                    # max over cells of the longest edge

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_interior_edges(self) -> int:
        return self.edge_cells.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.bedge_cell.shape[0]

    @property
    def area(self) -> float:
        return float(self.cell_areas.sum())


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def build_tri_mesh(vertices, cells, *, check_hanging: bool = False) -> TriMesh:
    """Assemble a TriMesh from raw vertex/cell arrays.

    Reorients clockwise cells, derives the interior/boundary edge topology
    and rejects degenerate or non-conforming input.  `check_hanging` adds an
    O(nb * nv) scan for vertices sitting on the interior of a boundary edge
    (T-junctions); generators never produce those, so it is only switched on
    when reading meshes from files.
    """
    V = np.array(vertices, dtype=float)
    C = np.array(cells, dtype=np.int64)
    if V.ndim != 2 or V.shape[1] != 2:
        raise MeshError("vertices must be an (nv, 2) array")
    if C.ndim != 2 or C.shape[1] != 3:
        raise MeshError("cells must be an (nc, 3) array")
    nv, nc = len(V), len(C)
    if nc == 0:
        raise MeshError("mesh has no cells")
    if C.min() < 0 or C.max() >= nv:
        raise MeshError("cell vertex index out of range")

    p0, p1, p2 = V[C[:, 0]], V[C[:, 1]], V[C[:, 2]]
    twice_area = _cross2(p1 - p0, p2 - p0)
    flip = twice_area < 0
    C[flip] = C[flip][:, [0, 2, 1]]
    twice_area = np.abs(twice_area)

    scale = max(np.ptp(V[:, 0]), np.ptp(V[:, 1]))
    if np.any(twice_area <= 1e-14 * scale * scale):
        bad = int(np.argmin(twice_area))
        raise MeshError(f"zero-area cell {bad}: vertices {C[bad].tolist()}")
    areas = 0.5 * twice_area
    centroids = (V[C[:, 0]] + V[C[:, 1]] + V[C[:, 2]]) / 3.0

    keys = np.sort(C, axis=1)
    if len(np.unique(keys, axis=0)) < nc:
        raise MeshError("non-conforming mesh: duplicate cell")

    # edge table: three local edges per cell, keyed by sorted vertex pair
    E_all = C[:, [0, 1, 1, 2, 2, 0]].reshape(3 * nc, 2)
    cell_of = np.repeat(np.arange(nc), 3)
    ekeys = np.sort(E_all, axis=1)
    uniq, inverse, counts = np.unique(
        ekeys, axis=0, return_inverse=True, return_counts=True
    )
    if counts.max() > 2:
        raise MeshError("non-conforming mesh: edge shared by more than two cells")

    order = np.argsort(inverse, kind="stable")
    grouped_cells = cell_of[order]  # cells grouped per unique edge, lower index first
    starts = np.concatenate(([0], np.cumsum(counts)))

    interior_mask = counts == 2
    int_ids = np.nonzero(interior_mask)[0]
    bnd_ids = np.nonzero(~interior_mask)[0]

    K = grouped_cells[starts[int_ids]]
    L = grouped_cells[starts[int_ids] + 1]
    swap = K > L
    K[swap], L[swap] = L[swap], K[swap]
    edge_vertices = uniq[int_ids]
    bedge_cell = grouped_cells[starts[bnd_ids]]
    bedge_vertices = uniq[bnd_ids]

    def _unit_normals(pairs):
        t = V[pairs[:, 1]] - V[pairs[:, 0]]
        lengths = np.hypot(t[:, 0], t[:, 1])
        n = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
        return n, lengths

    edge_normals, edge_lengths = _unit_normals(edge_vertices)
    d = centroids[L] - centroids[K]
    sgn = np.sign(np.einsum("ij,ij->i", edge_normals, d))
    if np.any(sgn == 0):
        raise MeshError("degenerate interior edge: coincident cell centroids")
    edge_normals *= sgn[:, None]

    bedge_normals, bedge_lengths = _unit_normals(bedge_vertices)
    mids = 0.5 * (V[bedge_vertices[:, 0]] + V[bedge_vertices[:, 1]])
    d = mids - centroids[bedge_cell]
    sgn = np.sign(np.einsum("ij,ij->i", bedge_normals, d))
    if np.any(sgn == 0):
        raise MeshError("degenerate boundary edge")
    bedge_normals *= sgn[:, None]

    if check_hanging:
        _check_hanging_vertices(V, bedge_vertices, scale)

    all_lengths = np.hypot(*(V[ekeys[:, 1]] - V[ekeys[:, 0]]).T)
    h = float(all_lengths.max())

    mesh = TriMesh(
        vertices=V,
        cells=C,
        cell_areas=areas,
        cell_centroids=centroids,
        edge_cells=np.column_stack([K, L]),
        edge_vertices=edge_vertices,
        edge_normals=edge_normals,
        edge_lengths=edge_lengths,
        bedge_cell=bedge_cell,
        bedge_vertices=bedge_vertices,
        bedge_normals=bedge_normals,
        bedge_lengths=bedge_lengths,
        h=h,
    )
    for arr in (mesh.vertices, mesh.cells, mesh.cell_areas, mesh.cell_centroids,
                mesh.edge_cells, mesh.edge_vertices, mesh.edge_normals,
                mesh.edge_lengths, mesh.bedge_cell, mesh.bedge_vertices,
                mesh.bedge_normals, mesh.bedge_lengths):
        arr.setflags(write=False)
    return mesh


def _check_hanging_vertices(V, bedge_vertices, scale):
    tol = 1e-12 * max(scale, 1.0)
    for a_idx, b_idx in bedge_vertices:
        a, b = V[a_idx], V[b_idx]
        t = b - a
        L2 = t @ t
        rel = V - a
        s = (rel @ t) / L2
        dist = np.abs(_cross2(np.broadcast_to(t, rel.shape), rel)) / np.sqrt(L2)
        hit = (s > 1e-10) & (s < 1.0 - 1e-10) & (dist < tol)
        if np.any(hit):
            v = int(np.nonzero(hit)[0][0])
            raise MeshError(
                f"non-conforming mesh: hanging vertex {v} on edge "
                f"({a_idx}, {b_idx})"
            )


def build_rect_mesh(nx: int, ny: int, corners=((0.0, 0.0), (1.0, 1.0))) -> TriMesh:
    """Structured triangulation of a rectangle.

    Each of the nx*ny quads is split along the same (lower-left to
    upper-right) diagonal, which makes refinements by doubling nx and ny
    nested: every fine cell lies inside exactly one coarse cell.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    (xa, ya), (xb, yb) = corners
    x0, x1 = sorted((float(xa), float(xb)))
    y0, y1 = sorted((float(ya), float(yb)))
    if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
        raise MeshError("degenerate rectangle")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])
    return build_tri_mesh(V, cells)


def build_disk_mesh(n_rings: int, n_sectors: int) -> TriMesh:
    """Polar triangulation of the unit disk.

    Ring i (radius i/n_rings) carries roughly n_sectors*i/n_rings vertices so
    cells stay close to equilateral; consecutive rings are stitched with a
    deterministic angular merge.  The result is a conforming polygonal
    approximation of the disk whose area tends to pi at rate O(h^2).
    """
    if n_rings < 1:
        raise ValueError("n_rings must be >= 1")
    if n_sectors < 3:
        raise ValueError("n_sectors must be >= 3")

    counts = [max(3, int(round(n_sectors * i / n_rings))) for i in range(1, n_rings + 1)]
    verts = [np.zeros((1, 2))]
    ring_start = []
    offset = 1
    for i, S in enumerate(counts, start=1):
        r = i / n_rings
        ring_start.append(offset)
        ang = 2.0 * np.pi * np.arange(S) / S
        verts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
        offset += S
    V = np.vstack(verts)

    cells = []
    S0 = counts[0]
    for j in range(S0):
        cells.append((0, ring_start[0] + j, ring_start[0] + (j + 1) % S0))
    for ring in range(n_rings - 1):
        cells.extend(
            _zip_rings(ring_start[ring], counts[ring],
                       ring_start[ring + 1], counts[ring + 1])
        )
    return build_tri_mesh(V, np.array(cells, dtype=np.int64))


def _zip_rings(in_base, s_in, out_base, s_out):
    """Triangulate the annulus strip between two vertex rings.

    Walks both rings by increasing angle, always advancing the pointer whose
    next vertex comes first; ties go to the outer ring so aligned rings get
    a consistent diagonal pattern.
    """
    tris = []
    a = b = 0
    while a < s_in or b < s_out:
        next_in = (a + 1) / s_in
        next_out = (b + 1) / s_out
        if b < s_out and (a == s_in or next_out <= next_in + 1e-12):
            tris.append((in_base + a % s_in, out_base + b, out_base + (b + 1) % s_out))
            b += 1
        else:
            tris.append((out_base + b % s_out, in_base + (a + 1) % s_in, in_base + a))
            a += 1
    return tris


def read_mesh(path) -> TriMesh:
    """Read a mesh file (see module docstring for the format)."""
    tokens = []
    try:
        with open(path) as fh:
            for line in fh:
                tokens.extend(line.split("#", 1)[0].split())
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc

    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshError(f"parse error in {path}: unexpected end of file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    try:
        nv, nc = (int(t) for t in take(2))
        if nv < 3 or nc < 1:
            raise MeshError(f"parse error in {path}: bad counts nv={nv} nc={nc}")
        V = np.array([float(t) for t in take(2 * nv)]).reshape(nv, 2)
        C = np.array([int(t) for t in take(3 * nc)], dtype=np.int64).reshape(nc, 3)
    except ValueError as exc:
        raise MeshError(f"parse error in {path}: {exc}") from exc
    if pos != len(tokens):
        raise MeshError(f"parse error in {path}: trailing data")
    return build_tri_mesh(V, C, check_hanging=True)


def write_mesh(path, mesh: TriMesh) -> None:
    """Write a mesh in the format read_mesh understands."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        for i, j, k in mesh.cells:
            fh.write(f"{i} {j} {k}\n")
