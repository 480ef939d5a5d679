"""Legacy ASCII VTK output (and a matching reader) for triangle meshes.

One unstructured-grid file per snapshot: triangle cells, any number of
scalar CELL_DATA and POINT_DATA arrays.  Floats are written with full
precision (repr), so a written file reads back bit-identically; the reader
only understands the subset this writer produces, which is all the tests
need.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh

__all__ = ["write_vtk", "read_vtk"]

_VTK_TRIANGLE = 5


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vtk(path, mesh: TriMesh, cell_data=None, point_data=None,
              title: str = "snapshot") -> None:
    """Write mesh plus named scalar fields to a legacy ASCII VTK file."""
    cell_data = cell_data or {}
    point_data = point_data or {}
    for name, arr in cell_data.items():
        if len(arr) != mesh.n_cells:
            raise ValueError(f"cell data {name!r} length mismatch")
    for name, arr in point_data.items():
        if len(arr) != mesh.n_vertices:
            raise ValueError(f"point data {name!r} length mismatch")

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{_fmt(x)} {_fmt(y)} 0.0\n")
        fh.write(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}\n")
        for i, j, k in mesh.cells:
            fh.write(f"3 {i} {j} {k}\n")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        fh.write(f"{_VTK_TRIANGLE}\n" * mesh.n_cells)
        if cell_data:
            fh.write(f"CELL_DATA {mesh.n_cells}\n")
            for name, arr in cell_data.items():
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                fh.writelines(f"{_fmt(v)}\n" for v in np.asarray(arr, dtype=float))
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, arr in point_data.items():
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                fh.writelines(f"{_fmt(v)}\n" for v in np.asarray(arr, dtype=float))


def read_vtk(path):
    """Read a file written by write_vtk.

    Returns (points (nv, 2), cells (nc, 3), cell_data dict, point_data dict).
    """
    with open(path) as fh:
        lines = fh.read().splitlines()

    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ValueError(f"unexpected end of VTK file {path}")
        line = lines[pos]
        pos += 1
        return line

    header = next_line()
    if not header.startswith("# vtk DataFile"):
        raise ValueError(f"{path} is not a legacy VTK file")
    next_line()  # title
    if next_line().strip() != "ASCII":
        raise ValueError("only ASCII VTK files are supported")
    if next_line().split() != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise ValueError("only unstructured grids are supported")

    tag, nv, _ = next_line().split()
    assert tag == "POINTS"
    nv = int(nv)
    pts = np.array([next_line().split() for _ in range(nv)], dtype=float)[:, :2]

    tag, nc, _ = next_line().split()
    assert tag == "CELLS"
    nc = int(nc)
    cells = np.array([next_line().split()[1:] for _ in range(nc)], dtype=np.int64)

    tag, n = next_line().split()
    assert tag == "CELL_TYPES"
    for _ in range(int(n)):
        next_line()

    cell_data: dict[str, np.ndarray] = {}
    point_data: dict[str, np.ndarray] = {}
    section = None
    size = 0
    while pos < len(lines):
        stripped = lines[pos].strip()
        if not stripped:
            pos += 1
            continue
        parts = next_line().split()
        if parts[0] == "CELL_DATA":
            section, size = cell_data, int(parts[1])
        elif parts[0] == "POINT_DATA":
            section, size = point_data, int(parts[1])
        elif parts[0] == "SCALARS":
            name = parts[1]
            next_line()  # LOOKUP_TABLE
            vals = np.array([next_line() for _ in range(size)], dtype=float)
            section[name] = vals
        else:
            raise ValueError(f"unsupported VTK section {parts[0]!r}")
    return pts, cells, cell_data, point_data
