"""Mesh serialization: plain-text node/element/tag format and legacy VTK export."""

from __future__ import annotations

import numpy as np

from ..errors import MeshError
from .trimesh import TriMesh

__all__ = ["write_mesh", "read_mesh", "write_vtk"]

_FORMAT = "fincell-mesh 1"


def write_mesh(mesh: TriMesh, path) -> None:
    lines = [_FORMAT]
    lines.append(f"periodic {int(mesh.periodic_x)} {int(mesh.periodic_y)}")
    lines.append("domain " + " ".join(repr(float(v)) for v in mesh.domain))
    lines.append(f"h_target {mesh.h_target!r}")
    lines.append(f"nodes {mesh.n_nodes}")
    for x, y in mesh.nodes:
        lines.append(f"{x!r} {y!r}")
    lines.append(f"triangles {mesh.n_triangles}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    for (a, b), p, t, f in zip(
        mesh.boundary_edges, mesh.boundary_parent, mesh.boundary_tag, mesh.boundary_fin
    ):
        lines.append(f"{a} {b} {p} {t} {f}")
    lines.append(f"periodic_pairs {len(mesh.periodic_pairs)}")
    for s, m in mesh.periodic_pairs:
        lines.append(f"{s} {m}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _FORMAT:
        raise MeshError(f"not a {_FORMAT} file: {path}")
    i = 1

    def expect(key):
        nonlocal i
        parts = lines[i].split()
        if parts[0] != key:
            raise MeshError(f"expected '{key}' at line {i + 1} of {path}")
        i += 1
        return parts[1:]

    px, py = (int(v) for v in expect("periodic"))
    domain = np.array([float(v) for v in expect("domain")])
    h_target = float(expect("h_target")[0])
    nv = int(expect("nodes")[0])
    nodes = np.array(
        [[float(v) for v in lines[i + k].split()] for k in range(nv)], dtype=float
    ).reshape(nv, 2)
    i += nv
    nt = int(expect("triangles")[0])
    tris = np.array(
        [[int(v) for v in lines[i + k].split()] for k in range(nt)], dtype=np.int64
    ).reshape(nt, 3)
    i += nt
    nb = int(expect("boundary_edges")[0])
    braw = np.array(
        [[int(v) for v in lines[i + k].split()] for k in range(nb)], dtype=np.int64
    ).reshape(nb, 5)
    i += nb
    npairs = int(expect("periodic_pairs")[0])
    pairs = np.array(
        [[int(v) for v in lines[i + k].split()] for k in range(npairs)], dtype=np.int64
    ).reshape(npairs, 2)
    mesh = TriMesh(
        nodes=nodes,
        triangles=tris,
        boundary_edges=braw[:, :2],
        boundary_parent=braw[:, 2],
        boundary_tag=braw[:, 3],
        boundary_fin=braw[:, 4],
        periodic_pairs=pairs,
        domain=domain,
        periodic_x=bool(px),
        periodic_y=bool(py),
        h_target=h_target,
    )
    mesh.validate()
    return mesh


def write_vtk(mesh: TriMesh, path, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid with optional nodal scalar/vector fields."""
    out = [
        "# vtk DataFile Version 3.0",
        "fincell mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    for x, y in mesh.nodes:
        out.append(f"{x!r} {y!r} 0.0")
    out.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    for a, b, c in mesh.triangles:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {mesh.n_triangles}")
    out.extend(["5"] * mesh.n_triangles)
    if point_data:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in arr)
            else:
                out.append(f"VECTORS {name} double")
                out.extend(f"{v[0]!r} {v[1]!r} 0.0" for v in arr)
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
