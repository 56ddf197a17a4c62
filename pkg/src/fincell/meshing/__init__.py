from .trimesh import BoundaryTag, TriMesh, triangle_quality
from .generate import MeshParams, generate_channel_mesh, generate_unit_cell_mesh, remesh
from .smoothing import default_smoothing_weight, p1_stiffness, smoothing_operator
from .io import read_mesh, write_mesh, write_vtk

__all__ = [
    "BoundaryTag",
    "TriMesh",
    "triangle_quality",
    "MeshParams",
    "generate_unit_cell_mesh",
    "generate_channel_mesh",
    "remesh",
    "p1_stiffness",
    "smoothing_operator",
    "default_smoothing_weight",
    "read_mesh",
    "write_mesh",
    "write_vtk",
]
