"""Synthetic scenes and hyperelastic simulation."""

from .fem import InversionError, lumped_mass, neohookean_energy, stiffness_matrix
from .material import Material
from .scene import BoundaryConditions, Scene, SceneConfig, SceneError, Springs, build_scene, spring_forces
from .shapes import ShapeConfig, ShapeError, generate_organ_shape
from .simulate import SimConfig, SolverError, Trajectory, export_training_sample, simulate, static_solve
from .tetmesh import MeshingError, TetMesh, tetrahedralize

__all__ = [
    "InversionError", "lumped_mass", "neohookean_energy", "stiffness_matrix", "Material", "BoundaryConditions",
    "Scene", "SceneConfig", "SceneError", "Springs", "build_scene", "spring_forces", "ShapeConfig", "ShapeError",
    "generate_organ_shape", "SimConfig", "SolverError", "Trajectory", "export_training_sample", "simulate",
    "static_solve", "MeshingError", "TetMesh", "tetrahedralize",
]
