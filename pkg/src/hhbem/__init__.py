"""Boundary-element splits of vector fields on closed triangulated surfaces."""

from .decompositions import MODES, Decomposer, DecompositionReport, write_report
from .kernels import OperatorSet, assemble, load_operators, save_operators
from .mesh import SurfaceMesh, cube, ellipsoid, generate_mesh, icosphere, load_mesh, save_mesh
from .operators import SolverConfig, SolverError, compute_nu0
from .potentials import ProbeSet, eval_potentials, jump_check, silence_score

__all__ = [
    "MODES",
    "Decomposer",
    "DecompositionReport",
    "write_report",
    "OperatorSet",
    "assemble",
    "load_operators",
    "save_operators",
    "SurfaceMesh",
    "cube",
    "ellipsoid",
    "generate_mesh",
    "icosphere",
    "load_mesh",
    "save_mesh",
    "SolverConfig",
    "SolverError",
    "compute_nu0",
    "ProbeSet",
    "eval_potentials",
    "jump_check",
    "silence_score",
]
