"""Thermo-mechanically coupled simulation of shape-memory alloys on 2-D P1 meshes."""

from .constitutive import MaterialParams
from .config import SimConfig, load_config, parse_config, standard_config
from .coupler import CoupledProblem, CoupledState, CouplerConfig, material_point_run, run
from .errors import AuditError, ConfigError, NonConvergenceError, PositivityError, SolverError
from .mesh import build_rect_mesh

__all__ = [
    "AuditError", "ConfigError", "CoupledProblem", "CoupledState", "CouplerConfig", "MaterialParams",
    "NonConvergenceError", "PositivityError", "SimConfig", "SolverError", "build_rect_mesh",
    "load_config", "material_point_run", "parse_config", "run", "standard_config",
]
__version__ = "0.1.0"
