"""Interior-point Gauss-Newton toolkit for bound-constrained elliptic inverse
problems, with spectrally matched saddle-point preconditioners and a dense
verification lab for their eigenvalue theory."""

from .ipm import ExperimentRecord, IpmConfig, IpmState, outer_loop
from .meshfem import StructuredMesh, build_mesh
from .problem import ModelProblem, ProblemConfig

__all__ = [
    "ExperimentRecord",
    "IpmConfig",
    "IpmState",
    "ModelProblem",
    "ProblemConfig",
    "StructuredMesh",
    "build_mesh",
    "outer_loop",
]

__version__ = "0.1.0"
