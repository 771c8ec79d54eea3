"""Soft-body limbless locomotion: FE forward dynamics and adjoint control."""

__version__ = "0.1.0"

from .assembly import ControlMap, FEModel
from .forward import NewtonConfig, TauScheme, Trajectory, simulate
from .gaits import GaitSpec, growth_at, sample_to_channels
from .material import MaterialParams
from .mesh import Mesh, QuadratureRule, build_box_mesh
from .ocp import OcpConfig, adjoint_sweep, control_residual, fbsm, objective
from .substrate import FrictionParams, ViscousParams

__all__ = [
    "ControlMap",
    "FEModel",
    "FrictionParams",
    "GaitSpec",
    "MaterialParams",
    "Mesh",
    "NewtonConfig",
    "OcpConfig",
    "QuadratureRule",
    "TauScheme",
    "Trajectory",
    "ViscousParams",
    "__version__",
    "adjoint_sweep",
    "build_box_mesh",
    "control_residual",
    "fbsm",
    "growth_at",
    "objective",
    "sample_to_channels",
    "simulate",
]
