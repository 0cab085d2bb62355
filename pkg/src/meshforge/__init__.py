"""meshforge: differentiable articulated-mesh optimization engine.

Optimizes shape coefficients, per-vertex deformation, texture, light, and
material of a rigged triangle mesh so that renders from sampled cameras and
poses minimize a semantic image loss plus mesh regularization. The semantic
scorer is pluggable: built-in differentiable proxies or a remote embedding
service reached over HTTP.
"""

__version__ = "0.1.0"

from .body import BodyParams, PosedMesh, TemplateModel, pose_mesh, pose_vjp
from .camera import Camera, project
from .humanoid import make_quad_model, make_test_humanoid
from .mmx import load_model, save_model
from .objective import PromptSpec, ScenePoint, total_loss
from .raster import Light, Material, SoftRasterConfig, render, render_forward, render_vjp
from .regularizers import RegWeights
from .sampling import OrbitDist, PartGridDist, PoseDist, sample_camera, sample_pose

__all__ = [
    "BodyParams",
    "Camera",
    "Light",
    "Material",
    "OrbitDist",
    "PartGridDist",
    "PoseDist",
    "PosedMesh",
    "PromptSpec",
    "RegWeights",
    "ScenePoint",
    "SoftRasterConfig",
    "TemplateModel",
    "__version__",
    "load_model",
    "make_quad_model",
    "make_test_humanoid",
    "pose_mesh",
    "pose_vjp",
    "project",
    "render",
    "render_forward",
    "render_vjp",
    "sample_camera",
    "sample_pose",
    "save_model",
    "total_loss",
]
