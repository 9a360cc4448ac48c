"""Deterministic desk-scale simulation of a multi-cube 3D video conferencing pipeline."""

__version__ = "0.1.0"

from .assembly import AssemblyLayout, CubeSpec, validate_layout, viewpoint_transfer
from .config import ScenarioConfig
from .geometry import CameraModel, RigidTransform, ScreenRect
from .lumi_render import PortraitFrame, portrait_camera
from .pipeline import CaptureRig, RenderConfig, render_portrait
from .synth_world import NoiseModel, SyntheticScene
from .view_depth import DepthConfig, predict_depth

__all__ = [
    "AssemblyLayout", "CameraModel", "CaptureRig", "CubeSpec", "DepthConfig", "NoiseModel", "PortraitFrame",
    "RenderConfig", "RigidTransform", "ScenarioConfig", "ScreenRect", "SyntheticScene", "portrait_camera",
    "predict_depth", "render_portrait", "validate_layout", "viewpoint_transfer",
]
