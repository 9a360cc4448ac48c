"""End-to-end portrait synthesis for one (sender, receiver) pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assembly import CubeSpec, select_input_cameras
from .geometry import CameraModel
from .lumi_render import (HOLE_MAX_AREA, LAMBDA_ANGLE, LAMBDA_DEPTH, MIN_TAP_WEIGHT, OCCLUSION_TOL,
                          SELF_OCCLUSION_TOL, BlendWeights, PortraitFrame, WarpedView, blend, blend_scores, postprocess, upsample_depth,
                          warp_inputs)
from .synth_world import (NoiseModel, RgbdFrame, SyntheticScene, render_background, render_rgbd,
                          segment_foreground)
from .view_depth import DepthConfig, DepthResult, InputView, predict_depth


@dataclass(frozen=True)
class RenderConfig:
    depth: DepthConfig = field(default_factory=DepthConfig)
    occlusion_tol: float = OCCLUSION_TOL
    self_occlusion_tol: float | None = SELF_OCCLUSION_TOL
    min_tap_weight: float = MIN_TAP_WEIGHT
    lambda_depth: float = LAMBDA_DEPTH
    lambda_angle: float = LAMBDA_ANGLE
    max_hole: int = HOLE_MAX_AREA
    input_views: int = 4


@dataclass(eq=False)
class RenderOutput:
    portrait: PortraitFrame
    depth: np.ndarray  # full-resolution virtual depth used for warping
    warped: list[WarpedView]
    weights: BlendWeights
    blended: np.ndarray
    depth_result: DepthResult | None = None


def render_portrait(views: Sequence[InputView], virtual: CameraModel, config: RenderConfig = RenderConfig(),
                    exact_depth: np.ndarray | None = None, source_cube: int = 0, viewpoint=None,
                    frame_index: int = 0) -> RenderOutput:
    """Depth prediction, warping, blending and cleanup at ``virtual``.

    ``exact_depth`` (full resolution, 0 = empty) skips depth prediction.
    """
    result = None
    if exact_depth is None:
        result = predict_depth(views, virtual, config.depth)
        depth = upsample_depth(result.refined, result.union, virtual.shape)
    else:
        depth = np.asarray(exact_depth, dtype=np.float64)
    warped = warp_inputs(views, depth, virtual, config.occlusion_tol, config.self_occlusion_tol,
                         config.min_tap_weight)
    weights = blend_scores(warped, config.lambda_depth, config.lambda_angle)
    blended = blend(warped, weights)
    union = np.logical_or.reduce([w.mask for w in warped])
    silhouette = depth > 0
    vp = virtual.center if viewpoint is None else viewpoint
    portrait = postprocess(blended, union, silhouette, config.max_hole, source_cube, vp, frame_index)
    return RenderOutput(portrait, depth, warped, weights, blended, result)


@dataclass(eq=False)
class CaptureRig:
    """A cube's cameras with their empty-room background plates."""

    spec: CubeSpec
    scene: SyntheticScene
    noise: NoiseModel
    backgrounds: dict = field(default_factory=dict)
    depth_thresh: float = 0.10
    color_thresh: float = 30.0

    def background(self, camera_id: int) -> RgbdFrame:
        if camera_id not in self.backgrounds:
            self.backgrounds[camera_id] = render_background(self.scene, self.spec.cameras[camera_id],
                                                            self.noise, camera_id)
        return self.backgrounds[camera_id]

    def capture(self, camera_id: int, frame_index: int = 0) -> RgbdFrame:
        return render_rgbd(self.scene, self.spec.cameras[camera_id], self.noise, camera_id, frame_index)

    def input_view(self, camera_id: int, frame_index: int = 0) -> InputView:
        return segmented_view(self.capture(camera_id, frame_index), self.background(camera_id),
                              self.spec.cameras[camera_id], self.depth_thresh, self.color_thresh)

    def input_views(self, viewpoint, frame_index: int = 0, count: int = 4) -> list[InputView]:
        return [self.input_view(i, frame_index) for i in select_input_cameras(self.spec, viewpoint, count)]


def segmented_view(frame: RgbdFrame, background: RgbdFrame, cam: CameraModel, depth_thresh: float = 0.10,
                   color_thresh: float = 30.0) -> InputView:
    mask = segment_foreground(frame, background, depth_thresh, color_thresh)
    return InputView(frame.color, np.where(mask, frame.depth, 0.0), mask, cam, frame.camera_id)
