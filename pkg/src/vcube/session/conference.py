"""Frame-level conference driver: track, render per stream, transmit, composite.

For every receiver the tracked eye viewpoint is mapped into each sender's
cube, the sender renders its participant there, the portrait goes through the
wire codec and the receiver composites all incoming portraits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..assembly import AssemblyLayout, viewpoint_transfer
from ..gaze_track import track
from ..geometry import CameraModel
from ..lumi_render import PORTRAIT_FOCAL, PortraitFrame, portrait_camera
from ..pipeline import CaptureRig, RenderConfig, render_portrait
from ..synth_world import NoiseModel, SyntheticScene
from ..temporal import TemporalSmoother
from .composite import CompositeResult, composite
from .wire import decode_portrait, encode_portrait


@dataclass(eq=False)
class Participant:
    rig: CaptureRig

    @property
    def scene(self) -> SyntheticScene:
        return self.rig.scene


@dataclass(eq=False)
class ConferenceFrame:
    frame_index: int
    viewpoints: dict  # receiver -> tracked local eye position
    portraits: dict  # (sender, receiver) -> decoded PortraitFrame
    encoded_bytes: dict  # (sender, receiver) -> wire size in bytes
    screens: dict  # receiver -> CompositeResult


@dataclass(eq=False)
class Conference:
    layout: AssemblyLayout
    participants: dict  # cube id -> Participant
    render: RenderConfig = field(default_factory=RenderConfig)
    quality: int = 90
    detector_noise_px: float = 0.0
    smoothing: bool = True
    smooth_w: float = 0.5
    smooth_n: int = 10
    seed: int = 0
    portrait: tuple = (PORTRAIT_FOCAL, 1280, 960)  # focal, width, height of portrait cameras
    smoothers: dict = field(default_factory=dict)

    def portrait_camera(self, local_viewpoint) -> CameraModel:
        f, w, h = self.portrait
        return portrait_camera(local_viewpoint, f, int(w), int(h))

    @classmethod
    def synthetic(cls, layout: AssemblyLayout, noise: NoiseModel, animate: bool = True, detail: float = 1.0,
                  **kw) -> Conference:
        """One seated figure per cube, each with a different variant."""
        parts = {}
        for i, c in enumerate(layout.ids):
            spec = layout.cube(c).spec
            scene = SyntheticScene.default(tuple(spec.seat), variant=i, animate=animate, detail=detail)
            parts[c] = Participant(CaptureRig(spec, scene, noise))
        return cls(layout, parts, **kw)

    def viewpoint(self, receiver: int, frame_index: int) -> np.ndarray:
        """Tracked eye midpoint of the receiver (falls back to the seat if tracking fails)."""
        p = self.participants[receiver]
        vp = track(p.scene, p.rig.spec.cameras, frame_index, self.detector_noise_px, seed=self.seed)
        return vp.position if vp.valid else np.array(p.rig.spec.seat, dtype=np.float64)

    def render_stream(self, sender: int, receiver: int, viewpoint, frame_index: int) -> PortraitFrame:
        """Sender-side portrait for ``receiver`` whose local eye is at ``viewpoint``."""
        rig = self.participants[sender].rig
        local = viewpoint_transfer(self.layout, sender, receiver, viewpoint)
        views = rig.input_views(local, frame_index, self.render.input_views)
        out = render_portrait(views, self.portrait_camera(local), self.render, source_cube=sender,
                              viewpoint=local, frame_index=frame_index)
        portrait = out.portrait
        if self.smoothing:
            sm = self.smoothers.setdefault((sender, receiver), TemporalSmoother(self.smooth_w, self.smooth_n))
            portrait = sm.step(portrait)
        return portrait

    def step(self, frame_index: int, receivers: Sequence[int] | None = None) -> ConferenceFrame:
        ids = self.layout.ids
        receivers = ids if receivers is None else list(receivers)
        vps = {r: self.viewpoint(r, frame_index) for r in receivers}
        portraits, sizes, screens = {}, {}, {}
        for r in receivers:
            incoming, cams = {}, {}
            for s in ids:
                if s == r:
                    continue
                wire = encode_portrait(self.render_stream(s, r, vps[r], frame_index), self.quality)
                sizes[(s, r)] = wire.size
                incoming[s] = decode_portrait(wire.to_bytes())
                portraits[(s, r)] = incoming[s]
                cams[s] = self.portrait_camera(viewpoint_transfer(self.layout, s, r, vps[r]))
            screens[r] = composite(self.layout, r, incoming, vps[r], cameras=cams)
        return ConferenceFrame(frame_index, vps, portraits, sizes, screens)


def unmapped_composite(layout: AssemblyLayout, receiver: int, sender: int, viewpoint, rig: CaptureRig,
                       config: RenderConfig = RenderConfig(), exact_depth=None) -> CompositeResult:
    """Negative control: the sender renders from its own bottom-middle camera pose
    instead of the transferred viewpoint, and the receiver composites it as usual."""
    local = viewpoint_transfer(layout, sender, receiver, viewpoint)
    cam = portrait_camera(rig.spec.cameras[4].center)
    views = rig.input_views(local, 0, config.input_views)
    depth = exact_depth(cam) if exact_depth is not None else None
    out = render_portrait(views, cam, config, exact_depth=depth, source_cube=sender)
    return composite(layout, receiver, {sender: out.portrait}, viewpoint)
