"""Receiver-side compositing of remote portraits onto the cube's screens.

Every screen pixel defines a ray from the receiver's eye. Mapped into a
sender's cube frame, that ray starts at the portrait camera's center, so the
screen-to-portrait map is a pure projection by the portrait camera: no depth is
needed. Portraits are premultiplied and composited back to front over a
shared background.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from ..assembly import AssemblyLayout, transfer_transform
from ..geometry import CameraModel, ScreenRect
from ..lumi_render import PortraitFrame, portrait_camera

SCREEN_ORDER = ("front", "left", "right")


@dataclass(eq=False)
class CompositeResult:
    screens: dict  # name -> (H, W, 3) float in [0, 255]
    missing: list = field(default_factory=list)  # remote cube ids without a portrait
    coverage: dict = field(default_factory=dict)  # (cube id, screen) -> pixels with alpha > 0

    def to_uint8(self) -> dict:
        return {k: np.clip(np.rint(v), 0, 255).astype(np.uint8) for k, v in self.screens.items()}


def default_background(screen: ScreenRect, top=(70.0, 80.0, 95.0), bottom=(150.0, 150.0, 140.0)) -> np.ndarray:
    """Vertical two-color gradient shared by all screens."""
    t = (np.arange(screen.height) + 0.5) / screen.height
    col = (1.0 - t)[:, None] * np.asarray(top) + t[:, None] * np.asarray(bottom)
    return np.broadcast_to(col[:, None, :], (screen.height, screen.width, 3)).copy()


def expected_portrait_camera(layout: AssemblyLayout, sender: int, receiver: int, viewpoint,
                             template: CameraModel | None = None) -> CameraModel:
    """Camera the sender should use: the receiver's eye mapped into the sender's cube."""
    eye = transfer_transform(layout, sender, receiver).apply(viewpoint)
    if template is None:
        return portrait_camera(eye)
    return portrait_camera(eye, template.fx, template.width, template.height)


def sample_portrait(portrait: PortraitFrame, cam: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear premultiplied color and alpha of ``portrait`` along rays to ``points``."""
    pix, z = cam.project_points(points)
    ok = np.isfinite(pix).all(axis=-1) & (z > 0)
    u = np.where(ok, pix[..., 0], -10.0)
    v = np.where(ok, pix[..., 1], -10.0)
    coords = [v.ravel(), u.ravel()]
    alpha = ndimage.map_coordinates(portrait.alpha, coords, order=1, mode="constant", cval=0.0)
    color = np.stack([ndimage.map_coordinates(portrait.color[..., c], coords, order=1, mode="constant", cval=0.0)
                      for c in range(3)], axis=-1)
    shape = points.shape[:-1]
    return color.reshape(shape + (3,)), alpha.reshape(shape)


def composite(layout: AssemblyLayout, receiver: int, portraits: Mapping[int, PortraitFrame], viewpoint,
              backgrounds: Mapping[str, np.ndarray] | None = None,
              cameras: Mapping[int, CameraModel] | None = None) -> CompositeResult:
    """Draw every remote portrait on the receiver's screens as seen from ``viewpoint``.

    ``viewpoint`` is in the receiver's cube frame. ``cameras`` optionally gives
    the sender-local camera each portrait is assumed to have been taken with;
    by default it is derived from ``viewpoint`` through the layout. Remote cubes
    without a portrait are listed in ``missing`` and leave the background
    untouched.
    """
    place = layout.cube(receiver)
    eye = np.asarray(viewpoint, dtype=np.float64)
    remotes = [c for c in layout.ids if c != receiver]
    missing = [c for c in remotes if c not in portraits]
    present = [c for c in remotes if c in portraits]
    # back to front: farthest sender seat first
    to_local = {c: transfer_transform(layout, receiver, c) for c in present}
    dist = {c: float(np.linalg.norm(to_local[c].apply(layout.cube(c).spec.seat) - eye)) for c in present}
    present.sort(key=lambda c: (-dist[c], c))
    screens, coverage = {}, {}
    for name in SCREEN_ORDER:
        if name not in place.spec.screens:
            continue
        rect = place.spec.screens[name]
        bg = default_background(rect) if backgrounds is None or name not in backgrounds else backgrounds[name]
        out = np.array(bg, dtype=np.float64, copy=True)
        if np.dot(rect.normal, eye - rect.center) <= 0:
            screens[name] = out
            continue
        centers = rect.pixel_centers()
        for c in present:
            portrait = portraits[c]
            cam = cameras[c] if cameras is not None and c in cameras else \
                expected_portrait_camera(layout, c, receiver, eye, None)
            pts = transfer_transform(layout, c, receiver).apply(centers)
            col, a = sample_portrait(portrait, cam, pts)
            out = col + (1.0 - a)[..., None] * out
            coverage[(c, name)] = int((a > 0).sum())
        screens[name] = out
    return CompositeResult(screens, missing, coverage)
