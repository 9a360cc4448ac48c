"""Virtual-view color synthesis: backward warping, parametric blending, cleanup.

Every input view is gathered into the virtual view through a dense depth map.
Per-view weights come from two analytic priors (depth difference and viewing
angle deviation) scored at quarter resolution, normalized by a softmax across
views and bilinearly upsampled. Holes and silhouettes are then cleaned with
classical image operations and the result is packed as premultiplied RGBA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import DimensionMismatch, EmptyDepth
from .geometry import CameraModel, normalize
from .raster import rasterize
from .view_depth import DEPTH_SCALE, InputView, build_per_view_mesh, diffuse_fill

OCCLUSION_TOL = 0.05
SELF_OCCLUSION_TOL = 0.01
DISCONTINUITY = 0.05
MIN_TAP_WEIGHT = 1.0  # every bilinear tap with nonzero weight must pass
LAMBDA_DEPTH = 20.0
LAMBDA_ANGLE = 2.0
HOLE_MAX_AREA = 25
FEATHER_SIGMA = 1.0
FEATHER_RADIUS = 2  # 5x5 support
PORTRAIT_FOCAL = 1400.0
PORTRAIT_TARGET = (0.0, 1.05, 1.0)


@dataclass(frozen=True, eq=False)
class WarpedView:
    """One input view resampled onto the virtual pixel grid.

    ``delta_depth`` is NaN wherever ``mask`` is False; ``delta_angle`` is in
    radians and 0 where the virtual depth is undefined.
    """

    color: np.ndarray  # (H, W, 3) float, 0 where not visible
    mask: np.ndarray  # (H, W) bool
    reprojected: np.ndarray  # (H, W) input-camera depth of each virtual surface point
    delta_depth: np.ndarray
    delta_angle: np.ndarray
    camera_id: int = 0


@dataclass(frozen=True, eq=False)
class BlendWeights:
    scores: np.ndarray  # (V, h, w) raw scores, -inf where not visible
    normalized: np.ndarray  # (V, h, w) softmax over views
    full: np.ndarray  # (V, H, W) upsampled, masked and renormalized


@dataclass(frozen=True, eq=False)
class PortraitFrame:
    """RGBA portrait; ``color`` is premultiplied by ``alpha`` (float, 0..255)."""

    color: np.ndarray
    alpha: np.ndarray
    source_cube: int = 0
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame_index: int = 0

    def __post_init__(self):
        if self.color.shape[:2] != self.alpha.shape:
            raise DimensionMismatch(f"color {self.color.shape} vs alpha {self.alpha.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape

    def straight(self) -> np.ndarray:
        """Un-premultiplied color; black where alpha is 0."""
        a = self.alpha[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a > 0, self.color / np.where(a > 0, a, 1.0), 0.0)

    def to_uint8(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.clip(np.rint(self.color), 0, 255).astype(np.uint8)
        a = np.clip(np.rint(self.alpha * 255.0), 0, 255).astype(np.uint8)
        return c, a

    @classmethod
    def from_uint8(cls, color: np.ndarray, alpha: np.ndarray, **kw) -> PortraitFrame:
        return cls(color.astype(np.float64), alpha.astype(np.float64) / 255.0, **kw)


def portrait_camera(viewpoint, focal: float = PORTRAIT_FOCAL, width: int = 1280, height: int = 960,
                    target=PORTRAIT_TARGET) -> CameraModel:
    """Virtual camera at a (sender-local) viewpoint, aimed at the seated figure."""
    return CameraModel.look_at(viewpoint, target, focal, focal, width, height)


# ---------------------------------------------------------------- warping

@njit(cache=True)
def _gather(depth, rays, R, t, fx, fy, cx, cy, color, in_depth, in_mask, tol, shadow, shadow_tol, min_weight,
            out_color, out_mask, out_dw):
    H, W = depth.shape
    h, w = in_depth.shape
    for py in range(H):
        for px in range(W):
            d = depth[py, px]
            if d <= 0.0:
                continue
            x0 = rays[py, px, 0] * d
            y0 = rays[py, px, 1] * d
            z0 = d
            xi = R[0, 0] * x0 + R[0, 1] * y0 + R[0, 2] * z0 + t[0]
            yi = R[1, 0] * x0 + R[1, 1] * y0 + R[1, 2] * z0 + t[1]
            zi = R[2, 0] * x0 + R[2, 1] * y0 + R[2, 2] * z0 + t[2]
            out_dw[py, px] = zi
            if zi <= 1e-6:
                continue
            u = fx * xi / zi + cx
            v = fy * yi / zi + cy
            if not (u > -1.0 and v > -1.0 and u < w and v < h):
                continue
            iu = int(np.floor(u))
            iv = int(np.floor(v))
            au = u - iu
            av = v - iv
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            wsum = 0.0
            for dy in range(2):
                for dx in range(2):
                    wt = (au if dx else 1.0 - au) * (av if dy else 1.0 - av)
                    if wt <= 0.0:
                        continue
                    qx = iu + dx
                    qy = iv + dy
                    if qx < 0 or qy < 0 or qx >= w or qy >= h:
                        continue
                    if not in_mask[qy, qx]:
                        continue
                    dq = in_depth[qy, qx]
                    if dq > 0.0 and abs(dq - zi) > tol:
                        continue
                    if shadow_tol >= 0.0 and shadow[qy, qx] > 0.0 and zi > shadow[qy, qx] + shadow_tol:
                        continue
                    acc0 += wt * color[qy, qx, 0]
                    acc1 += wt * color[qy, qx, 1]
                    acc2 += wt * color[qy, qx, 2]
                    wsum += wt
            if wsum > 0.0 and wsum >= min_weight - 1e-9:
                out_color[py, px, 0] = acc0 / wsum
                out_color[py, px, 1] = acc1 / wsum
                out_color[py, px, 2] = acc2 / wsum
                out_mask[py, px] = True


def angle_maps(depth: np.ndarray, virtual: CameraModel, input_center) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit directions from each surface point to both viewpoints, and their angle.

    Returns ``(N, N_i, dN)`` in cube-local coordinates; where ``depth <= 0``
    both direction maps are zero and the angle is 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth > 0
    v, u = np.nonzero(valid)
    X = virtual.unproject(np.stack([u, v], axis=-1).astype(np.float64), depth[valid])
    n = normalize(virtual.center - X)
    ni = normalize(np.asarray(input_center, dtype=np.float64) - X)
    N = np.zeros(depth.shape + (3,))
    Ni = np.zeros(depth.shape + (3,))
    ang = np.zeros(depth.shape)
    N[valid], Ni[valid] = n, ni
    ang[valid] = np.arccos(np.clip(np.einsum("ik,ik->i", n, ni), -1.0, 1.0))
    return N, Ni, ang


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """The virtual-view depth map as a triangle mesh in cube-local coordinates."""

    vertices: np.ndarray
    faces: np.ndarray

    @classmethod
    def from_depth(cls, depth: np.ndarray, virtual: CameraModel, discontinuity: float = DISCONTINUITY) -> SurfaceMesh:
        try:
            mesh = build_per_view_mesh(depth, virtual, discontinuity)
        except EmptyDepth:
            return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return cls(virtual.extrinsics.inverse().apply(mesh.vertices), mesh.faces)

    def depth_in(self, cam: CameraModel) -> np.ndarray:
        """Depth map of this surface seen from ``cam`` (0 = empty)."""
        if len(self.faces) == 0:
            return np.zeros(cam.shape)
        return rasterize(self.vertices, self.faces, cam).depth


def warp_view(view: InputView, depth: np.ndarray, virtual: CameraModel, tol: float = OCCLUSION_TOL,
              self_occlusion_tol: float | None = SELF_OCCLUSION_TOL, min_tap_weight: float = MIN_TAP_WEIGHT,
              surface: SurfaceMesh | None = None) -> WarpedView:
    """Backward gather of one input view at the virtual depth, with occlusion tests.

    A bilinear tap counts only if it is foreground and, where it has a depth
    sample, that depth lies within ``tol`` of the reprojected depth. Unless
    ``self_occlusion_tol`` is None, the tap must also not be hidden behind
    another part of the virtual surface itself, seen from the input camera.
    The pixel is visible when the passing taps hold at least
    ``min_tap_weight`` of the bilinear weight; the color is their
    renormalized average.
    """
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    if depth.shape != virtual.shape:
        raise DimensionMismatch(f"depth {depth.shape} vs virtual camera {virtual.shape}")
    cam = view.cam
    Rv, tv = virtual.extrinsics.rotation, virtual.extrinsics.translation
    Ri, ti = cam.extrinsics.rotation, cam.extrinsics.translation
    R = Ri @ Rv.T
    t = ti - R @ tv
    rays = np.ascontiguousarray(virtual.rays_camera_frame(virtual.pixel_grid()))
    H, W = depth.shape
    color = np.zeros((H, W, 3))
    mask = np.zeros((H, W), dtype=np.bool_)
    dw = np.zeros((H, W))
    if self_occlusion_tol is None:
        shadow, stol = np.zeros((1, 1)), -1.0
    else:
        surface = surface if surface is not None else SurfaceMesh.from_depth(depth, virtual)
        shadow, stol = surface.depth_in(cam), float(self_occlusion_tol)
    _gather(depth, rays, np.ascontiguousarray(R), np.ascontiguousarray(t), cam.fx, cam.fy, cam.cx, cam.cy,
            np.ascontiguousarray(view.color, dtype=np.float64), np.ascontiguousarray(view.depth, dtype=np.float64),
            np.ascontiguousarray(view.mask, dtype=np.bool_), float(tol), shadow, stol, float(min_tap_weight),
            color, mask, dw)
    dd = np.where(mask, dw - depth, np.nan)
    _, _, dn = angle_maps(depth, virtual, cam.center)
    return WarpedView(color, mask, dw, dd, dn, view.camera_id)


def warp_inputs(views: Sequence[InputView], depth: np.ndarray, virtual: CameraModel,
                tol: float = OCCLUSION_TOL, self_occlusion_tol: float | None = SELF_OCCLUSION_TOL,
                min_tap_weight: float = MIN_TAP_WEIGHT) -> list[WarpedView]:
    surface = None if self_occlusion_tol is None else SurfaceMesh.from_depth(depth, virtual)
    return [warp_view(v, depth, virtual, tol, self_occlusion_tol, min_tap_weight, surface) for v in views]


# ---------------------------------------------------------------- blending

def softmax_weights(delta_depth: np.ndarray, delta_angle: np.ndarray, mask: np.ndarray,
                    lambda_depth: float = LAMBDA_DEPTH, lambda_angle: float = LAMBDA_ANGLE):
    """Raw scores and their softmax along axis 0 (the view axis).

    Score is ``-lambda_depth * max(0, dD) - lambda_angle * dN`` on visible
    entries and ``-inf`` elsewhere. Columns with no visible view get all-zero
    weights.
    """
    mask = np.asarray(mask, dtype=bool)
    dd = np.where(mask, np.asarray(delta_depth, dtype=np.float64), 0.0)
    score = np.where(mask, -lambda_depth * np.maximum(0.0, dd) - lambda_angle * np.asarray(delta_angle), -np.inf)
    top = score.max(axis=0, keepdims=True)
    any_visible = np.isfinite(top)
    e = np.where(mask, np.exp(score - np.where(any_visible, top, 0.0)), 0.0)
    s = e.sum(axis=0, keepdims=True)
    w = np.where(any_visible, e / np.where(s > 0, s, 1.0), 0.0)
    return score, w


def _block_mean(x: np.ndarray, m: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    H, W = m.shape
    h, w = H // factor, W // factor
    mm = m[: h * factor, : w * factor].reshape(h, factor, w, factor)
    xx = np.where(m, x, 0.0)[: h * factor, : w * factor].reshape(h, factor, w, factor)
    n = mm.sum(axis=(1, 3))
    return xx.sum(axis=(1, 3)) / np.maximum(n, 1), n > 0


def upsample_bilinear(small: np.ndarray, shape: tuple[int, int], factor: int = DEPTH_SCALE) -> np.ndarray:
    """Bilinear upsampling consistent with block-center low-res pixel positions."""
    H, W = shape
    off = (factor - 1) / 2.0
    v = (np.arange(H) - off) / factor
    u = (np.arange(W) - off) / factor
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return ndimage.map_coordinates(small, [vv, uu], order=1, mode="nearest")


def blend_scores(warped: Sequence[WarpedView], lambda_depth: float = LAMBDA_DEPTH,
                 lambda_angle: float = LAMBDA_ANGLE, factor: int = DEPTH_SCALE) -> BlendWeights:
    """Scores on the quarter-resolution grid, softmax, then upsample and renormalize.

    Quarter-resolution differences are the means over the visible pixels of
    each block; a block is visible if any of its pixels is.
    """
    dd, dn, vis = [], [], []
    for wv in warped:
        a, m = _block_mean(wv.delta_depth, wv.mask, factor)
        b, _ = _block_mean(wv.delta_angle, wv.mask, factor)
        dd.append(a), dn.append(b), vis.append(m)
    scores, norm = softmax_weights(np.stack(dd), np.stack(dn), np.stack(vis), lambda_depth, lambda_angle)
    shape = warped[0].mask.shape
    masks = np.stack([wv.mask for wv in warped])
    up = np.stack([upsample_bilinear(n, shape, factor) for n in norm]) * masks
    total = up.sum(axis=0, keepdims=True)
    count = masks.sum(axis=0, keepdims=True)
    # where upsampling left no weight on any visible view, share equally
    full = np.where(total > 0, up / np.where(total > 0, total, 1.0), masks / np.maximum(count, 1))
    return BlendWeights(scores, norm, full)


def blend(warped: Sequence[WarpedView], weights: BlendWeights | np.ndarray) -> np.ndarray:
    w = weights.full if isinstance(weights, BlendWeights) else np.asarray(weights)
    colors = np.stack([wv.color for wv in warped])
    return np.einsum("vhw,vhwc->hwc", w, colors)


# ---------------------------------------------------------------- cleanup

def small_holes(visible: np.ndarray, max_area: int = HOLE_MAX_AREA, within: np.ndarray | None = None) -> np.ndarray:
    """Enclosed 4-connected background components of at most ``max_area`` pixels."""
    lab, n = ndimage.label(~visible)
    if n == 0:
        return np.zeros_like(visible)
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    edge = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    ok = sizes <= max_area
    ok[0] = False
    ok[edge] = False
    holes = ok[lab]
    if within is not None:
        holes &= within
    return holes


def feather(mask: np.ndarray, sigma: float = FEATHER_SIGMA, radius: int = FEATHER_RADIUS) -> np.ndarray:
    """Gaussian blur of a binary mask with a (2r+1)^2 support, zero outside the image."""
    return ndimage.gaussian_filter(mask.astype(np.float64), sigma, mode="constant", cval=0.0,
                                   truncate=radius / sigma)


def alpha_matte(union: np.ndarray) -> np.ndarray:
    square = np.ones((3, 3), dtype=bool)
    closed = ndimage.binary_dilation(union, square)
    closed = ndimage.binary_erosion(closed, square, border_value=1)
    core = ndimage.binary_erosion(closed, square, border_value=0)
    return np.clip(feather(core), 0.0, 1.0)


def postprocess(blended: np.ndarray, union: np.ndarray, silhouette: np.ndarray | None = None,
                max_hole: int = HOLE_MAX_AREA, source_cube: int = 0, viewpoint=None,
                frame_index: int = 0) -> PortraitFrame:
    """Fill small holes, build the feathered matte and premultiply.

    ``silhouette`` (optional) limits which holes may be filled.
    """
    union = np.asarray(union, dtype=bool)
    holes = small_holes(union, max_hole, silhouette)
    color = np.asarray(blended, dtype=np.float64).copy()
    if holes.any():
        # a hole of area <= max_hole is filled within max_hole rings, so a margin
        # of max_hole pixels around it gives the same result as the full frame
        labels, _ = ndimage.label(holes)
        H, W = union.shape
        for sl in ndimage.find_objects(labels):
            r0, r1 = max(0, sl[0].start - max_hole), min(H, sl[0].stop + max_hole)
            c0, c1 = max(0, sl[1].start - max_hole), min(W, sl[1].stop + max_hole)
            win = (slice(r0, r1), slice(c0, c1))
            h = holes[win]
            for c in range(color.shape[-1]):
                filled, _ = diffuse_fill(color[win + (c,)], union[win], max_hole)
                color[win + (c,)] = np.where(h, filled, color[win + (c,)])
    alpha = alpha_matte(union | holes)
    color = np.where(union[..., None] | holes[..., None], color, 0.0) * alpha[..., None]
    vp = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    return PortraitFrame(color, alpha, source_cube, vp, frame_index)


# ---------------------------------------------------------------- depth upsampling

def upsample_depth(depth_small: np.ndarray, valid_small: np.ndarray, shape: tuple[int, int],
                   factor: int = DEPTH_SCALE) -> np.ndarray:
    """Masked bilinear upsampling: only valid coarse taps contribute.

    Pixels whose valid taps carry less than half the bilinear weight stay 0.
    """
    m = valid_small.astype(np.float64)
    num = upsample_bilinear(np.where(valid_small, depth_small, 0.0), shape, factor)
    den = upsample_bilinear(m, shape, factor)
    return np.where(den >= 0.5, num / np.maximum(den, 1e-12), 0.0)
