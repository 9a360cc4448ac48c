"""Depth prediction at a virtual viewpoint from a handful of RGBD views.

Stages: per-view meshes projected into the virtual view, visibility-weighted
fusion into an initial depth, spatially varying hypotheses around it, a
feature-variance cost volume, softmin probabilities and the expected depth.
All of this runs at quarter resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import EmptyDepth, TooFewViews
from .geometry import CameraModel
from .raster import rasterize

DEPTH_SCALE = 4
MESH_OFFSET = 2  # full-res pixel sampled for each quarter-res mesh vertex


# ---------------------------------------------------------------- meshes

@dataclass(frozen=True, eq=False)
class ViewMesh:
    vertices: np.ndarray  # (V, 3) camera frame
    faces: np.ndarray  # (F, 3)
    culled: int


def quad_triangles(shape: tuple[int, int]) -> np.ndarray:
    """Vertex (flat pixel) indices of the two triangles of every 2x2 quad, (rows-1)*(cols-1)*2 x 3."""
    H, W = shape
    r, c = np.mgrid[0 : H - 1, 0 : W - 1]
    a = (r * W + c).ravel()
    b, d = a + 1, a + W
    e = d + 1
    return np.stack([np.stack([a, d, b], 1), np.stack([b, d, e], 1)], 1).reshape(-1, 3)


def build_per_view_mesh(depth: np.ndarray, cam: CameraModel, discontinuity_thresh: float = 0.05) -> ViewMesh:
    """Grid mesh over valid depth pixels, cut where depth jumps.

    Each 2x2 block of valid pixels yields two triangles; a triangle is dropped
    when its largest pairwise vertex-depth difference exceeds the threshold.
    Unreferenced vertices are removed.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != cam.shape:
        raise ValueError(f"depth {depth.shape} does not match camera {cam.shape}")
    valid = depth > 0
    a_ok, b_ok = valid[:-1, :-1], valid[:-1, 1:]
    d_ok, e_ok = valid[1:, :-1], valid[1:, 1:]
    if not (a_ok & b_ok & d_ok & e_ok).any():
        raise EmptyDepth("no 2x2 block of valid depth")
    # same triangles, in the same order, as filtering quad_triangles() by vertex validity
    t1 = a_ok & d_ok & b_ok
    t2 = b_ok & d_ok & e_ok
    r, c = np.nonzero(t1 | t2)
    W = depth.shape[1]
    a = r * W + c
    b, d = a + 1, a + W
    e = d + 1
    tris = np.stack([np.stack([a, d, b], 1), np.stack([b, d, e], 1)], 1).reshape(-1, 3)
    tris = tris[np.stack([t1[r, c], t2[r, c]], 1).ravel()]
    z = depth.ravel()[tris]
    keep = (z.max(axis=1) - z.min(axis=1)) <= discontinuity_thresh
    culled = int((~keep).sum())
    tris = tris[keep]
    used, inverse = np.unique(tris, return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int64)
    pix = np.stack([used % cam.width, used // cam.width], axis=1).astype(np.float64)
    verts = cam.rays_camera_frame(pix) * z_of(depth, used)[:, None]
    return ViewMesh(verts, faces, culled)


def z_of(depth: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    return depth.ravel()[flat_index]


def decimate_depth(depth: np.ndarray, cam: CameraModel, factor: int = DEPTH_SCALE,
                   offset: int = MESH_OFFSET) -> tuple[np.ndarray, CameraModel]:
    """Point-sample a full-resolution depth map on a coarse grid, with its matching camera."""
    H, W = depth.shape
    sub = depth[offset : H - (factor - 1 - offset) : factor, offset : W - (factor - 1 - offset) : factor]
    return np.ascontiguousarray(sub), cam.resampled(factor, float(offset))


# ---------------------------------------------------------------- fusion

@dataclass(frozen=True, eq=False)
class ProjectedDepthSet:
    depths: np.ndarray  # (n, H, W), 0 where the view's mesh does not cover

    @property
    def masks(self) -> np.ndarray:
        return self.depths > 0


def project_meshes(meshes: Sequence[ViewMesh], cams: Sequence[CameraModel], virtual: CameraModel) -> ProjectedDepthSet:
    out = []
    for mesh, cam in zip(meshes, cams):
        world = cam.extrinsics.inverse().apply(mesh.vertices)
        out.append(rasterize(world, mesh.faces, virtual).depth)
    return ProjectedDepthSet(np.stack(out) if out else np.zeros((0,) + virtual.shape))


def diffuse_fill(values: np.ndarray, known: np.ndarray, max_iters: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Grow known values into holes, one 4-neighbor ring per iteration.

    Each newly filled pixel takes the mean of its already-known neighbors
    (Jacobi update, so the result does not depend on scan order).
    """
    v = np.where(known, values, 0.0).astype(np.float64)
    k = known.copy()
    kernel = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
    for _ in range(max_iters):
        if k.all():
            break
        s = ndimage.convolve(v, kernel, mode="constant")
        n = ndimage.convolve(k.astype(np.float64), kernel, mode="constant")
        grow = ~k & (n > 0)
        if not grow.any():
            break
        v[grow] = s[grow] / n[grow]
        k = k | grow
    return v, k


def fuse_initial_depth(projected: ProjectedDepthSet, fill_iters: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Visibility-weighted mean depth and the union mask; holes filled by diffusion.

    Pixels still unreached after ``fill_iters`` rings take the mean covered depth.
    """
    d = projected.depths
    m = projected.masks
    count = m.sum(axis=0)
    union = count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(union, (d * m).sum(axis=0) / np.maximum(count, 1), 0.0)
    if not union.any():
        return mean, union
    filled, reached = diffuse_fill(mean, union, fill_iters)
    filled[~reached] = mean[union].mean()
    return filled, union


# ---------------------------------------------------------------- features

def area_downsample(img: np.ndarray, factor: int = DEPTH_SCALE) -> np.ndarray:
    H, W = img.shape[:2]
    h, w = H // factor, W // factor
    x = np.asarray(img[: h * factor, : w * factor], dtype=np.float64)
    return x.reshape(h, factor, w, factor, *img.shape[2:]).mean(axis=(1, 3))


def luma(rgb: np.ndarray) -> np.ndarray:
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def extract_features(color: np.ndarray) -> np.ndarray:
    """Five channels: RGB in [0, 1], then |d/dx| and |d/dy| of luma, 3x3 box-smoothed.

    Derivatives are Sobel responses divided by 8, i.e. luma change per pixel.
    """
    rgb = np.asarray(color, dtype=np.float64) / 255.0
    y = luma(rgb)
    gx = ndimage.uniform_filter(np.abs(ndimage.sobel(y, axis=1, mode="nearest")) / 8.0, 3, mode="nearest")
    gy = ndimage.uniform_filter(np.abs(ndimage.sobel(y, axis=0, mode="nearest")) / 8.0, 3, mode="nearest")
    return np.concatenate([rgb, gx[..., None], gy[..., None]], axis=-1)


# ---------------------------------------------------------------- hypotheses and cost

@dataclass(frozen=True, eq=False)
class HypothesisSet:
    initial: np.ndarray  # (H, W)
    delta: float = 0.05
    count: int = 16

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least two hypotheses")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def offsets(self) -> np.ndarray:
        return np.linspace(-self.delta, self.delta, self.count)

    @property
    def spacing(self) -> float:
        return 2.0 * self.delta / (self.count - 1)

    @property
    def depths(self) -> np.ndarray:
        """(H, W, N) per-pixel hypothesis depths."""
        return self.initial[..., None] + self.offsets


@dataclass(frozen=True, eq=False)
class FeatureView:
    """Features of one input view at the cost-volume resolution."""

    features: np.ndarray  # (h, w, C)
    valid: np.ndarray  # (h, w) bool
    cam: CameraModel
    depth: np.ndarray | None = None  # (h, w) observed depth for occlusion tests, 0 = unknown


@njit(cache=True)
def _bilinear(feat, valid, u, v, out):
    """Sample into ``out``; False if any tap with nonzero weight is missing."""
    h, w = valid.shape
    if not (u >= 0.0 and v >= 0.0 and u <= w - 1 and v <= h - 1):
        return False
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    ax = u - x0
    ay = v - y0
    for c in range(out.shape[0]):
        out[c] = 0.0
    for dy in range(2):
        wy = ay if dy == 1 else 1.0 - ay
        if wy == 0.0:
            continue
        for dx in range(2):
            wx = ax if dx == 1 else 1.0 - ax
            if wx == 0.0:
                continue
            yy, xx = y0 + dy, x0 + dx
            if not valid[yy, xx]:
                return False
            for c in range(out.shape[0]):
                out[c] += wy * wx * feat[yy, xx, c]
    return True


@njit(cache=True)
def _cost_slice(origin, rays, depth, Rs, ts, Ks, feats, valids, obs_depths, sizes, occlusion, n_views, out):
    H, W = depth.shape
    C = feats.shape[3]
    for py in range(H):
        samples = np.zeros((n_views, C))
        tmp = np.zeros(C)
        for px in range(W):
            z = depth[py, px]
            x0 = origin[0] + z * rays[py, px, 0]
            x1 = origin[1] + z * rays[py, px, 1]
            x2 = origin[2] + z * rays[py, px, 2]
            n = 0
            for i in range(n_views):
                pc0 = Rs[i, 0, 0] * x0 + Rs[i, 0, 1] * x1 + Rs[i, 0, 2] * x2 + ts[i, 0]
                pc1 = Rs[i, 1, 0] * x0 + Rs[i, 1, 1] * x1 + Rs[i, 1, 2] * x2 + ts[i, 1]
                pc2 = Rs[i, 2, 0] * x0 + Rs[i, 2, 1] * x1 + Rs[i, 2, 2] * x2 + ts[i, 2]
                if pc2 <= 1e-6:
                    continue
                u = Ks[i, 0] * pc0 / pc2 + Ks[i, 2]
                v = Ks[i, 1] * pc1 / pc2 + Ks[i, 3]
                if u > sizes[i, 0] - 1 or v > sizes[i, 1] - 1:
                    continue
                if _bilinear(feats[i], valids[i], u, v, tmp):
                    if occlusion < np.inf:
                        d_obs = obs_depths[i, int(np.floor(v + 0.5)), int(np.floor(u + 0.5))]
                        if d_obs > 0.0 and pc2 > d_obs + occlusion:
                            continue
                    for c in range(C):
                        samples[n, c] = tmp[c]
                    n += 1
            if n < 2:
                out[py, px] = np.inf
                continue
            total = 0.0
            for c in range(C):
                m = 0.0
                for j in range(n):
                    m += samples[j, c]
                m /= n
                s = 0.0
                for j in range(n):
                    d = samples[j, c] - m
                    s += d * d
                total += s / n
            out[py, px] = total


def raw_cost_volume(views: Sequence[FeatureView], hyp: HypothesisSet, virtual: CameraModel,
                    occlusion: float | None = None) -> np.ndarray:
    """Unsmoothed (H, W, N) sum-over-channels feature variance; +inf where < 2 views see the point.

    A view sees a point when it projects inside the image onto valid samples.
    With ``occlusion`` set, a view is also dropped when the point lies more
    than that distance behind the surface the view observed there.
    """
    if len(views) < 2:
        raise TooFewViews(f"{len(views)} views")
    if hyp.initial.shape != virtual.shape:
        raise ValueError("hypothesis grid does not match the virtual camera")
    inv = virtual.extrinsics.inverse()
    rays = inv.apply_direction(virtual.rays_camera_frame(virtual.pixel_grid()))
    origin = virtual.center
    Rs = np.stack([v.cam.extrinsics.rotation for v in views])
    ts = np.stack([v.cam.extrinsics.translation for v in views])
    Ks = np.array([[v.cam.fx, v.cam.fy, v.cam.cx, v.cam.cy] for v in views])
    # views may differ in size: pad into dense stacks, true sizes bound the sampling
    h = max(v.valid.shape[0] for v in views)
    w = max(v.valid.shape[1] for v in views)
    C = views[0].features.shape[2]
    feats = np.zeros((len(views), h, w, C))
    valids = np.zeros((len(views), h, w), dtype=np.bool_)
    obs = np.zeros((len(views), h, w))
    sizes = np.zeros((len(views), 2), dtype=np.int64)
    for i, v in enumerate(views):
        vh, vw = v.valid.shape
        feats[i, :vh, :vw] = v.features
        valids[i, :vh, :vw] = v.valid
        if v.depth is not None:
            obs[i, :vh, :vw] = v.depth
        sizes[i] = (vw, vh)
    occ = np.inf if occlusion is None else float(occlusion)
    depths = hyp.depths
    out = np.empty(depths.shape)
    sl = np.empty(virtual.shape)
    for k in range(hyp.count):
        _cost_slice(origin, np.ascontiguousarray(rays), np.ascontiguousarray(depths[..., k]),
                    Rs, ts, Ks, feats, valids, obs, sizes, occ, len(views), sl)
        out[..., k] = sl
    return out


def finite_box_filter(volume: np.ndarray, size: int = 5) -> np.ndarray:
    """Per-slice box mean over finite neighbors; +inf where the window has none."""
    fin = np.isfinite(volume)
    vals = np.where(fin, volume, 0.0)
    s = ndimage.uniform_filter(vals, size=(size, size, 1), mode="constant")
    n = ndimage.uniform_filter(fin.astype(np.float64), size=(size, size, 1), mode="constant")
    ok = n > 0.5 / (size * size)
    out = np.full(volume.shape, np.inf)
    out[ok] = np.maximum(s[ok] / n[ok], 0.0)
    return out


@njit(cache=True)
def _aligned_box(raw, initial, offsets, radius, out):
    H, W, N = raw.shape
    step = offsets[1] - offsets[0]
    for py in range(H):
        for px in range(W):
            for k in range(N):
                total = 0.0
                count = 0
                for qy in range(max(py - radius, 0), min(py + radius + 1, H)):
                    for qx in range(max(px - radius, 0), min(px + radius + 1, W)):
                        # slice position in q's curve of p's k-th absolute depth
                        f = (initial[py, px] - initial[qy, qx] + offsets[k] - offsets[0]) / step
                        if f < -1e-9 or f > N - 1 + 1e-9:
                            continue
                        i0 = min(max(int(np.floor(f + 1e-9)), 0), N - 1)
                        a = f - i0
                        if a <= 1e-9:
                            v = raw[qy, qx, i0]
                        else:
                            v = (1.0 - a) * raw[qy, qx, i0] + a * raw[qy, qx, i0 + 1]
                        if np.isfinite(v):
                            total += v
                            count += 1
                out[py, px, k] = total / count if count > 0 else np.inf


def aligned_box_filter(volume: np.ndarray, hyp: HypothesisSet, size: int = 5) -> np.ndarray:
    """Box mean over a window where neighbors are compared at the same absolute depth.

    Each neighbor's cost curve is linearly interpolated at this pixel's
    hypothesis depths; samples outside the neighbor's range or touching an
    infinite cost are skipped. +inf where nothing remains.
    """
    out = np.empty(volume.shape)
    _aligned_box(np.ascontiguousarray(volume, dtype=np.float64), np.ascontiguousarray(hyp.initial, dtype=np.float64),
                 hyp.offsets, size // 2, out)
    return out


def build_cost_volume(views: Sequence[FeatureView], hyp: HypothesisSet, virtual: CameraModel,
                      smooth: int = 5, aggregation: str = "aligned", occlusion: float | None = None) -> np.ndarray:
    """Feature-variance cost volume with spatial aggregation.

    ``aggregation`` is ``"aligned"`` (neighbors resampled to equal depth) or
    ``"slice"`` (plain per-slice box filter over finite entries).
    """
    raw = raw_cost_volume(views, hyp, virtual, occlusion)
    if smooth <= 1:
        return raw
    if aggregation == "aligned":
        return aligned_box_filter(raw, hyp, smooth)
    if aggregation == "slice":
        return finite_box_filter(raw, smooth)
    raise ValueError(f"unknown aggregation {aggregation!r}")


def cost_to_probability(volume: np.ndarray, temperature: float = 0.05) -> np.ndarray:
    """Softmin over the last axis. Infinite costs get zero mass; all-infinite pixels are uniform."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    V = np.asarray(volume, dtype=np.float64)
    vmin = V.min(axis=-1, keepdims=True)
    defined = np.isfinite(vmin)
    with np.errstate(invalid="ignore"):
        e = np.where(np.isfinite(V) & defined, np.exp(-(V - np.where(defined, vmin, 0.0)) / temperature), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return np.where(defined, e / np.where(s > 0, s, 1.0), 1.0 / V.shape[-1])


def expected_depth(prob: np.ndarray, hyp: HypothesisSet) -> np.ndarray:
    d = (prob * hyp.depths).sum(axis=-1)
    return np.clip(d, hyp.initial - hyp.delta, hyp.initial + hyp.delta)


# ---------------------------------------------------------------- full chain

@dataclass(frozen=True, eq=False)
class InputView:
    """One segmented full-resolution RGBD input."""

    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W), 0 outside the foreground or where missing
    mask: np.ndarray  # (H, W) bool foreground
    cam: CameraModel
    camera_id: int = 0


@dataclass(frozen=True)
class DepthConfig:
    delta: float = 0.05
    count: int = 16
    temperature: float = 1e-3
    discontinuity: float = 0.05
    smooth: int = 5
    aggregation: str = "aligned"
    occlusion: float | None = None
    fill_iters: int = 64


@dataclass(eq=False)
class DepthResult:
    refined: np.ndarray
    initial: np.ndarray
    union: np.ndarray
    hypotheses: HypothesisSet
    cost: np.ndarray
    prob: np.ndarray
    projected: ProjectedDepthSet = field(repr=False)


def feature_view(view: InputView, factor: int = DEPTH_SCALE, min_coverage: float = 0.5) -> FeatureView:
    """Quarter-resolution features from foreground-only block averages.

    A coarse pixel is valid when at least ``min_coverage`` of its block is
    foreground; its color is the mean over those foreground pixels.
    """
    fg = view.mask.astype(np.float64)
    cover = area_downsample(fg, factor)
    total = area_downsample(view.color * fg[..., None], factor)
    small = total / np.maximum(cover, 1e-12)[..., None]
    valid = cover >= min_coverage
    small[~valid] = 0.0
    known = (view.depth > 0) & view.mask
    dsum = area_downsample(np.where(known, view.depth, 0.0), factor)
    count = area_downsample(known.astype(np.float64), factor)
    depth = np.where(count > 0, dsum / np.maximum(count, 1e-12), 0.0)
    return FeatureView(extract_features(small), valid, view.cam.resampled(factor), depth)


def predict_depth(views: Sequence[InputView], virtual: CameraModel, config: DepthConfig = DepthConfig(),
                  exact_depth: np.ndarray | None = None) -> DepthResult:
    """Full chain at quarter resolution of ``virtual`` (a full-resolution camera).

    With ``exact_depth`` (quarter-resolution virtual-view depth, 0 = empty) the
    mesh stages are bypassed and it is used directly as the fused depth.
    """
    if len(views) < 2:
        raise TooFewViews(f"{len(views)} views")
    vq = virtual.resampled(DEPTH_SCALE)
    meshes, mesh_cams = [], []
    if exact_depth is None:
        for v in views:
            d, c = decimate_depth(np.where(v.mask, v.depth, 0.0), v.cam)
            try:
                meshes.append(build_per_view_mesh(d, c, config.discontinuity))
                mesh_cams.append(c)
            except EmptyDepth:
                continue
        projected = project_meshes(meshes, mesh_cams, vq)
    else:
        projected = ProjectedDepthSet(np.asarray(exact_depth, dtype=np.float64)[None])
    initial, union = fuse_initial_depth(projected, config.fill_iters)
    hyp = HypothesisSet(initial, config.delta, config.count)
    fviews = [feature_view(v) for v in views]
    cost = build_cost_volume(fviews, hyp, vq, config.smooth, config.aggregation, config.occlusion)
    prob = cost_to_probability(cost, config.temperature)
    refined = expected_depth(prob, hyp)
    return DepthResult(refined, initial, union, hyp, cost, prob, projected)
