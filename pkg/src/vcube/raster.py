"""Z-buffered triangle rasterizer for pinhole cameras.

Depth and attributes are interpolated perspective-correctly (``1/z`` is affine
in screen space), so a planar triangle reproduces its plane's depth exactly.
Pixel centers sit at integer coordinates, matching ``CameraModel``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import CameraModel

NEAR = 1e-3


@njit(cache=True)
def _rasterize(uv, z, faces, width, height, near, zbuf, fid, bary):
    eps = 1e-9
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= near or z1 <= near or z2 <= near:
            continue
        x0, y0 = uv[i0, 0], uv[i0, 1]
        x1, y1 = uv[i1, 0], uv[i1, 1]
        x2, y2 = uv[i2, 0], uv[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        xmin = max(int(np.ceil(min(x0, min(x1, x2)) - eps)), 0)
        xmax = min(int(np.floor(max(x0, max(x1, x2)) + eps)), width - 1)
        ymin = max(int(np.ceil(min(y0, min(y1, y2)) - eps)), 0)
        ymax = min(int(np.floor(max(y0, max(y1, y2)) + eps)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        inv_area = 1.0 / area
        iz0, iz1, iz2 = 1.0 / z0, 1.0 / z1, 1.0 / z2
        for py in range(ymin, ymax + 1):
            fy = float(py)
            for px in range(xmin, xmax + 1):
                fx = float(px)
                l0 = ((x1 - fx) * (y2 - fy) - (x2 - fx) * (y1 - fy)) * inv_area
                l1 = ((x2 - fx) * (y0 - fy) - (x0 - fx) * (y2 - fy)) * inv_area
                l2 = 1.0 - l0 - l1
                if l0 < -eps or l1 < -eps or l2 < -eps:
                    continue
                invz = l0 * iz0 + l1 * iz1 + l2 * iz2
                depth = 1.0 / invz
                if depth < zbuf[py, px]:
                    zbuf[py, px] = depth
                    fid[py, px] = f
                    bary[py, px, 0] = l0 * iz0 * depth
                    bary[py, px, 1] = l1 * iz1 * depth
                    bary[py, px, 2] = l2 * iz2 * depth


@dataclass
class RasterResult:
    depth: np.ndarray  # (H, W) camera-frame z, 0 where empty
    face: np.ndarray  # (H, W) int64 face index, -1 where empty
    bary: np.ndarray  # (H, W, 3) perspective-correct barycentrics

    @property
    def mask(self) -> np.ndarray:
        return self.face >= 0

    def interpolate(self, faces: np.ndarray, attr: np.ndarray) -> np.ndarray:
        """Interpolate per-vertex ``attr`` (V, C) at covered pixels; zeros elsewhere."""
        a = np.ascontiguousarray(attr, dtype=np.float64)
        flat = a.reshape(len(a), -1)
        out = np.zeros(self.face.shape + (flat.shape[1],))
        _interpolate(self.face, self.bary, np.ascontiguousarray(faces, dtype=np.int64), flat, out)
        return out.reshape(self.face.shape + a.shape[1:])


@njit(cache=True)
def _interpolate(fid, bary, faces, attr, out):
    for py in range(fid.shape[0]):
        for px in range(fid.shape[1]):
            f = fid[py, px]
            if f < 0:
                continue
            for k in range(3):
                w = bary[py, px, k]
                v = faces[f, k]
                for c in range(attr.shape[1]):
                    out[py, px, c] += w * attr[v, c]


def rasterize_camera_frame(vertices_cam: np.ndarray, faces: np.ndarray, cam: CameraModel,
                           near: float = NEAR) -> RasterResult:
    """Rasterize a mesh whose vertices are already in ``cam``'s camera frame."""
    verts = np.ascontiguousarray(vertices_cam, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    uv, z = cam.project_camera_frame(verts)
    uv = np.where(np.isfinite(uv), uv, 0.0)
    H, W = cam.height, cam.width
    zbuf = np.full((H, W), np.inf)
    fid = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    if len(faces):
        _rasterize(np.ascontiguousarray(uv), np.ascontiguousarray(z), faces, W, H, near, zbuf, fid, bary)
    zbuf[fid < 0] = 0.0
    return RasterResult(zbuf, fid, bary)


def rasterize(vertices: np.ndarray, faces: np.ndarray, cam: CameraModel, near: float = NEAR) -> RasterResult:
    """Rasterize a mesh given in cube-local coordinates."""
    return rasterize_camera_frame(cam.to_camera(vertices), faces, cam, near)
