"""Rigid transforms, pinhole cameras and off-axis screen projection.

Coordinate conventions
----------------------
Cube-local frame: right-handed, X along the front-screen pixel rows, Y up,
Z = X x Y (pointing from the front screen toward the seat), origin where the
front screen's central vertical line meets the floor. Units are meters.

Camera frame: x right, y down, z forward along the optical axis. Pixel
``(u, v)`` has its center at integer coordinates, so a point on the optical
axis projects to ``(cx, cy)``.

Screen coordinates are continuous: the top-left screen corner is ``(0, 0)``
and the bottom-right corner is ``(W, H)``; pixel ``(i, j)`` covers
``[i, i + 1) x [j, j + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateFrustum

ORTHO_TOL = 1e-9
MIN_DEPTH = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation has det != +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation by ``angle`` radians about +Y, then translation."""
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return cls(R, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Axis-angle rotation (Rodrigues) then translation."""
        r = np.asarray(rotvec, dtype=np.float64)
        theta = float(np.linalg.norm(r))
        if theta < 1e-15:
            return cls(np.eye(3), translation)
        k = r / theta
        K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        R = np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)
        # re-orthonormalize to keep the 1e-9 invariant under float round-off
        u, _, vt = np.linalg.svd(R)
        return cls(u @ vt, translation)

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_direction(self, dirs) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World-to-camera transform for a camera at ``position`` aimed at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    z = normalize(np.asarray(target, dtype=np.float64) - position)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-12:
        raise ValueError("look_at: viewing direction parallel to up vector")
    x = normalize(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return RigidTransform(R, -R @ position)


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def look_at(cls, position, target, fx, fy, width, height, cx=None, cy=None, up=(0.0, 1.0, 0.0)):
        cx = (width - 1) / 2.0 if cx is None else cx
        cy = (height - 1) / 2.0 if cy is None else cy
        return cls(fx, fy, cx, cy, width, height, look_at(position, target, up))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def P(self) -> np.ndarray:
        """3x4 projection matrix from cube-local homogeneous points."""
        return self.K @ self.extrinsics.matrix()[:3]

    @property
    def center(self) -> np.ndarray:
        R, t = self.extrinsics.rotation, self.extrinsics.translation
        return -R.T @ t

    @property
    def optical_axis(self) -> np.ndarray:
        return self.extrinsics.rotation[2].copy()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_camera(self, points) -> np.ndarray:
        return self.extrinsics.apply(points)

    def project_camera_frame(self, pc: np.ndarray):
        """Pixels and depths of camera-frame points; no front-of-camera check."""
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def project_points(self, points):
        """Vectorized projection; points with depth <= 0 give meaningless pixels."""
        return self.project_camera_frame(self.to_camera(points))

    def project(self, point):
        pix, z = self.project_points(point)
        if np.any(np.asarray(z) <= MIN_DEPTH):
            raise BehindCamera(f"camera-frame depth {np.min(z):.3g} <= {MIN_DEPTH}")
        return pix, z

    def rays_camera_frame(self, pixels) -> np.ndarray:
        """Camera-frame points at unit depth (z = 1) through ``pixels``."""
        pix = np.asarray(pixels, dtype=np.float64)
        x = (pix[..., 0] - self.cx) / self.fx
        y = (pix[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def unproject(self, pixels, depth) -> np.ndarray:
        """Cube-local points at camera-frame depth ``depth`` through ``pixels``."""
        pc = self.rays_camera_frame(pixels) * np.asarray(depth, dtype=np.float64)[..., None]
        return self.extrinsics.inverse().apply(pc)

    def pixel_grid(self) -> np.ndarray:
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return np.stack([u, v], axis=-1)

    def resampled(self, factor: int, offset: float | None = None) -> CameraModel:
        """Camera for a grid subsampled by ``factor``.

        Low-resolution pixel ``u'`` corresponds to full-resolution coordinate
        ``factor * u' + offset``. The default offset ``(factor - 1) / 2`` is the
        block-center convention used for area downsampling.
        """
        if offset is None:
            offset = (factor - 1) / 2.0
        return CameraModel(
            self.fx / factor,
            self.fy / factor,
            (self.cx - offset) / factor,
            (self.cy - offset) / factor,
            self.width // factor,
            self.height // factor,
            self.extrinsics,
        )

    def with_extrinsics(self, extrinsics: RigidTransform) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, extrinsics)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "extrinsics": self.extrinsics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraModel:
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]), RigidTransform.from_dict(d["extrinsics"]),
        )


@dataclass(frozen=True, eq=False)
class ScreenRect:
    """A physical display rectangle.

    Corners are given as seen by the viewer: ``top_left``, ``top_right``,
    ``bottom_left``; the fourth corner is implied but may be passed for
    validation.
    """

    top_left: np.ndarray
    top_right: np.ndarray
    bottom_left: np.ndarray
    width: int
    height: int
    bottom_right: np.ndarray | None = None

    def __post_init__(self):
        tl = _frozen(self.top_left, (3,))
        tr = _frozen(self.top_right, (3,))
        bl = _frozen(self.bottom_left, (3,))
        br = tr + bl - tl if self.bottom_right is None else _frozen(self.bottom_right, (3,))
        eu, ev = tr - tl, bl - tl
        if np.linalg.norm(eu) < 1e-9 or np.linalg.norm(ev) < 1e-9:
            raise ValueError("degenerate screen")
        n = normalize(np.cross(eu, ev))
        if abs(np.dot(br - tl, n)) > 1e-9:
            raise ValueError("screen corners are not coplanar")
        if abs(np.dot(normalize(eu), normalize(ev))) > 1e-9:
            raise ValueError("screen edges are not orthogonal")
        if np.abs(br - (tr + bl - tl)).max() > 1e-9:
            raise ValueError("screen corners do not form a rectangle")
        for name, val in (("top_left", tl), ("top_right", tr), ("bottom_left", bl), ("bottom_right", _frozen(br, (3,)))):
            object.__setattr__(self, name, val)

    @property
    def corners(self) -> np.ndarray:
        return np.stack([self.top_left, self.top_right, self.bottom_right, self.bottom_left])

    @property
    def u_axis(self) -> np.ndarray:
        return self.top_right - self.top_left

    @property
    def v_axis(self) -> np.ndarray:
        return self.bottom_left - self.top_left

    @property
    def normal(self) -> np.ndarray:
        """Unit normal, pointing toward a viewer who sees the screen upright."""
        return normalize(np.cross(self.v_axis, self.u_axis))

    @property
    def center(self) -> np.ndarray:
        return self.top_left + 0.5 * (self.u_axis + self.v_axis)

    def point_at(self, uv) -> np.ndarray:
        """3D point at continuous screen coordinates ``uv`` (last axis = 2)."""
        uv = np.asarray(uv, dtype=np.float64)
        return (
            self.top_left
            + (uv[..., 0:1] / self.width) * self.u_axis
            + (uv[..., 1:2] / self.height) * self.v_axis
        )

    def pixel_centers(self) -> np.ndarray:
        j, i = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return self.point_at(np.stack([i + 0.5, j + 0.5], axis=-1))

    def transformed(self, T: RigidTransform) -> ScreenRect:
        return ScreenRect(
            T.apply(self.top_left), T.apply(self.top_right), T.apply(self.bottom_left),
            self.width, self.height,
        )

    def to_dict(self) -> dict:
        return {
            "top_left": self.top_left.tolist(), "top_right": self.top_right.tolist(),
            "bottom_left": self.bottom_left.tolist(), "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScreenRect:
        return cls(np.array(d["top_left"]), np.array(d["top_right"]), np.array(d["bottom_left"]),
                   int(d["width"]), int(d["height"]))


def offaxis_view_projection(viewpoint, screen: ScreenRect) -> np.ndarray:
    """Projective 4x4 matrix mapping cube-local points to screen coordinates.

    Row 0 and 1 give ``u * w`` and ``v * w``, row 3 gives ``w`` (the signed
    distance of the point from the viewpoint along the screen normal). Row 2
    yields ``z / w = 1 - s`` where ``s`` is the fraction of the viewpoint-to-point
    segment at which the screen plane is crossed: 0 on the screen, positive
    behind it. ``w <= 0`` marks points behind the viewer.
    """
    E = np.asarray(viewpoint, dtype=np.float64)
    n = screen.normal
    tl = screen.top_left
    d = float(np.dot(tl - E, n))
    if abs(d) < 1e-6:
        raise DegenerateFrustum(f"viewpoint {abs(d):.3g} m from screen plane")
    su = screen.u_axis * (screen.width / np.dot(screen.u_axis, screen.u_axis))
    sv = screen.v_axis * (screen.height / np.dot(screen.v_axis, screen.v_axis))
    # Y - TL = [ (E - TL) (n.(X - E)) + d (X - E) ] / (n.(X - E))
    w_row = np.concatenate([n, [-np.dot(n, E)]])
    M = np.zeros((4, 4))
    for r, s in ((0, su), (1, sv)):
        a = np.dot(s, E - tl)  # scalar coefficient on n.(X - E)
        M[r, :3] = a * n + d * s
        M[r, 3] = -a * np.dot(n, E) - d * np.dot(s, E)
    M[3] = w_row
    M[2] = w_row - np.array([0.0, 0.0, 0.0, d])
    # w carries the sign of d so that points in front of the viewer have w > 0
    if d < 0:
        M = -M
    return M


def apply_projective(M: np.ndarray, points):
    """Apply a 4x4 projective map; returns ``(uv, z_over_w, w)``."""
    p = np.asarray(points, dtype=np.float64)
    h = p @ M[:, :3].T + M[:, 3]
    w = h[..., 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = h[..., :2] / w[..., None]
        z = h[..., 2] / w
    return uv, z, w
