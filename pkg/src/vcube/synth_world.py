"""Synthetic stand-in for the capture rig.

A seated, non-human figure (sphere head, ellipsoid torso, capsule arms) inside
a box room with a gray back wall, rendered through the triangle rasterizer to
RGBD frames with configurable sensor noise. Background subtraction follows the
depth-or-color threshold rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .geometry import CameraModel, RigidTransform, normalize
from .raster import rasterize

TABLE_HEIGHT = 0.7
MIN_VALID_DEPTH = 0.1
MAX_VALID_DEPTH = 10.0

LEFT_MARKER_COLOR = (255.0, 0.0, 255.0)
RIGHT_MARKER_COLOR = (0.0, 255.0, 255.0)

# RNG stream tags, combined with (seed, camera id, frame index)
_STREAM_CAPTURE, _STREAM_BACKGROUND, _STREAM_EXTRINSIC = 0, 1, 2


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None


def grid_faces(n_rows: int, n_cols: int) -> np.ndarray:
    """Two triangles per cell of an (n_rows + 1) x (n_cols + 1) vertex grid."""
    r, c = np.mgrid[0:n_rows, 0:n_cols]
    a = (r * (n_cols + 1) + c).ravel()
    b, d = a + 1, a + n_cols + 1
    e = d + 1
    return np.concatenate([np.stack([a, d, b], 1), np.stack([b, d, e], 1)]).astype(np.int64)


def revolve(profile_r: np.ndarray, profile_y: np.ndarray, normals_ry: np.ndarray, segments: int) -> Mesh:
    """Surface of revolution about +Y from a (radius, height) profile."""
    phi = np.linspace(0.0, 2.0 * np.pi, segments + 1)
    cp, sp = np.cos(phi)[None, :], np.sin(phi)[None, :]
    r, y = profile_r[:, None], profile_y[:, None]
    verts = np.stack([r * cp, np.broadcast_to(y, (len(profile_r), segments + 1)), r * sp], -1)
    nr, ny = normals_ry[:, 0:1], normals_ry[:, 1:2]
    norms = np.stack([nr * cp, np.broadcast_to(ny, (len(profile_r), segments + 1)), nr * sp], -1)
    return Mesh(verts.reshape(-1, 3), grid_faces(len(profile_r) - 1, segments), normalize(norms.reshape(-1, 3)))


def _sag_offset(theta: np.ndarray, d_theta: float, d_phi: float) -> np.ndarray:
    """Radial scale that centers the chord-sag error of a tessellated sphere on zero.

    Facets sit inside the true surface by up to (dθ² + sin²θ·dφ²)/8 of the
    radius at a cell center; pushing vertices out by half that balances the
    inward and outward deviation.
    """
    return 1.0 + (d_theta ** 2 + np.sin(theta) ** 2 * d_phi ** 2) / 16.0


def ellipsoid_mesh(radii, segments: int = 192, rings: int = 96) -> Mesh:
    theta = np.linspace(0.0, np.pi, rings + 1)
    grow = _sag_offset(theta, np.pi / rings, 2.0 * np.pi / segments)
    unit = revolve(np.sin(theta), np.cos(theta), np.stack([np.sin(theta), np.cos(theta)], 1), segments)
    radii = np.asarray(radii, dtype=np.float64)
    n = normalize(unit.vertices / radii)
    v = unit.vertices * radii * np.repeat(grow, segments + 1)[:, None]
    return Mesh(v, unit.faces, n)


def sphere_mesh(radius: float, segments: int = 192, rings: int = 96) -> Mesh:
    return ellipsoid_mesh((radius, radius, radius), segments, rings)


def capsule_mesh(radius: float, length: float, segments: int = 96, cap_rings: int = 24, body_rings: int = 8) -> Mesh:
    """Capsule along +Y from y = 0 to y = length (segment endpoints), radius ``radius``."""
    t0 = np.linspace(np.pi, np.pi / 2, cap_rings + 1)  # bottom cap, angle from +Y
    t1 = np.linspace(np.pi / 2, 0.0, cap_rings + 1)
    ys = np.linspace(0.0, length, body_rings + 1)
    d_phi = 2.0 * np.pi / segments
    g0 = radius * _sag_offset(t0, np.pi / 2 / cap_rings, d_phi)
    g1 = radius * _sag_offset(t1, np.pi / 2 / cap_rings, d_phi)
    body = radius * (1.0 + d_phi ** 2 / 16.0)
    r = np.concatenate([g0 * np.sin(t0), np.full(body_rings - 1, body), g1 * np.sin(t1)])
    y = np.concatenate([g0 * np.cos(t0), ys[1:-1], length + g1 * np.cos(t1)])
    n = np.concatenate([
        np.stack([np.sin(t0), np.cos(t0)], 1),
        np.tile([1.0, 0.0], (body_rings - 1, 1)),
        np.stack([np.sin(t1), np.cos(t1)], 1),
    ])
    return revolve(r, y, n, segments)


def quad_mesh(p0, p1, p2, p3) -> Mesh:
    v = np.array([p0, p1, p2, p3], dtype=np.float64)
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64))


def segment_frame(a, b) -> RigidTransform:
    """Rigid transform taking +Y (from the origin) onto the segment a -> b."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    y = normalize(b - a)
    ref = np.array([0.0, 0.0, 1.0]) if abs(y[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = normalize(np.cross(y, ref))
    z = np.cross(x, y)
    return RigidTransform(np.stack([x, y, z], axis=1), a)


_CHECKER_ROTATIONS = tuple(
    RigidTransform.from_rotvec(v).rotation
    for v in np.random.default_rng(20240).normal(0.0, 1.5, (8, 3))
)


def smooth_checker(p: np.ndarray, periods=(0.029, 0.041, 0.057, 0.083)) -> np.ndarray:
    """Band-limited checker pattern in [-1, 1].

    Each octave is a product of three sines (a checker without hard edges) in a
    rotated frame; octaves use incommensurate periods so that the sum does not
    repeat at any single spatial frequency, which would make stereo matching
    ambiguous.
    """
    total = np.zeros(len(p))
    for j, P in enumerate(periods):
        q = p @ _CHECKER_ROTATIONS[j % len(_CHECKER_ROTATIONS)].T
        total += np.prod(np.sin(2.0 * np.pi * q / P), axis=1)
    return np.clip(total / np.sqrt(len(periods)) * 1.5, -1.0, 1.0) if len(periods) else total


@dataclass(frozen=True, eq=False)
class Part:
    """One rigid body part: mesh in part-local coordinates plus its appearance."""

    name: str
    kind: str  # "ellipsoid" | "capsule" | "panel"
    params: dict
    mesh: Mesh
    rest_pose: RigidTransform
    base_color: tuple
    accent_color: tuple
    pivot: np.ndarray  # cube-local point the animation rotates about
    sway: tuple  # (yaw, pitch, roll) amplitudes in radians
    phase: float = 0.0


@dataclass(frozen=True)
class Room:
    half_width: float = 0.8
    depth: float = 2.0
    height: float = 2.5
    back_color: tuple = (128.0, 128.0, 128.0)
    side_color: tuple = (235.0, 235.0, 235.0)
    floor_color: tuple = (95.0, 90.0, 85.0)
    ceiling_color: tuple = (220.0, 220.0, 220.0)
    front_color: tuple = (30.0, 30.0, 30.0)

    def quads(self):
        w, d, h = self.half_width, self.depth, self.height
        return [
            (quad_mesh((-w, 0, d), (w, 0, d), (w, h, d), (-w, h, d)), self.back_color),
            (quad_mesh((-w, 0, 0), (-w, 0, d), (-w, h, d), (-w, h, 0)), self.side_color),
            (quad_mesh((w, 0, 0), (w, h, 0), (w, h, d), (w, 0, d)), self.side_color),
            (quad_mesh((-w, 0, 0), (w, 0, 0), (w, 0, d), (-w, 0, d)), self.floor_color),
            (quad_mesh((-w, h, 0), (-w, h, d), (w, h, d), (w, h, 0)), self.ceiling_color),
            (quad_mesh((-w, 0, 0), (-w, h, 0), (w, h, 0), (w, 0, 0)), self.front_color),
        ]


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    parts: tuple
    eye_offset: float = 0.032  # half inter-ocular distance (m)
    marker_radius: float = 0.012
    light_dir: np.ndarray = field(default_factory=lambda: normalize(np.array([0.3, 0.5, -1.0])))
    ambient: float = 0.45
    texture_periods: tuple = (0.035, 0.05, 0.07, 0.1)
    texture_contrast: float = 0.4
    period_frames: float = 90.0
    room: Room = field(default_factory=Room)

    @classmethod
    def default(cls, seat=(0.0, 1.2, 1.0), variant: int = 0, animate: bool = True, detail: float = 1.0,
                **kw) -> SyntheticScene:
        """Seated figure whose head center is at ``seat``.

        ``variant`` changes shirt color and animation phase so that several
        cubes are distinguishable; ``detail`` scales tessellation density.
        """
        sx, sy, sz = seat
        seg = lambda n: max(8, int(round(n * detail)))  # noqa: E731
        shirts = [(150.0, 40.0, 45.0), (40.0, 110.0, 60.0), (160.0, 110.0, 30.0), (90.0, 60.0, 150.0)]
        shirt = shirts[variant % len(shirts)]
        a = 1.0 if animate else 0.0
        phase = 0.7 * variant
        head_r = 0.1
        parts = [
            Part("head", "ellipsoid", {"radii": [head_r] * 3}, sphere_mesh(head_r, seg(192), seg(96)),
                 RigidTransform(np.eye(3), (sx, sy, sz)), (205.0, 155.0, 120.0), (175.0, 120.0, 95.0),
                 np.array([sx, sy - 0.1, sz]), (0.06 * a, 0.03 * a, 0.02 * a), phase),
            Part("torso", "ellipsoid", {"radii": [0.18, 0.24, 0.11]}, ellipsoid_mesh((0.18, 0.24, 0.11), seg(256), seg(128)),
                 RigidTransform(np.eye(3), (sx, sy - 0.3, sz + 0.04)), shirt, tuple(0.6 * np.array(shirt)),
                 np.array([sx, sy - 0.55, sz + 0.04]), (0.02 * a, 0.015 * a, 0.0), phase),
        ]
        for side, name in ((-1.0, "left_arm"), (1.0, "right_arm")):
            shoulder = np.array([sx + side * 0.19, sy - 0.14, sz + 0.02])
            hand = np.array([sx + side * 0.16, sy - 0.44, sz - 0.22])
            length = float(np.linalg.norm(hand - shoulder))
            parts.append(Part(
                name, "capsule", {"radius": 0.04, "length": length},
                capsule_mesh(0.04, length, seg(96), seg(24)),
                segment_frame(shoulder, hand), (200.0, 150.0, 115.0), tuple(0.6 * np.array(shirt)),
                shoulder, (0.0, 0.12 * a, 0.0), phase + 1.0 + side,
            ))
        return cls(tuple(parts), **kw)

    @classmethod
    def panel(cls, center=(0.0, 1.05, 1.0), size=(0.6, 0.5), yaw: float = 0.0, pitch: float = 0.0,
              color=(190.0, 150.0, 110.0), **kw) -> SyntheticScene:
        """A single flat textured board facing the front screen (a plane with known depth)."""
        w, h = size
        mesh = Mesh(np.array([[-w / 2, -h / 2, 0.0], [w / 2, -h / 2, 0.0], [w / 2, h / 2, 0.0], [-w / 2, h / 2, 0.0]]),
                    np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64), np.tile([0.0, 0.0, -1.0], (4, 1)))
        pose = RigidTransform.from_rotvec((pitch, yaw, 0.0), center)
        part = Part("panel", "panel", {"size": [w, h], "radii": [w / 2, h / 2, 0.0]}, mesh, pose, tuple(color),
                    tuple(0.6 * np.asarray(color)), np.asarray(center, dtype=np.float64), (0.0, 0.0, 0.0))
        return cls((part,), **kw)

    def part_index(self, name: str) -> int:
        return [p.name for p in self.parts].index(name)

    def part_pose(self, index: int, frame: int) -> RigidTransform:
        """Part-local to cube-local transform at ``frame``."""
        part = self.parts[index]
        s = math.sin(2.0 * math.pi * frame / self.period_frames + part.phase) if self.period_frames else 0.0
        s -= math.sin(part.phase)  # frame 0 is the rest pose
        yaw, pitch, roll = (amp * s for amp in part.sway)
        if yaw == 0.0 and pitch == 0.0 and roll == 0.0:
            return part.rest_pose
        R = RigidTransform.from_rotvec((pitch, yaw, roll))
        about_pivot = RigidTransform(R.rotation, part.pivot - R.rotation @ part.pivot)
        return about_pivot.compose(part.rest_pose)

    def eye_markers_local(self) -> np.ndarray:
        """Eye markers in head-local coordinates, the -X eye first.

        The face points toward -Z, i.e. at the front screen.
        """
        if "head" not in [p.name for p in self.parts]:
            raise ValueError("scene has no head")
        r = self.parts[self.part_index("head")].params["radii"][0]
        e = self.eye_offset
        z = -math.sqrt(r * r - e * e)
        return np.array([[-e, 0.0, z], [e, 0.0, z]])

    def eye_markers(self, frame: int = 0) -> np.ndarray:
        return self.part_pose(self.part_index("head"), frame).apply(self.eye_markers_local())

    def eye_midpoint(self, frame: int = 0) -> np.ndarray:
        return self.eye_markers(frame).mean(axis=0)

    def assembled(self, frame: int = 0, include_figure: bool = True, include_room: bool = True):
        """Single mesh of the scene at ``frame`` with per-vertex part-local coordinates."""
        verts, norms, local, faces, face_part = [], [], [], [], []
        offset = 0
        if include_figure:
            for i, part in enumerate(self.parts):
                pose = self.part_pose(i, frame)
                m = part.mesh
                verts.append(pose.apply(m.vertices))
                norms.append(pose.apply_direction(m.normals))
                local.append(m.vertices)
                faces.append(m.faces + offset)
                face_part.append(np.full(len(m.faces), i))
                offset += len(m.vertices)
        if include_room:
            for j, (q, _) in enumerate(self.room.quads()):
                verts.append(q.vertices)
                norms.append(np.zeros_like(q.vertices))
                local.append(q.vertices)
                faces.append(q.faces + offset)
                face_part.append(np.full(len(q.faces), len(self.parts) + j))
                offset += len(q.vertices)
        if not verts:
            z = np.zeros((0, 3))
            return z, z, z, np.zeros((0, 3), np.int64), np.zeros(0, np.int64)
        return (np.concatenate(verts), np.concatenate(norms), np.concatenate(local),
                np.concatenate(faces), np.concatenate(face_part))

    def albedo(self, index: int, p_local: np.ndarray) -> np.ndarray:
        part = self.parts[index]
        s = smooth_checker(p_local, self.texture_periods)
        if part.kind == "capsule":
            t = np.clip(p_local[:, 1] / max(part.params["length"], 1e-9), 0.0, 1.0)
        else:
            ry = part.params["radii"][1]
            t = np.clip(0.5 - 0.5 * p_local[:, 1] / ry, 0.0, 1.0)
        base = np.asarray(part.base_color)[None, :]
        accent = np.asarray(part.accent_color)[None, :]
        col = (1.0 - t)[:, None] * base + t[:, None] * accent
        return col * (1.0 + self.texture_contrast * s)[:, None]


@dataclass(frozen=True)
class NoiseModel:
    depth_std: float = 0.02
    dropout: float = 0.02
    color_std: float = 2.0
    extrinsic_rot_mrad: float = 0.0
    extrinsic_trans_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("depth_std", "color_std", "extrinsic_rot_mrad", "extrinsic_trans_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")

    @classmethod
    def zero(cls, seed: int = 0) -> NoiseModel:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)

    @property
    def noiseless_capture(self) -> bool:
        """True when repeated captures of a static scene are identical."""
        return self.depth_std == 0 and self.dropout == 0 and self.color_std == 0


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 meters, 0 = invalid
    camera_id: int
    frame_index: int
    timestamp_ms: float

    def __post_init__(self):
        if self.color.shape[:2] != self.depth.shape or self.color.shape[2:] != (3,):
            raise DimensionMismatch("color/depth shape mismatch")
        if self.color.dtype != np.uint8:
            raise TypeError("color must be uint8")
        valid = self.depth > 0
        if np.any((self.depth[valid] <= MIN_VALID_DEPTH) | (self.depth[valid] >= MAX_VALID_DEPTH)):
            raise ValueError("valid depths must lie in (0.1, 10.0) m")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class SceneRender:
    """Noise-free render buffers."""

    color: np.ndarray  # (H, W, 3) float in [0, 255]
    depth: np.ndarray  # (H, W) camera-frame z, 0 where empty
    part: np.ndarray  # (H, W) int: part index, parts..parts+5 room quads, -1 empty
    n_parts: int
    surface: np.ndarray  # (H, W, 3) cube-local surface point

    @property
    def figure_mask(self) -> np.ndarray:
        return (self.part >= 0) & (self.part < self.n_parts)


def render_scene(scene: SyntheticScene, cam: CameraModel, frame_index: int = 0,
                 include_figure: bool = True, include_room: bool = True) -> SceneRender:
    verts, norms, local, faces, face_part = scene.assembled(frame_index, include_figure, include_room)
    rr = rasterize(verts, faces, cam)
    H, W = cam.shape
    part = np.full((H, W), -1, dtype=np.int64)
    covered = rr.mask
    part[covered] = face_part[rr.face[covered]]
    p_local = rr.interpolate(faces, local)
    surface = rr.interpolate(faces, verts)
    normal = rr.interpolate(faces, norms)
    color = np.zeros((H, W, 3))
    n_parts = len(scene.parts)
    for i in range(n_parts):
        m = part == i
        if not m.any():
            continue
        alb = scene.albedo(i, p_local[m])
        n = normalize(normal[m])
        shade = scene.ambient + (1.0 - scene.ambient) * np.clip(n @ scene.light_dir, 0.0, None)
        color[m] = alb * shade[:, None]
    if include_figure and any(p.name == "head" for p in scene.parts):
        head = scene.part_index("head")
        m = part == head
        if m.any():
            pl = p_local[m]
            col = color[m]
            for marker, mcol in zip(scene.eye_markers_local(), (LEFT_MARKER_COLOR, RIGHT_MARKER_COLOR)):
                hit = np.linalg.norm(pl - marker, axis=1) <= scene.marker_radius
                col[hit] = mcol
            color[m] = col
    for j, (_, qcol) in enumerate(scene.room.quads() if include_room else []):
        color[part == n_parts + j] = qcol
    return SceneRender(np.clip(color, 0.0, 255.0), rr.depth, part, n_parts, surface)


def _rng(noise: NoiseModel, camera_id: int, stream: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([noise.seed, camera_id, stream, max(frame_index, 0)])


def perturbed_camera(cam: CameraModel, noise: NoiseModel, camera_id: int) -> CameraModel:
    """The physically true camera, offset from the nominal calibration by the noise model."""
    if noise.extrinsic_rot_mrad == 0 and noise.extrinsic_trans_mm == 0:
        return cam
    rng = _rng(noise, camera_id, _STREAM_EXTRINSIC, 0)
    rot = rng.normal(0.0, noise.extrinsic_rot_mrad * 1e-3, 3)
    trans = rng.normal(0.0, noise.extrinsic_trans_mm * 1e-3, 3)
    return cam.with_extrinsics(RigidTransform.from_rotvec(rot, trans).compose(cam.extrinsics))


def corrupt(render: SceneRender, noise: NoiseModel, camera_id: int, frame_index: int, stream: int,
            fps: float = 30.0) -> RgbdFrame:
    rng = _rng(noise, camera_id, stream, frame_index)
    H, W = render.depth.shape
    depth = render.depth.copy()
    valid = depth > 0
    if noise.depth_std > 0:
        depth[valid] += noise.depth_std * rng.standard_normal(int(valid.sum()), dtype=np.float32)
    if noise.dropout > 0:
        depth[rng.random((H, W), dtype=np.float32) < noise.dropout] = 0.0
    depth[(depth <= MIN_VALID_DEPTH) | (depth >= MAX_VALID_DEPTH)] = 0.0
    color = render.color.astype(np.float32)
    if noise.color_std > 0:
        color += np.float32(noise.color_std) * rng.standard_normal(color.shape, dtype=np.float32)
    color = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return RgbdFrame(color, depth, camera_id, frame_index, 1000.0 * frame_index / fps)


def render_rgbd(scene: SyntheticScene, cam: CameraModel, noise: NoiseModel, camera_id: int = 0,
                frame_index: int = 0, fps: float = 30.0) -> RgbdFrame:
    """Capture one RGBD frame: rasterize, then apply depth/color noise and dropout."""
    true_cam = perturbed_camera(cam, noise, camera_id)
    return corrupt(render_scene(scene, true_cam, frame_index), noise, camera_id, frame_index,
                   _STREAM_CAPTURE, fps)


def render_background(scene: SyntheticScene, cam: CameraModel, noise: NoiseModel, camera_id: int = 0,
                      captures: int = 8) -> RgbdFrame:
    """Empty-room plate taken before the participant sits down.

    Averages ``captures`` noisy frames: depth over the valid samples (0 only if
    every sample dropped out), color per channel, rounded.
    """
    true_cam = perturbed_camera(cam, noise, camera_id)
    clean = render_scene(scene, true_cam, 0, include_figure=False)
    captures = 1 if noise.noiseless_capture else max(captures, 1)
    shots = [corrupt(clean, noise, camera_id, k, _STREAM_BACKGROUND) for k in range(captures)]
    depth = np.stack([f.depth for f in shots])
    n = (depth > 0).sum(axis=0)
    mean_depth = np.where(n > 0, depth.sum(axis=0) / np.maximum(n, 1), 0.0)
    color = np.rint(np.mean([f.color.astype(np.float64) for f in shots], axis=0)).astype(np.uint8)
    return RgbdFrame(color, mean_depth, camera_id, 0, 0.0)


def gray(color: np.ndarray) -> np.ndarray:
    c = color.astype(np.float64)
    return np.rint(0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2])


def segment_foreground(frame: RgbdFrame, background: RgbdFrame, depth_thresh: float = 0.10,
                       color_thresh: float = 30.0) -> np.ndarray:
    """Foreground where depth or gray level differs from the background capture.

    Where either depth is missing the depth test is skipped and only the color
    test applies.
    """
    if frame.shape != background.shape:
        raise DimensionMismatch(f"{frame.shape} vs {background.shape}")
    both = (frame.depth > 0) & (background.depth > 0)
    depth_fg = both & (np.abs(frame.depth - background.depth) > depth_thresh)
    color_fg = np.abs(gray(frame.color) - gray(background.color)) > color_thresh
    return depth_fg | color_fg


def apply_mask(frame: RgbdFrame, mask: np.ndarray) -> RgbdFrame:
    color = np.where(mask[..., None], frame.color, 0).astype(np.uint8)
    depth = np.where(mask, frame.depth, 0.0)
    return RgbdFrame(color, depth, frame.camera_id, frame.frame_index, frame.timestamp_ms)
