"""Cubicle geometry and multi-cube assemblies on a shared floor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownCube
from .geometry import CameraModel, RigidTransform, ScreenRect, normalize

# Physical defaults (meters). Screen size is a 65-inch 16:9 panel.
FLOOR_WIDTH = 1.6
FLOOR_DEPTH = 2.0
SCREEN_BOTTOM = 0.7
SCREEN_DIAGONAL_IN = 65.0
SEAT = (0.0, 1.2, 1.0)
IMAGE_WIDTH = 1280
IMAGE_HEIGHT = 960
CAMERA_FOCAL = 900.0
CAMERA_MARGIN = 0.05
CAMERA_STANDOFF = 0.02

CAMERA_NAMES = ("top_left", "top_mid", "top_right", "bottom_left", "bottom_mid", "bottom_right")
TOPOLOGIES = ("face-to-face", "round-table", "side-by-side")


def screen_size(diagonal_in: float = SCREEN_DIAGONAL_IN, aspect=(16, 9)) -> tuple[float, float]:
    d = diagonal_in * 0.0254
    a, b = aspect
    k = d / math.hypot(a, b)
    return a * k, b * k


def default_screens(width_px: int = IMAGE_WIDTH, height_px: int = IMAGE_HEIGHT,
                    bottom: float = SCREEN_BOTTOM, diagonal_in: float = SCREEN_DIAGONAL_IN) -> dict[str, ScreenRect]:
    """Front screen in the plane Z = 0, side screens flush with its side edges."""
    sw, sh = screen_size(diagonal_in)
    x, top = sw / 2.0, bottom + sh
    front = ScreenRect((-x, top, 0.0), (x, top, 0.0), (-x, bottom, 0.0), width_px, height_px)
    left = ScreenRect((-x, top, sw), (-x, top, 0.0), (-x, bottom, sw), width_px, height_px)
    right = ScreenRect((x, top, 0.0), (x, top, sw), (x, bottom, 0.0), width_px, height_px)
    return {"front": front, "left": left, "right": right}


def default_cameras(front: ScreenRect, seat, focal: float = CAMERA_FOCAL,
                    width: int = IMAGE_WIDTH, height: int = IMAGE_HEIGHT,
                    margin: float = CAMERA_MARGIN, standoff: float = CAMERA_STANDOFF) -> tuple[CameraModel, ...]:
    """Six cameras on the front-screen border, all aimed at the seat point."""
    x = front.top_right[0] + margin
    top = front.top_left[1] + margin
    bottom = front.bottom_left[1] - margin
    positions = [
        (-x, top, standoff), (0.0, top, standoff), (x, top, standoff),
        (-x, bottom, standoff), (0.0, bottom, standoff), (x, bottom, standoff),
    ]
    return tuple(CameraModel.look_at(p, seat, focal, focal, width, height) for p in positions)


@dataclass(frozen=True, eq=False)
class CubeSpec:
    screens: dict
    cameras: tuple
    seat: np.ndarray = field(default_factory=lambda: np.array(SEAT))
    floor_width: float = FLOOR_WIDTH
    floor_depth: float = FLOOR_DEPTH

    def __post_init__(self):
        seat = np.array(self.seat, dtype=np.float64).reshape(3)
        seat.setflags(write=False)
        object.__setattr__(self, "seat", seat)
        object.__setattr__(self, "cameras", tuple(self.cameras))
        hw = self.floor_width / 2.0
        if not (-hw < seat[0] < hw and 0.0 < seat[2] < self.floor_depth):
            raise ValueError("seat lies outside the floor rectangle")
        for i, cam in enumerate(self.cameras):
            if np.dot(cam.optical_axis, seat - cam.center) <= 0:
                raise ValueError(f"camera {i} does not face the seat")

    @classmethod
    def default(cls, seat=SEAT, focal: float = CAMERA_FOCAL, width: int = IMAGE_WIDTH,
                height: int = IMAGE_HEIGHT) -> CubeSpec:
        screens = default_screens(width, height)
        return cls(screens, default_cameras(screens["front"], seat, focal, width, height), np.array(seat))

    def footprint(self) -> np.ndarray:
        """Floor rectangle as (x, z) polygon, counter-clockwise seen from above."""
        hw = self.floor_width / 2.0
        return np.array([[-hw, 0.0], [-hw, self.floor_depth], [hw, self.floor_depth], [hw, 0.0]])

    def footprint_3d(self) -> np.ndarray:
        fp = self.footprint()
        return np.stack([fp[:, 0], np.zeros(4), fp[:, 1]], axis=1)

    def to_dict(self) -> dict:
        return {
            "floor_width": self.floor_width, "floor_depth": self.floor_depth,
            "seat": self.seat.tolist(),
            "screens": {k: v.to_dict() for k, v in self.screens.items()},
            "cameras": [c.to_dict() for c in self.cameras],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CubeSpec:
        return cls(
            {k: ScreenRect.from_dict(v) for k, v in d["screens"].items()},
            tuple(CameraModel.from_dict(c) for c in d["cameras"]),
            np.array(d["seat"]), float(d["floor_width"]), float(d["floor_depth"]),
        )


@dataclass(frozen=True, eq=False)
class PlacedCube:
    cube_id: int
    spec: CubeSpec
    to_global: RigidTransform


@dataclass(frozen=True, eq=False)
class AssemblyLayout:
    cubes: tuple
    topology: str = "face-to-face"

    def __post_init__(self):
        object.__setattr__(self, "cubes", tuple(self.cubes))
        ids = [c.cube_id for c in self.cubes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cube ids")

    @property
    def ids(self) -> list[int]:
        return [c.cube_id for c in self.cubes]

    def cube(self, cube_id: int) -> PlacedCube:
        for c in self.cubes:
            if c.cube_id == cube_id:
                return c
        raise UnknownCube(cube_id)

    @classmethod
    def face_to_face(cls, gap: float = 0.0, spec: CubeSpec | None = None) -> AssemblyLayout:
        """Two cubes whose front walls face each other ``gap`` meters apart."""
        spec = spec or CubeSpec.default()
        return cls((
            PlacedCube(0, spec, RigidTransform.identity()),
            PlacedCube(1, spec, RigidTransform.from_yaw(math.pi, (0.0, 0.0, -gap))),
        ), "face-to-face")

    @classmethod
    def side_by_side(cls, overlap: float = 0.4, spec: CubeSpec | None = None) -> AssemblyLayout:
        """Two parallel cubes sharing a side wall region of width ``overlap``."""
        spec = spec or CubeSpec.default()
        return cls((
            PlacedCube(0, spec, RigidTransform.identity()),
            PlacedCube(1, spec, RigidTransform(np.eye(3), (spec.floor_width - overlap, 0.0, 0.0))),
        ), "side-by-side")

    @classmethod
    def round_table(cls, count: int = 3, radius: float = 0.5, spec: CubeSpec | None = None) -> AssemblyLayout:
        """Cubes spaced evenly around a center, front walls ``radius`` from it."""
        spec = spec or CubeSpec.default()
        cubes = []
        for i in range(count):
            yaw = 2.0 * math.pi * i / count
            R = RigidTransform.from_yaw(yaw).rotation
            cubes.append(PlacedCube(i, spec, RigidTransform(R, R @ np.array([0.0, 0.0, radius]))))
        return cls(tuple(cubes), "round-table")

    @classmethod
    def build(cls, topology: str, **kw) -> AssemblyLayout:
        ctor = {"face-to-face": cls.face_to_face, "round-table": cls.round_table,
                "side-by-side": cls.side_by_side}.get(topology)
        if ctor is None:
            raise ValueError(f"unknown topology {topology!r}")
        return ctor(**kw)


def cube_to_global(layout: AssemblyLayout, cube: int, point) -> np.ndarray:
    return layout.cube(cube).to_global.apply(point)


def global_to_cube(layout: AssemblyLayout, cube: int, point) -> np.ndarray:
    return layout.cube(cube).to_global.inverse().apply(point)


def transfer_transform(layout: AssemblyLayout, sender: int, receiver: int) -> RigidTransform:
    """Receiver-local to sender-local: M_sender^-1 * M_receiver."""
    return layout.cube(sender).to_global.inverse().compose(layout.cube(receiver).to_global)


def viewpoint_transfer(layout: AssemblyLayout, sender: int, receiver: int, viewpoint) -> np.ndarray:
    return transfer_transform(layout, sender, receiver).apply(viewpoint)


def camera_angles(spec: CubeSpec, viewpoint) -> np.ndarray:
    """Angle between each camera's ray to the seat and the viewpoint's ray to the seat."""
    seat = spec.seat
    target = normalize(seat - np.asarray(viewpoint, dtype=np.float64))
    rays = normalize(np.stack([seat - c.center for c in spec.cameras]))
    return np.arccos(np.clip(rays @ target, -1.0, 1.0))


def select_input_cameras(spec: CubeSpec, viewpoint, count: int = 4) -> list[int]:
    ang = np.round(camera_angles(spec, viewpoint), 12)
    ids = np.arange(len(ang))
    order = np.lexsort((ids, ang))
    return [int(i) for i in order[:count]]


@dataclass(frozen=True)
class Violation:
    rule: str
    cube_a: int
    cube_b: int | None
    detail: str


def point_in_convex_polygon(point, polygon) -> bool:
    """Inside-or-on-boundary test for a convex polygon with consistent winding."""
    p = np.asarray(point, dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    e = np.roll(poly, -1, axis=0) - poly
    r = p - poly
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    return bool(np.all(cross >= -1e-12) or np.all(cross <= 1e-12))


def global_footprint(placed: PlacedCube) -> np.ndarray:
    g = placed.to_global.apply(placed.spec.footprint_3d())
    return g[:, [0, 2]]


def validate_layout(layout: AssemblyLayout, tol: float = 1e-9) -> list[Violation]:
    out: list[Violation] = []
    up = np.array([0.0, 1.0, 0.0])
    for c in layout.cubes:
        R, t = c.to_global.rotation, c.to_global.translation
        if np.abs(R @ up - up).max() > tol or np.abs(R.T @ up - up).max() > tol:
            out.append(Violation("floor-yaw-only", c.cube_id, None, "rotation is not a pure yaw"))
        if abs(t[1]) > tol:
            out.append(Violation("floor-shared", c.cube_id, None, f"translation y = {t[1]:.6g}"))
    for a in layout.cubes:
        seat = a.to_global.apply(a.spec.seat)
        for b in layout.cubes:
            if a.cube_id == b.cube_id:
                continue
            if point_in_convex_polygon(seat[[0, 2]], global_footprint(b)):
                out.append(Violation("seat-overlap", a.cube_id, b.cube_id,
                                     f"seat of cube {a.cube_id} lies inside cube {b.cube_id}"))
    return out
