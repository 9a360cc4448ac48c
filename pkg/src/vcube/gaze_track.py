"""Viewpoint tracking: 2D eye observations lifted to 3D by linear triangulation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import CameraModel
from .synth_world import SyntheticScene

_STREAM_DETECTOR = 3


@dataclass(frozen=True, eq=False)
class EyeObservation:
    camera_id: int
    left: np.ndarray | None
    right: np.ndarray | None
    frame_index: int = 0

    def eye(self, which: int) -> np.ndarray | None:
        return self.left if which == 0 else self.right


@dataclass(frozen=True, eq=False)
class Viewpoint:
    position: np.ndarray
    frame_index: int = 0
    valid: bool = True


@dataclass(frozen=True)
class CubeVolume:
    """Axis-aligned interior of a cube in its local frame."""

    half_width: float = 0.8
    depth: float = 2.0
    height: float = 2.5

    def contains(self, p) -> bool:
        x, y, z = np.asarray(p, dtype=np.float64)
        return bool(abs(x) <= self.half_width and 0.0 <= y <= self.height and 0.0 <= z <= self.depth)


def _inside(cam: CameraModel, pix: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(pix)) and 0.0 <= pix[0] <= cam.width - 1 and 0.0 <= pix[1] <= cam.height - 1)


def observe_eyes(scene: SyntheticScene, cam: CameraModel, detector_noise_px: float = 0.0,
                 occluded: bool = False, camera_id: int = 0, frame_index: int = 0,
                 seed: int = 0, rng: np.random.Generator | None = None) -> EyeObservation:
    """Synthetic eye detector: projected markers plus isotropic Gaussian pixel noise.

    An occluded camera reports nothing; an eye that lands behind the camera or
    outside the image is reported absent.
    """
    if occluded:
        return EyeObservation(camera_id, None, None, frame_index)
    if rng is None:
        rng = np.random.default_rng([seed, camera_id, _STREAM_DETECTOR, frame_index])
    pix, z = cam.project_points(scene.eye_markers(frame_index))
    if detector_noise_px > 0:
        pix = pix + rng.normal(0.0, detector_noise_px, pix.shape)
    eyes = [p if (zi > 0 and _inside(cam, p)) else None for p, zi in zip(pix, z)]
    return EyeObservation(camera_id, eyes[0], eyes[1], frame_index)


def triangulate_point(pixels: Sequence[np.ndarray], projections: Sequence[np.ndarray]) -> np.ndarray:
    """Homogeneous DLT: two rows per view, solution is the smallest right singular vector.

    Each row is scaled to unit norm, which leaves the exact-data solution
    unchanged and improves conditioning.
    """
    rows = []
    for (u, v), P in zip(pixels, projections):
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.asarray(rows)
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(A)
    X = vt[-1]
    return X[:3] / X[3]


def triangulate(observations: Iterable[EyeObservation], cams, frame_index: int | None = None,
                volume: CubeVolume | None = None) -> Viewpoint:
    """Viewpoint = midpoint of the two independently triangulated eyes.

    ``cams`` maps camera id to ``CameraModel`` (a sequence indexed by id also
    works). The result is invalid if either eye has fewer than two
    observations or the midpoint falls outside ``volume``.
    """
    observations = list(observations)
    if frame_index is None:
        frame_index = observations[0].frame_index if observations else 0
    eyes = []
    for which in (0, 1):
        obs = sorted((o for o in observations if o.eye(which) is not None), key=lambda o: o.camera_id)
        if len(obs) < 2:
            return Viewpoint(np.full(3, np.nan), frame_index, False)
        eyes.append(triangulate_point([o.eye(which) for o in obs], [cams[o.camera_id].P for o in obs]))
    mid = 0.5 * (eyes[0] + eyes[1])
    valid = bool(np.all(np.isfinite(mid))) and (volume or CubeVolume()).contains(mid)
    return Viewpoint(mid, frame_index, valid)


def track(scene: SyntheticScene, cams: Sequence[CameraModel], frame_index: int,
          detector_noise_px: float = 0.0, occlusion: Sequence[bool] | None = None, seed: int = 0) -> Viewpoint:
    occlusion = occlusion or [False] * len(cams)
    obs = [observe_eyes(scene, c, detector_noise_px, occ, i, frame_index, seed)
           for i, (c, occ) in enumerate(zip(cams, occlusion))]
    return triangulate(obs, cams, frame_index)


def write_viewpoints_csv(path, viewpoints: Iterable[Viewpoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "z", "valid"])
        for vp in viewpoints:
            x, y, z = (float(c) for c in vp.position)
            w.writerow([vp.frame_index, repr(x), repr(y), repr(z), int(vp.valid)])


def read_viewpoints_csv(path) -> list[Viewpoint]:
    with open(path, newline="") as fh:
        return [
            Viewpoint(np.array([float(r["x"]), float(r["y"]), float(r["z"])]), int(r["frame"]), r["valid"] == "1")
            for r in csv.DictReader(fh)
        ]
